import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


import numpy as np
import pytest


@pytest.fixture(scope="session")
def noisy_sample():
    from flowseg.synthdata import SynthConfig, make_sample

    return make_sample(SynthConfig(count=1), 0)


@pytest.fixture(scope="session")
def synthetic_caps(noisy_sample):
    """Hand-crafted 64x64 capacities from a noisy synthetic sample (Flair channel)."""
    from flowseg.capnet import HandcraftedParams, handcrafted_caps

    img = noisy_sample.raw_image
    wt = noisy_sample.labels[0].astype(bool)
    ch = 2
    params = HandcraftedParams(
        fg_mean=float(img[ch][wt].mean()), bg_mean=float(img[ch][~wt].mean()), channel_index=ch
    )
    return handcrafted_caps(img, params)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {num}: {detail}")
