"""Level-set thresholding of relaxed labels, contours and iteration/level sweeps."""

from dataclasses import replace

import numpy as np

from .field import as_scalar_field
from .solver import SolverConfig, solve


def as_mask(values, name="mask"):
    m = np.asarray(values)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return m.astype(np.uint8)


# values this close to the level count as ties; the solver can leave a flat
# optimum at its 0.5 start up to round-off
TIE_TOL = 1e-12


def threshold(lam, level=0.5):
    """Foreground where ``lam >= level``; ties (within ``TIE_TOL``) go to foreground."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must lie in [0, 1], got {level}")
    return (as_scalar_field(lam, "lam") >= level - TIE_TOL).astype(np.uint8)


def boundary_map(mask):
    """Foreground pixels touching background (4-neighbourhood) or the image border."""
    m = as_mask(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def extract_contour(mask):
    """Boundary pixels as a list of ``(row, col)`` tuples in row-major order."""
    rows, cols = np.nonzero(boundary_map(mask))
    return list(zip(rows.tolist(), cols.tolist()))


def sweep(caps, cfg, iteration_checkpoints, levels):
    """Threshold intermediate solver iterates at several levels.

    Runs a single solve of ``max(iteration_checkpoints)`` sweeps (bounded by
    ``cfg.iterations``) and returns ``(iteration, level, mask)`` triples ordered
    by checkpoint, then by level. Snapshots are clipped to [0, 1] like the
    final output of :func:`flowseg.solver.solve`.
    """
    checkpoints = [int(k) for k in iteration_checkpoints]
    if not checkpoints:
        raise ValueError("at least one checkpoint is required")
    if checkpoints != sorted(checkpoints) or checkpoints[0] < 1:
        raise ValueError("checkpoints must be positive and sorted ascending")
    if checkpoints[-1] > cfg.iterations:
        raise ValueError(
            f"checkpoint {checkpoints[-1]} exceeds the iteration budget {cfg.iterations}"
        )
    run_cfg = replace(cfg, iterations=checkpoints[-1], record_trajectory=True, early_stop_tol=0.0)
    trajectory = solve(caps, run_cfg).trajectory
    out = []
    for k in checkpoints:
        lam = trajectory[k - 1]
        if cfg.clamp_lambda_final:
            lam = np.clip(lam, 0.0, 1.0)
        for level in levels:
            out.append((k, float(level), threshold(lam, level)))
    return out


__all__ = ["SolverConfig", "as_mask", "boundary_map", "extract_contour", "sweep", "threshold"]
