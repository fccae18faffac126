"""Seeded synthetic 4-channel images with three nested elliptical regions."""

from dataclasses import dataclass, field

import numpy as np

from .capnet import standardize

# rows: background, WT ring, TC ring, EC core; columns: T1, T2, Flair, T1c
DEFAULT_INTENSITIES = (
    (0.20, 0.20, 0.20, 0.20),
    (0.30, 0.80, 0.90, 0.30),
    (0.05, 0.55, 0.45, 0.45),
    (0.50, 0.45, 0.65, 1.00),
)


@dataclass(frozen=True)
class SynthConfig:
    count: int = 200
    height: int = 64
    width: int = 64
    noise_sigma: float = 0.1
    intensities: tuple = DEFAULT_INTENSITIES
    # whole-tumour semi-axis range in pixels
    wt_axis_range: tuple = (10.0, 22.0)
    # semi-axis ratio of each inner region to its parent
    tc_scale_range: tuple = (0.55, 0.8)
    ec_scale_range: tuple = (0.45, 0.75)
    eccentricity_range: tuple = (0.6, 1.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "intensities", tuple(tuple(float(v) for v in row) for row in self.intensities)
        )
        for name in ("wt_axis_range", "tc_scale_range", "ec_scale_range", "eccentricity_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if self.height % 8 or self.width % 8 or self.height < 8 or self.width < 8:
            raise ValueError("height and width must be positive multiples of 8")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        table = np.asarray(self.intensities)
        if table.shape != (4, 4):
            raise ValueError("intensities must be a 4x4 table (region x channel)")

    def min_separation(self):
        """Smallest max-over-channels intensity gap between any two regions."""
        t = np.asarray(self.intensities)
        return min(
            np.abs(t[i] - t[j]).max() for i in range(4) for j in range(i + 1, 4)
        )


@dataclass
class Sample:
    image: np.ndarray
    labels: tuple  # (WT, TC, EC) uint8 masks
    raw_image: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.labels = tuple(np.asarray(m, dtype=np.uint8) for m in self.labels)
        if len(self.labels) != 3:
            raise ValueError("a sample carries exactly three masks (WT, TC, EC)")
        for m in self.labels:
            if m.shape != self.image.shape[1:]:
                raise ValueError("mask shape does not match the image")
        wt, tc, ec = self.labels
        if np.any(tc > wt) or np.any(ec > tc):
            raise ValueError("masks must be nested: EC <= TC <= WT")


def _ellipse(shape, cy, cx, a, b, theta):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def _draw_geometry(cfg, rng):
    h, w = cfg.height, cfg.width
    for _ in range(100):
        a = rng.uniform(*cfg.wt_axis_range)
        b = a * rng.uniform(*cfg.eccentricity_range)
        theta = rng.uniform(0.0, np.pi)
        cy = rng.uniform(0.0, h - 1.0)
        cx = rng.uniform(0.0, w - 1.0)
        # axis-aligned half extents of the rotated ellipse
        ey = np.hypot(a * np.sin(theta), b * np.cos(theta))
        ex = np.hypot(a * np.cos(theta), b * np.sin(theta))
        if cy - ey >= 1 and cy + ey <= h - 2 and cx - ex >= 1 and cx + ex <= w - 2:
            return a, b, theta, cy, cx
    raise RuntimeError("could not place a whole-tumour ellipse inside the image after 100 tries")


def make_sample(cfg, index):
    """Sample ``index`` of the dataset, determined by ``(cfg.seed, index)`` only."""
    rng = np.random.default_rng([cfg.seed, index])
    a, b, theta, cy, cx = _draw_geometry(cfg, rng)
    s_tc = rng.uniform(*cfg.tc_scale_range)
    s_ec = s_tc * rng.uniform(*cfg.ec_scale_range)
    shape = (cfg.height, cfg.width)
    wt = _ellipse(shape, cy, cx, a, b, theta)
    tc = _ellipse(shape, cy, cx, a * s_tc, b * s_tc, theta) & wt
    ec = _ellipse(shape, cy, cx, a * s_ec, b * s_ec, theta) & tc

    region = wt.astype(int) + tc + ec  # 0 background .. 3 enhancing core
    table = np.asarray(cfg.intensities)
    raw = table[region].transpose(2, 0, 1)
    if cfg.noise_sigma > 0:
        raw = raw + cfg.noise_sigma * rng.standard_normal(raw.shape)
    return Sample(standardize(raw), (wt, tc, ec), raw_image=raw)


def generate(cfg=SynthConfig()):
    return [make_sample(cfg, i) for i in range(cfg.count)]


def split(dataset, train_fraction=0.8, seed=0):
    """Seeded shuffle followed by a prefix split into ``(train, test)``."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"a {train_fraction} split of {n} samples leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return [dataset[i] for i in order[:n_train]], [dataset[i] for i in order[n_train:]]
