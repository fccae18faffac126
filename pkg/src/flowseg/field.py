"""Discrete fields on a unit-spaced 2D pixel grid.

Scalar fields are ``(H, W)`` float64 arrays. Vector fields are ``(2, H, W)``
arrays whose component 0 runs along columns (x) and component 1 along rows (y),
both collocated with the pixels.
"""

from enum import Enum

import numpy as np


class TvMode(str, Enum):
    ISOTROPIC = "isotropic"
    ANISOTROPIC = "anisotropic"


def as_scalar_field(values, name="field"):
    """Return ``values`` as a finite float64 ``(H, W)`` array."""
    u = np.asarray(values, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] < 1 or u.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2D array, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} contains non-finite values")
    return u


def as_vector_field(values, name="vector field"):
    p = np.asarray(values, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] != 2:
        raise ValueError(f"{name} must have shape (2, H, W), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} contains non-finite values")
    return p


def gradient(u):
    """Forward differences with a zero difference across the last row/column."""
    u = np.asarray(u, dtype=np.float64)
    g = np.zeros((2,) + u.shape)
    g[0, :, :-1] = u[:, 1:] - u[:, :-1]
    g[1, :-1, :] = u[1:, :] - u[:-1, :]
    return g


def divergence(p):
    """Backward-difference divergence, the negative adjoint of :func:`gradient`.

    The last column of the x component and the last row of the y component
    never enter the result, mirroring the zero differences produced there by
    :func:`gradient`.
    """
    p = np.asarray(p, dtype=np.float64)
    px, py = p[0], p[1]
    d = np.zeros(px.shape)
    if px.shape[1] > 1:
        d[:, :-1] += px[:, :-1]
        d[:, 1:] -= px[:, :-1]
    if py.shape[0] > 1:
        d[:-1, :] += py[:-1, :]
        d[1:, :] -= py[:-1, :]
    return d


def magnitude(p, mode=TvMode.ISOTROPIC):
    """Pointwise vector magnitude: Euclidean, or the max-norm for anisotropic mode.

    The anisotropic projection clamps each component separately, so its
    feasibility measure is the largest component magnitude.
    """
    p = np.asarray(p, dtype=np.float64)
    if TvMode(mode) is TvMode.ISOTROPIC:
        return np.sqrt(p[0] ** 2 + p[1] ** 2)
    return np.maximum(np.abs(p[0]), np.abs(p[1]))


def gradient_magnitude(u, mode=TvMode.ISOTROPIC):
    """|grad u| as it enters the total variation: Euclidean or l1 per pixel."""
    g = gradient(u)
    if TvMode(mode) is TvMode.ISOTROPIC:
        return np.sqrt(g[0] ** 2 + g[1] ** 2)
    return np.abs(g[0]) + np.abs(g[1])


def project_scalar_capacity(f, cap):
    # upper bound only
    return np.minimum(f, cap)


def project_vector_capacity(p, cap, mode=TvMode.ISOTROPIC):
    p = np.asarray(p, dtype=np.float64)
    cap = np.asarray(cap, dtype=np.float64)
    if TvMode(mode) is TvMode.ANISOTROPIC:
        return np.clip(p, -cap, cap)
    cap = np.broadcast_to(cap, p.shape[1:])
    out = p.copy()
    over = np.sqrt(p[0] ** 2 + p[1] ** 2) > cap
    # shrink until the stored magnitude is <= cap, so re-projection is a no-op
    while np.any(over):
        mag = np.sqrt(out[0][over] ** 2 + out[1][over] ** 2)
        out[:, over] *= cap[over] / mag
        over = np.sqrt(out[0] ** 2 + out[1] ** 2) > cap
        out[:, over] *= 1.0 - 2.0 ** -52
        over = np.sqrt(out[0] ** 2 + out[1] ** 2) > cap
    return out


def tv_energy(u, c_edge, mode=TvMode.ISOTROPIC):
    """Weighted total variation ``sum(c_edge * |grad u|)``."""
    return float(np.sum(np.asarray(c_edge, dtype=np.float64) * gradient_magnitude(u, mode)))


def inner(a, b):
    """Standard inner product over all entries, in fixed (row-major) order."""
    return float(np.dot(np.ravel(a), np.ravel(b)))
