"""Input checks shared by the estimator wrappers."""

import numpy as np


def check_image_batch(X, n_channels=None, multiple_of=1):
    """Return ``X`` as a finite float64 ``(n, C, H, W)`` array.

    A single ``(C, H, W)`` image or ``(H, W)`` plane is promoted to a batch.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None, None]
    elif X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected images of shape (n, C, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain NaN or infinite values")
    if n_channels is not None and X.shape[1] != n_channels:
        raise ValueError(f"expected {n_channels} channels, got {X.shape[1]}")
    if X.shape[2] % multiple_of or X.shape[3] % multiple_of:
        raise ValueError(f"image height and width must be divisible by {multiple_of}")
    return X


def check_capacity_batch(X):
    """Return ``X`` as a nonnegative float64 ``(n, 3, H, W)`` capacity stack."""
    X = check_image_batch(X)
    if X.shape[1] != 3:
        raise ValueError(f"capacity stacks have 3 maps (C_s, C_t, C_g), got {X.shape[1]}")
    if np.any(X < 0):
        raise ValueError("capacities must be nonnegative")
    return X


def check_mask_batch(y, n_images, shape, n_masks=3):
    """Binary masks as ``(n, n_masks, H, W)`` uint8."""
    y = np.asarray(y)
    if y.ndim == 3 and n_masks == 1:
        y = y[:, None]
    if y.ndim != 4 or y.shape[1] != n_masks:
        raise ValueError(f"expected masks of shape (n, {n_masks}, H, W), got {y.shape}")
    if y.shape[0] != n_images:
        raise ValueError(f"{y.shape[0]} label sets for {n_images} images")
    if y.shape[-2:] != tuple(shape):
        raise ValueError(f"mask shape {y.shape[-2:]} does not match images {tuple(shape)}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("masks must be binary")
    return y.astype(np.uint8)
