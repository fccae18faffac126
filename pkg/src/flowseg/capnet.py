"""Capacity maps from images: hand-crafted features and a small trainable U-Net.

The network is plain numpy with explicit reverse-mode backpropagation. Images
are ``(C, H, W)`` float64 arrays; a forward pass processes a single image.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .solver import CapacityMaps

REGIONS = ("WT", "TC", "EC")


# -- images ------------------------------------------------------------------


def standardize(image):
    """Per-channel z-score over all pixels."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"image must have shape (C, H, W), got {x.shape}")
    mean = x.mean(axis=(1, 2), keepdims=True)
    std = x.std(axis=(1, 2), keepdims=True)
    if np.any(std == 0):
        raise ValueError("cannot standardize a channel with zero variance")
    return (x - mean) / std


@dataclass(frozen=True)
class HandcraftedParams:
    fg_mean: float = 1.0
    bg_mean: float = 0.0
    edge_scale: float = 0.5
    edge_sharpness: float = 2.0
    channel_index: int = 0

    def __post_init__(self):
        if not self.edge_scale > 0:
            raise ValueError("edge_scale must be positive")
        if self.edge_sharpness < 0:
            raise ValueError("edge_sharpness must be nonnegative")


def sobel_magnitude(img):
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def handcrafted_caps(image, params=HandcraftedParams()):
    """Squared distance to the class intensities plus a Sobel edge-stopping weight."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if not 0 <= params.channel_index < x.shape[0]:
        raise IndexError(f"channel_index {params.channel_index} out of range")
    img = x[params.channel_index]
    return CapacityMaps(
        c_source=(img - params.bg_mean) ** 2,
        c_sink=(img - params.fg_mean) ** 2,
        c_edge=params.edge_scale / (1.0 + params.edge_sharpness * sobel_magnitude(img)),
    )


# -- convolution primitives --------------------------------------------------


def _im2col(x, k, stride):
    # x already padded: (C, Hp, Wp) -> (C*k*k, Ho*Wo)
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[:3]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo), ho, wo


def conv_forward(x, w, b, stride=1):
    """'Same'-padded cross-correlation; output size is ceil(H / stride)."""
    k = w.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols, ho, wo = _im2col(xp, k, stride)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return out.reshape(w.shape[0], ho, wo), cols


def conv_backward(dout, x_shape, w, cols, stride=1):
    cout, cin, k, _ = w.shape
    pad = k // 2
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dcols = (w.reshape(cout, -1).T @ d2).reshape(cin, k, k, *dout.shape[1:])
    _, h, wd = x_shape
    dxp = np.zeros((cin, h + 2 * pad, wd + 2 * pad))
    ho, wo = dout.shape[1:]
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
    return dxp[:, pad : pad + h, pad : pad + wd], dw, db


def upsample_zeros(x):
    """Place ``x`` on the even sites of a grid twice as large."""
    c, h, w = x.shape
    up = np.zeros((c, 2 * h, 2 * w))
    up[:, ::2, ::2] = x
    return up


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- network -----------------------------------------------------------------


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 4
    down_widths: tuple = (8, 16, 16, 32, 32, 64)
    out_maps: int = 9
    dropout_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "down_widths", tuple(int(v) for v in self.down_widths))
        if not self.down_widths or len(self.down_widths) % 2:
            raise ValueError("down_widths needs an even number of entries (two per block)")
        if self.out_maps % 3:
            raise ValueError("out_maps must be divisible by 3")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def n_blocks(self):
        return len(self.down_widths) // 2

    def layer_shapes(self):
        """Ordered ``name -> weight shape`` map; biases have shape ``(out,)``."""
        w = self.down_widths
        shapes = {}
        cin = self.in_channels
        skip = [self.in_channels]
        for k in range(self.n_blocks):
            shapes[f"down{k}a"] = (w[2 * k], cin, 3, 3)
            shapes[f"down{k}b"] = (w[2 * k + 1], w[2 * k], 3, 3)
            cin = w[2 * k + 1]
            skip.append(cin)
        # up block k restores the resolution of down block n-2-k (or the input)
        for k in range(self.n_blocks):
            level = self.n_blocks - 1 - k
            target = w[2 * level - 1] if level > 0 else w[0]
            shapes[f"up{k}t"] = (target, cin, 5, 5)
            shapes[f"up{k}c"] = (target, target + skip[level], 3, 3)
            cin = target
        shapes["head"] = (self.out_maps, cin, 3, 3)
        return shapes


@dataclass
class NetParams:
    weights: dict
    grads: dict = field(default_factory=dict)
    momentum: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, arr in self.weights.items():
            self.grads.setdefault(name, np.zeros_like(arr))
            self.momentum.setdefault(name, np.zeros_like(arr))

    @classmethod
    def init(cls, cfg):
        """He-style fan-in initialization, zero biases, seeded by ``cfg.seed``."""
        rng = np.random.default_rng(cfg.seed)
        weights = {}
        for name, shape in cfg.layer_shapes().items():
            fan_in = shape[1] * shape[2] * shape[3]
            weights[f"{name}.w"] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            weights[f"{name}.b"] = np.zeros(shape[0])
        return cls(weights)

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self):
        return NetParams(
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.grads.items()},
            {k: v.copy() for k, v in self.momentum.items()},
        )

    def check(self, cfg):
        expected = cfg.layer_shapes()
        for name, shape in expected.items():
            w = self.weights.get(f"{name}.w")
            if w is None or w.shape != shape:
                raise ValueError(f"parameter {name}.w does not match the network config")


@dataclass
class Tape:
    cfg: NetConfig
    records: list
    dropout_mask: np.ndarray
    input_shape: tuple


def forward(params, cfg, image, training=False, seed=0):
    """Run the encoder-decoder; returns ``(raw_maps, tape)``.

    ``raw_maps`` has shape ``(out_maps, H, W)``. Dropout is applied before the
    head convolution only when ``training`` is true.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ValueError(f"expected image of shape ({cfg.in_channels}, H, W), got {x.shape}")
    factor = 2**cfg.n_blocks
    if x.shape[1] % factor or x.shape[2] % factor:
        raise ValueError(f"image height and width must be divisible by {factor}")
    W = params.weights
    records = []

    def conv(name, inp, stride=1, relu=True):
        out, cols = conv_forward(inp, W[f"{name}.w"], W[f"{name}.b"], stride)
        if relu:
            out = np.maximum(out, 0.0)
        records.append((name, inp.shape, cols, stride, out if relu else None))
        return out

    skips = [x]
    h = x
    for k in range(cfg.n_blocks):
        h = conv(f"down{k}a", h, stride=2)
        h = conv(f"down{k}b", h)
        skips.append(h)
    for k in range(cfg.n_blocks):
        level = cfg.n_blocks - 1 - k
        h = conv(f"up{k}t", upsample_zeros(h))
        h = conv(f"up{k}c", np.concatenate([h, skips[level]], axis=0))

    drop = None
    if training and cfg.dropout_rate > 0:
        rng = np.random.default_rng(seed)
        keep = rng.random(h.shape) >= cfg.dropout_rate
        drop = keep / (1.0 - cfg.dropout_rate)
        h = h * drop
    out = conv("head", h, relu=False)
    return out, Tape(cfg, records, drop, x.shape)


def backward(params, cfg, tape, grad_raw_maps):
    """Accumulate parameter gradients of the raw maps into ``params.grads``.

    Returns the gradient with respect to the input image.
    """
    if tape.cfg != cfg:
        raise ValueError("tape was recorded with a different network config")
    W, G = params.weights, params.grads
    rec = {r[0]: r for r in tape.records}

    def conv_back(name, dout):
        _, in_shape, cols, stride, relu_out = rec[name]
        if relu_out is not None:
            dout = dout * (relu_out > 0)
        dx, dw, db = conv_backward(dout, in_shape, W[f"{name}.w"], cols, stride)
        G[f"{name}.w"] += dw
        G[f"{name}.b"] += db
        return dx

    d = conv_back("head", np.asarray(grad_raw_maps, dtype=np.float64))
    if tape.dropout_mask is not None:
        d = d * tape.dropout_mask
    dskips = [None] * cfg.n_blocks
    for k in reversed(range(cfg.n_blocks)):
        level = cfg.n_blocks - 1 - k
        dcat = conv_back(f"up{k}c", d)
        n_up = W[f"up{k}t.w"].shape[0]
        dskips[level] = dcat[n_up:]
        dup = conv_back(f"up{k}t", dcat[:n_up])
        d = dup[:, ::2, ::2]
    # d is now the gradient of the bottleneck; walk the encoder back, adding
    # each skip's contribution once its feature map is reached
    for k in reversed(range(cfg.n_blocks)):
        d = conv_back(f"down{k}b", d)
        d = conv_back(f"down{k}a", d)
        d = d + dskips[k]
    return d


def capacity_head(raw_maps):
    """Split raw maps into (WT, TC, EC) capacity triples through a softplus.

    Returns ``(caps_list, dcap_draw)`` where ``dcap_draw`` is the elementwise
    softplus derivative, shaped like ``raw_maps``.
    """
    raw = np.asarray(raw_maps, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[0] != 9:
        raise ValueError(f"capacity_head expects 9 raw maps, got shape {raw.shape}")
    caps = softplus(raw)
    groups = [CapacityMaps(*caps[3 * g : 3 * g + 3]) for g in range(3)]
    return groups, sigmoid(raw)


# -- optimizer ---------------------------------------------------------------


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 1e-6

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def sgd_momentum_step(params, optim):
    for name, w in params.weights.items():
        g = params.grads[name] + optim.weight_decay * w
        v = params.momentum[name]
        v *= optim.momentum
        v += g
        w -= optim.learning_rate * v
    params.zero_grad()
