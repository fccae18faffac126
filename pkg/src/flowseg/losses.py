"""Segmentation energy, flow-regularization loss and their capacity gradients.

Solver flows are treated as constants: gradients only reach the capacity maps,
either through the energy terms or through the saturated ("hatted") flows that
substitute a capacity for the flow on the side of the cut where optimality
requires saturation.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .field import TvMode, divergence, gradient, gradient_magnitude, tv_energy
from .levelset import as_mask


class FlowLossForm(str, Enum):
    DEVIATION = "deviation"
    RESIDUAL = "residual"


@dataclass(frozen=True)
class HuberParams:
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass
class CapacityGrads:
    c_source: np.ndarray
    c_sink: np.ndarray
    c_edge: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def __add__(self, other):
        return CapacityGrads(
            self.c_source + other.c_source,
            self.c_sink + other.c_sink,
            self.c_edge + other.c_edge,
        )

    def stack(self):
        return np.stack([self.c_source, self.c_sink, self.c_edge])


@dataclass
class SaturatedFlows:
    p_source_hat: np.ndarray
    p_sink_hat: np.ndarray
    p_spatial_hat: np.ndarray


@dataclass
class LossReport:
    flow_loss: float
    energy_loss: float
    total: float
    grads: CapacityGrads

    @property
    def grad_c_source(self):
        return self.grads.c_source

    @property
    def grad_c_sink(self):
        return self.grads.c_sink

    @property
    def grad_c_edge(self):
        return self.grads.c_edge


def huber(r, params=HuberParams()):
    r = np.asarray(r, dtype=np.float64)
    d = params.delta
    a = np.abs(r)
    out = np.where(a <= d, 0.5 * r * r, d * (a - 0.5 * d))
    return out if out.ndim else float(out)


def huber_grad(r, params=HuberParams()):
    return np.clip(r, -params.delta, params.delta)


def _check_domain(label, caps):
    if label.shape != caps.shape:
        raise ValueError(f"label shape {label.shape} does not match capacities {caps.shape}")


def energy(label, caps, mode=TvMode.ISOTROPIC):
    """Segmentation energy of a binary labelling (1 = foreground)."""
    lab = as_mask(label).astype(np.float64)
    _check_domain(lab, caps)
    return float(
        np.sum((1.0 - lab) * caps.c_source)
        + np.sum(lab * caps.c_sink)
        + tv_energy(lab, caps.c_edge, mode)
    )


def energy_loss(label, caps, mode=TvMode.ISOTROPIC, source_ceiling=None):
    """Training-form energy ``-sum(lab*C_s) + sum(lab*C_t) + sum(C_g*|grad lab|)``.

    The source term rewards large ``C_s`` on the foreground without bound.
    ``source_ceiling`` caps that reward at ``min(C_s, source_ceiling)`` so the
    loss stays bounded below; ``None`` keeps the plain form.

    Returns the value and its gradients with respect to the capacities.
    """
    lab = as_mask(label).astype(np.float64)
    _check_domain(lab, caps)
    edge = gradient_magnitude(lab, mode)
    c_src = caps.c_source
    g_src = -lab
    if source_ceiling is not None:
        c_src = np.minimum(c_src, source_ceiling)
        g_src = np.where(caps.c_source < source_ceiling, -lab, 0.0)
    value = float(-np.sum(lab * c_src) + np.sum(lab * caps.c_sink) + np.sum(caps.c_edge * edge))
    return value, CapacityGrads(g_src, lab.copy(), edge)


def label_boundary(label):
    """Pixels where the forward-difference gradient of the label is nonzero."""
    g = gradient(as_mask(label).astype(np.float64))
    return (g[0] != 0) | (g[1] != 0)


def _unit_flow(p):
    mag = np.sqrt(p[0] ** 2 + p[1] ** 2)
    unit = np.zeros_like(p)
    nz = mag > 0
    unit[:, nz] = p[:, nz] / mag[nz]
    return mag, unit


def saturated_flows(label, caps, flows):
    lab = as_mask(label).astype(bool)
    _check_domain(lab, caps)
    ps_hat = np.where(lab, flows.p_source, caps.c_source)
    pt_hat = np.where(lab, caps.c_sink, flows.p_sink)
    bnd = label_boundary(lab)
    _, unit = _unit_flow(flows.p_spatial)
    p_hat = np.where(bnd, unit * caps.c_edge, flows.p_spatial)
    return SaturatedFlows(ps_hat, pt_hat, p_hat)


def flow_loss(label, caps, flows, params=HuberParams(), form=FlowLossForm.DEVIATION):
    """Pixel-averaged Huber penalty on the gap between flows and saturated flows.

    ``form="deviation"`` penalizes ``|p_s_hat - p_s| + |p_t_hat - p_t| + |p_hat - p|``;
    ``form="residual"`` penalizes the conservation residual of the saturated
    flows, ``p_s_hat - p_t_hat - div(p_hat)``.

    Returns ``(value, CapacityGrads)``.
    """
    form = FlowLossForm(form)
    lab = as_mask(label).astype(bool)
    _check_domain(lab, caps)
    n = lab.size
    hat = saturated_flows(lab, caps, flows)
    bnd = label_boundary(lab)
    mag, unit = _unit_flow(flows.p_spatial)
    bnd_active = bnd & (mag > 0)
    grads = CapacityGrads.zeros(lab.shape)

    if form is FlowLossForm.DEVIATION:
        ds = hat.p_source_hat - flows.p_source
        dt = hat.p_sink_hat - flows.p_sink
        dp = hat.p_spatial_hat - flows.p_spatial
        r = np.abs(ds) + np.abs(dt) + np.sqrt(dp[0] ** 2 + dp[1] ** 2)
        w = huber_grad(r, params) / n
        grads.c_source = np.where(~lab, w * np.sign(ds), 0.0)
        grads.c_sink = np.where(lab, w * np.sign(dt), 0.0)
        grads.c_edge = np.where(bnd_active, w * np.sign(caps.c_edge - mag), 0.0)
    else:
        r = hat.p_source_hat - hat.p_sink_hat - divergence(hat.p_spatial_hat)
        w = huber_grad(r, params) / n
        grads.c_source = np.where(~lab, w, 0.0)
        grads.c_sink = np.where(lab, -w, 0.0)
        # d/dp_hat of -div(p_hat) . w is grad(w); p_hat moves along the unit flow
        gw = gradient(w)
        grads.c_edge = np.where(bnd_active, gw[0] * unit[0] + gw[1] * unit[1], 0.0)
    value = float(np.sum(huber(r, params)) / n)
    return value, grads


def train_loss(
    label,
    caps,
    flows,
    params=HuberParams(),
    form=FlowLossForm.DEVIATION,
    mode=TvMode.ISOTROPIC,
    energy_weight=1.0,
    flow_weight=1.0,
    source_ceiling=None,
):
    """Flow loss plus training-form energy, with summed capacity gradients.

    The weights default to the plain sum; setting ``flow_weight=0`` gives the
    energy-only ablation.
    """
    fl, fg = flow_loss(label, caps, flows, params, form)
    el, eg = energy_loss(label, caps, mode, source_ceiling)
    fl, el = flow_weight * fl, energy_weight * el
    grads = CapacityGrads(
        flow_weight * fg.c_source + energy_weight * eg.c_source,
        flow_weight * fg.c_sink + energy_weight * eg.c_sink,
        flow_weight * fg.c_edge + energy_weight * eg.c_edge,
    )
    return LossReport(flow_loss=fl, energy_loss=el, total=fl + el, grads=grads)
