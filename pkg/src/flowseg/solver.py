"""ADMM inference for the continuous max-flow / min-cut model.

The solver maximizes total source flow subject to per-pixel capacity bounds
``p_s <= C_s``, ``p_t <= C_t``, ``|p| <= C_g`` and flow conservation
``div p - p_s + p_t = 0``. The relaxed label ``lam`` is the Lagrange multiplier
of the conservation constraint; ``lam = 1`` marks foreground (paying ``C_t``).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .field import (
    TvMode,
    as_scalar_field,
    divergence,
    gradient,
    magnitude,
    project_scalar_capacity,
    project_vector_capacity,
)


@dataclass(frozen=True)
class CapacityMaps:
    c_source: np.ndarray
    c_sink: np.ndarray
    c_edge: np.ndarray

    def __post_init__(self):
        for name in ("c_source", "c_sink", "c_edge"):
            object.__setattr__(self, name, as_scalar_field(getattr(self, name), name))
        if not (self.c_source.shape == self.c_sink.shape == self.c_edge.shape):
            raise ValueError(
                "capacity maps must share one domain, got "
                f"{self.c_source.shape}, {self.c_sink.shape}, {self.c_edge.shape}"
            )
        for name in ("c_source", "c_sink", "c_edge"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} has negative capacities")

    @property
    def shape(self):
        return self.c_source.shape

    def stack(self):
        return np.stack([self.c_source, self.c_sink, self.c_edge])


@dataclass(frozen=True)
class SolverConfig:
    step_size: float = 0.16
    penalty: float = 0.3
    iterations: int = 15
    tv_mode: TvMode = TvMode.ISOTROPIC
    clamp_lambda_final: bool = True
    record_trajectory: bool = False
    # residual-based early exit; off by default so the iteration count is fixed
    early_stop_tol: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tv_mode", TvMode(self.tv_mode))
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        if self.early_stop_tol < 0:
            raise ValueError("early_stop_tol must be nonnegative")


@dataclass
class FlowState:
    p_source: np.ndarray
    p_sink: np.ndarray
    p_spatial: np.ndarray
    lam: np.ndarray

    def copy(self):
        return FlowState(
            self.p_source.copy(), self.p_sink.copy(), self.p_spatial.copy(), self.lam.copy()
        )


@dataclass
class SolverResult:
    final_state: FlowState
    residual_norms: list
    energy_trace: list = field(default_factory=list)
    trajectory: list = None

    @property
    def lam(self):
        return self.final_state.lam


def initialize(caps):
    """Conservation-consistent starting point: equal source and sink flow, zero spatial flow."""
    flow = np.minimum(caps.c_source, caps.c_sink)
    return FlowState(
        p_source=flow.copy(),
        p_sink=flow.copy(),
        p_spatial=np.zeros((2,) + caps.shape),
        lam=np.full(caps.shape, 0.5),
    )


def conservation_residual(state):
    return divergence(state.p_spatial) - state.p_source + state.p_sink


def residual_norm(state):
    return float(np.linalg.norm(conservation_residual(state)))


def feasibility_violation(state, caps, mode=TvMode.ISOTROPIC):
    """Largest amount by which any flow exceeds its capacity (<= 0 when feasible)."""
    return max(
        float(np.max(state.p_source - caps.c_source)),
        float(np.max(state.p_sink - caps.c_sink)),
        float(np.max(magnitude(state.p_spatial, mode) - caps.c_edge)),
    )


def step(state, caps, cfg, _monitor=None):
    """One sweep of the four ADMM substeps; returns a new state.

    Each substep reads the fields written by the one before it. ``_monitor`` is
    called with the intermediate state after every substep (used by tests).
    """
    a, c = cfg.step_size, cfg.penalty
    ps, pt, lam = state.p_source, state.p_sink, state.lam

    p = project_vector_capacity(
        state.p_spatial + a * gradient(divergence(state.p_spatial) - ps + pt - lam / c),
        caps.c_edge,
        cfg.tv_mode,
    )
    if _monitor:
        _monitor(FlowState(ps, pt, p, lam))
    div_p = divergence(p)

    ps = project_scalar_capacity(ps + a * (div_p + pt - ps - (lam - 1.0) / c), caps.c_source)
    if _monitor:
        _monitor(FlowState(ps, pt, p, lam))

    pt = project_scalar_capacity(pt + a * (-div_p - pt + ps + lam / c), caps.c_sink)
    if _monitor:
        _monitor(FlowState(ps, pt, p, lam))

    lam = lam - a * (div_p - ps + pt)
    new = FlowState(ps, pt, p, lam)
    if _monitor:
        _monitor(new)
    return new


def solve(caps, cfg=None, *, track_energy=False, _monitor=None):
    """Run ``cfg.iterations`` ADMM sweeps from :func:`initialize`.

    Parameters
    ----------
    caps : CapacityMaps
    cfg : SolverConfig, optional
        Defaults to 15 iterations with step 0.16 and penalty 0.3.
    track_energy : bool
        Record the segmentation energy of ``lam >= 0.5`` after every sweep.

    Returns
    -------
    SolverResult
    """
    if not isinstance(caps, CapacityMaps):
        raise TypeError("caps must be a CapacityMaps instance")
    cfg = cfg or SolverConfig()
    state = initialize(caps)
    residuals, energies = [], []
    trajectory = [] if cfg.record_trajectory else None
    for _ in range(cfg.iterations):
        state = step(state, caps, cfg, _monitor)
        residuals.append(residual_norm(state))
        if track_energy:
            from .losses import energy

            energies.append(energy((state.lam >= 0.5).astype(np.uint8), caps, cfg.tv_mode))
        if trajectory is not None:
            trajectory.append(state.lam.copy())
        if cfg.early_stop_tol and residuals[-1] <= cfg.early_stop_tol:
            break
    if cfg.clamp_lambda_final:
        state = replace(state, lam=np.clip(state.lam, 0.0, 1.0))
    return SolverResult(state, residuals, energies, trajectory)
