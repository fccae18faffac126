"""Central finite-difference checks for every hand-written derivative.

Relative error is measured per array as ``max|analytic - numeric| / max|numeric|``
so that entries that are legitimately zero do not dominate.
"""

from dataclasses import dataclass

import numpy as np

from .capnet import NetConfig, NetParams
from .field import divergence, gradient, inner
from .losses import FlowLossForm, HuberParams, energy_loss, flow_loss
from .solver import CapacityMaps, FlowState


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.error <= self.tolerance)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: error={self.error:.3e} tol={self.tolerance:.0e}"


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.max(np.abs(numeric))
    diff = np.max(np.abs(analytic - numeric))
    if scale == 0:
        return float(diff)
    return float(diff / scale)


def numeric_gradient(f, x, h=1e-4):
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def adjoint_gap(u, p):
    """|<grad u, p> + <u, div p>|, zero for an exact adjoint pair."""
    return abs(inner(gradient(u), p) + inner(u, divergence(p)))


def random_loss_instance(rng, shape=(8, 8)):
    """Random capacities, a random label with a boundary, and frozen feasible flows."""
    caps = CapacityMaps(*rng.uniform(0.2, 2.0, size=(3,) + shape))
    label = (rng.random(shape) < 0.5).astype(np.uint8)
    ps = caps.c_source - rng.uniform(0.0, 1.0, shape)
    pt = caps.c_sink - rng.uniform(0.0, 1.0, shape)
    p = rng.normal(0.0, 1.0, (2,) + shape)
    flows = FlowState(ps, pt, p, rng.random(shape))
    return label, caps, flows


def check_loss_gradients(seed, form=FlowLossForm.DEVIATION, huber=HuberParams(), h=1e-4):
    """Largest relative error over the three capacity gradients of flow and energy losses."""
    rng = np.random.default_rng(seed)
    label, caps, flows = random_loss_instance(rng)
    arrays = [caps.c_source.copy(), caps.c_sink.copy(), caps.c_edge.copy()]

    def rebuild():
        return CapacityMaps(*arrays)

    worst = 0.0
    _, fg = flow_loss(label, caps, flows, huber, form)
    _, eg = energy_loss(label, caps)
    for k, (fa, ea) in enumerate(zip(fg.stack(), eg.stack())):
        fn = numeric_gradient(lambda: flow_loss(label, rebuild(), flows, huber, form)[0], arrays[k], h)
        en = numeric_gradient(lambda: energy_loss(label, rebuild())[0], arrays[k], h)
        worst = max(worst, relative_error(fa, fn), relative_error(ea, en))
    return worst


def tiny_problem(seed=0, form=FlowLossForm.DEVIATION):
    from .synthdata import Sample
    from .trainer import TrainConfig

    cfg = NetConfig(in_channels=4, down_widths=(2, 2), dropout_rate=0.3, seed=seed)
    params = NetParams.init(cfg)
    rng = np.random.default_rng(seed + 1)
    # zero biases would park ReLU inputs exactly on the kink
    for name, w in params.weights.items():
        if name.endswith(".b"):
            w[...] = rng.normal(0.0, 0.1, w.shape)
    image = rng.standard_normal((4, 8, 8))
    wt = np.zeros((8, 8), np.uint8)
    wt[2:7, 1:6] = 1
    tc = np.zeros_like(wt)
    tc[3:6, 2:5] = 1
    ec = np.zeros_like(wt)
    ec[4, 3] = 1
    sample = Sample(image, (wt, tc, ec))
    return params, cfg, sample, TrainConfig(loss_form=form)


def check_network_gradients(seed=0, form=FlowLossForm.DEVIATION, h=1e-4):
    """Parameter gradients of the summed training loss, flows frozen, vs. finite differences.

    Returns ``{parameter name: relative error}``.
    """
    from .trainer import loss_and_grads

    params, cfg, sample, tcfg = tiny_problem(seed, form)
    drop_seed = 7
    params.zero_grad()
    _, flows = loss_and_grads(params, cfg, sample, tcfg, seed=drop_seed)

    def total():
        reports, _ = loss_and_grads(
            params, cfg, sample, tcfg, seed=drop_seed, flows=flows, accumulate=False
        )
        return sum(r.total for r in reports)

    errors = {}
    for name, w in params.weights.items():
        numeric = numeric_gradient(total, w, h)
        errors[name] = relative_error(params.grads[name], numeric)
    return errors


def run_all(n_loss_draws=20, seed=0):
    """Every finite-difference suite; returns a list of :class:`CheckResult`."""
    rng = np.random.default_rng(seed)
    results = []
    gaps = []
    for _ in range(10):
        hgt, wid = rng.integers(1, 33, size=2)
        gaps.append(adjoint_gap(rng.standard_normal((hgt, wid)), rng.standard_normal((2, hgt, wid))))
    results.append(CheckResult("grad/div adjoint identity", max(gaps), 1e-12))
    for form in FlowLossForm:
        err = max(check_loss_gradients(seed + k, form) for k in range(n_loss_draws))
        results.append(CheckResult(f"loss capacity gradients ({form.value})", err, 1e-4))
    for form in FlowLossForm:
        err = max(check_network_gradients(seed, form).values())
        results.append(CheckResult(f"network parameter gradients ({form.value})", err, 1e-3))
    return results
