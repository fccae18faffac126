import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowseg.field import TvMode, divergence
from flowseg.gradcheck import check_loss_gradients, numeric_gradient, relative_error
from flowseg.losses import (
    FlowLossForm,
    HuberParams,
    energy,
    energy_loss,
    flow_loss,
    huber,
    huber_grad,
    saturated_flows,
    train_loss,
)
from flowseg.solver import CapacityMaps, FlowState, SolverConfig, solve
from oracles import all_labelings, brute_force_min, random_oracle_caps


@pytest.mark.parametrize("r, expected", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)])
def test_huber_values(r, expected):
    assert huber(r, HuberParams(1.0)) == expected


@pytest.mark.parametrize("delta", [0.1, 1.0, 3.0])
def test_huber_smooth_at_delta(delta):
    p, h = HuberParams(delta), 1e-7
    left = (huber(delta, p) - huber(delta - h, p)) / h
    right = (huber(delta + h, p) - huber(delta, p)) / h
    assert abs(float(huber_grad(delta - 0.0, p)) - delta) <= 1e-12
    assert abs(left - right) <= 1e-6
    assert float(huber_grad(np.nextafter(delta, 0), p)) == pytest.approx(float(huber_grad(delta, p)), abs=1e-12)


def test_huber_rejects_bad_delta():
    with pytest.raises(ValueError):
        HuberParams(0.0)


def test_energy_hand_example():
    caps = CapacityMaps(np.array([[2.0, 3.0]]), np.array([[1.0, 4.0]]), np.array([[1.0, 1.0]]))
    assert energy(np.array([[1, 0]]), caps) == 5.0


def test_energy_all_background_and_foreground():
    caps = CapacityMaps(*random_oracle_caps(0, (5, 6)))
    assert energy(np.zeros((5, 6)), caps) == pytest.approx(caps.c_source.sum())
    assert energy(np.ones((5, 6)), caps) == pytest.approx(caps.c_sink.sum())


def test_energy_rejects_shape_mismatch():
    caps = CapacityMaps(*random_oracle_caps(0, (3, 3)))
    with pytest.raises(ValueError):
        energy(np.zeros((3, 4)), caps)


def test_energy_loss_examples():
    caps = CapacityMaps(*random_oracle_caps(1, (4, 4)))
    label = np.zeros((4, 4), np.uint8)
    label[1, 2] = 1
    _, g = energy_loss(label, caps)
    assert g.c_source[1, 2] == -1 and g.c_sink[1, 2] == 1
    value, g0 = energy_loss(np.zeros((4, 4)), caps)
    assert value == 0.0 and not np.any(g0.c_edge)


def test_energy_loss_source_ceiling():
    caps = CapacityMaps(np.full((2, 2), 12.0), np.zeros((2, 2)), np.zeros((2, 2)))
    label = np.ones((2, 2))
    plain, g = energy_loss(label, caps)
    capped, gc = energy_loss(label, caps, source_ceiling=10.0)
    assert plain == -48.0 and capped == -40.0
    assert np.all(g.c_source == -1) and not np.any(gc.c_source)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("form", list(FlowLossForm))
def test_gradients_match_finite_differences(seed, form):
    assert check_loss_gradients(seed, form) <= 1e-4


def test_energy_loss_fd_tight():
    rng = np.random.default_rng(5)
    maps = [rng.random((8, 8)) for _ in range(3)]
    label = (rng.random((8, 8)) > 0.5).astype(np.uint8)
    _, g = energy_loss(label, CapacityMaps(*maps))
    for k, analytic in enumerate(g.stack()):
        num = numeric_gradient(lambda: energy_loss(label, CapacityMaps(*maps))[0], maps[k])
        assert relative_error(analytic, num) <= 1e-6


def test_saturated_flow_examples():
    label = np.array([[0, 1, 1]], np.uint8)
    caps = CapacityMaps(np.array([[1.0, 1.0, 1.0]]), np.full((1, 3), 2.0), np.full((1, 3), 10.0))
    p = np.zeros((2, 1, 3))
    p[:, 0, 0] = (3.0, 4.0)  # pixel 0 is a boundary pixel (jump to the right)
    flows = FlowState(np.array([[0.4, 0.7, 0.2]]), np.zeros((1, 3)), p, np.zeros((1, 3)))
    hat = saturated_flows(label, caps, flows)
    assert hat.p_source_hat[0, 0] == 1.0
    assert hat.p_source_hat[0, 1] == 0.7
    np.testing.assert_allclose(hat.p_spatial_hat[:, 0, 0], (6.0, 8.0))
    np.testing.assert_array_equal(hat.p_sink_hat[0, 1:], 2.0)


def test_zero_flow_on_boundary_stays_zero():
    label = np.array([[1, 0]], np.uint8)
    caps = CapacityMaps(np.ones((1, 2)), np.ones((1, 2)), np.full((1, 2), 3.0))
    flows = FlowState(np.ones((1, 2)), np.ones((1, 2)), np.zeros((2, 1, 2)), np.zeros((1, 2)))
    assert not np.any(saturated_flows(label, caps, flows).p_spatial_hat)


def saturated_instance(seed, shape=(8, 8)):
    """Label, capacities and flows meeting every saturation condition with conservation."""
    rng = np.random.default_rng(seed)
    label = (rng.random(shape) > 0.5).astype(np.uint8)
    p = rng.standard_normal((2,) + shape)
    from flowseg.losses import label_boundary

    bnd = label_boundary(label)
    # axis-aligned boundary flows rescale to their own length without round-off
    p[1][bnd] = 0.0
    c_edge = np.sqrt(p[0] ** 2 + p[1] ** 2) + np.where(rng.random(shape) > 0.5, 0.0, 1.0)
    c_edge[bnd] = np.sqrt(p[0] ** 2 + p[1] ** 2)[bnd]
    div = divergence(p)
    base = rng.random(shape) + 4.0 + np.abs(div)
    ps = np.where(label == 0, base, base + div)
    pt = np.where(label == 0, base - div, base)
    c_source = np.where(label == 0, ps, ps + rng.random(shape))
    c_sink = np.where(label == 1, pt, pt + rng.random(shape))
    caps = CapacityMaps(c_source, c_sink, c_edge)
    return label, caps, FlowState(ps, pt, p, np.zeros(shape))


@pytest.mark.parametrize("form", list(FlowLossForm))
def test_fully_saturated_flow_loss_is_zero(form):
    label, caps, flows = saturated_instance(0)
    value, _ = flow_loss(label, caps, flows, form=form)
    assert value == pytest.approx(0.0, abs=1e-24)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["source", "sink", "edge"]), st.floats(0.01, 2.0))
def test_deviation_zero_iff_saturated(seed, which, gap):
    label, caps, flows = saturated_instance(seed)
    assert flow_loss(label, caps, flows)[0] == 0.0
    from flowseg.losses import label_boundary

    rng = np.random.default_rng(seed)
    if which == "source":
        idx = np.argwhere(label == 0)
        ps = flows.p_source.copy()
        if not len(idx):
            return
        i, j = idx[rng.integers(len(idx))]
        ps[i, j] -= gap
        flows = FlowState(ps, flows.p_sink, flows.p_spatial, flows.lam)
    elif which == "sink":
        idx = np.argwhere(label == 1)
        pt = flows.p_sink.copy()
        if not len(idx):
            return
        i, j = idx[rng.integers(len(idx))]
        pt[i, j] -= gap
        flows = FlowState(flows.p_source, pt, flows.p_spatial, flows.lam)
    else:
        idx = np.argwhere(label_boundary(label))
        if not len(idx):
            return
        i, j = idx[rng.integers(len(idx))]
        ce = caps.c_edge.copy()
        ce[i, j] += gap
        caps = CapacityMaps(caps.c_source, caps.c_sink, ce)
    assert flow_loss(label, caps, flows)[0] > 0.0


def test_single_unsaturated_pixel():
    label, caps, flows = saturated_instance(3)
    i, j = map(int, np.argwhere(label == 0)[0])
    cs = caps.c_source.copy()
    cs[i, j] = 1.0
    ps = flows.p_source.copy()
    ps[i, j] = 0.5
    # keep the deviation form's other terms saturated at this pixel
    caps = CapacityMaps(cs, caps.c_sink, caps.c_edge)
    flows = FlowState(ps, flows.p_sink, flows.p_spatial, flows.lam)
    n = label.size
    value, g = flow_loss(label, caps, flows, HuberParams(1.0), FlowLossForm.DEVIATION)
    assert value == pytest.approx(0.125 / n, rel=1e-12)
    assert g.c_source[i, j] == pytest.approx(0.5 / n, rel=1e-12)
    g.c_source[i, j] = 0.0
    assert not np.any(g.stack())


def test_train_loss_examples():
    label, caps, flows = saturated_instance(1)
    rep = train_loss(label, caps, flows)
    assert rep.flow_loss == 0.0
    assert rep.total == rep.energy_loss == energy_loss(label, caps)[0]

    zero = np.zeros((8, 8), np.uint8)
    rng = np.random.default_rng(2)
    caps = CapacityMaps(*(rng.random((8, 8)) for _ in range(3)))
    _, eg = energy_loss(zero, caps)
    assert not np.any(eg.c_sink)


@pytest.mark.parametrize("form", list(FlowLossForm))
def test_train_loss_gradients_are_sums(form):
    rng = np.random.default_rng(4)
    caps = CapacityMaps(*(rng.random((8, 8)) for _ in range(3)))
    label = (rng.random((8, 8)) > 0.5).astype(np.uint8)
    flows = solve(caps, SolverConfig()).final_state
    rep = train_loss(label, caps, flows, form=form)
    _, fg = flow_loss(label, caps, flows, form=form)
    _, eg = energy_loss(label, caps)
    np.testing.assert_array_equal(rep.grads.stack(), fg.stack() + eg.stack())
    assert rep.total == rep.flow_loss + rep.energy_loss


@pytest.mark.parametrize("seed", range(5))
def test_oracle_mask_has_minimal_energy(seed):
    cs, ct, cg = random_oracle_caps(seed)
    caps = CapacityMaps(cs, ct, cg)
    best, mask = brute_force_min(cs, ct, cg)
    assert energy(mask, caps, TvMode.ANISOTROPIC) == pytest.approx(best)
    for lab in all_labelings(4, 4)[::997]:
        assert energy(lab.astype(np.uint8), caps, TvMode.ANISOTROPIC) >= best - 1e-12
