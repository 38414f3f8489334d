import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasiwave.convergence_lab import (MIN_BOX_SAMPLES, TestFunction, delta_sweep, loglog_slope, lp_norm,
                                       tartar_defect, test_functions, weak_residual_p, weak_residual_r,
                                       weak_residuals, young_concentration)
from quasiwave.entropy_pairs import FreeEnergyPair, MomentumPair
from quasiwave.greens import LinearSpectralSolution
from quasiwave.model import BoundaryTensionProfile, Grid, InitialData, StateField, make_linear_tension
from quasiwave.viscous_solver import Trajectory


def _zero_init(M=20):
    g = Grid(M)
    return InitialData(StateField(g, np.zeros(M + 1), np.zeros(M + 1)), 0.0, 0.0, {})


def _constant_traj(M=40, S=41, r=0.3, p=0.0):
    g = Grid(M)
    t = np.linspace(0, 1, S)
    return Trajectory.from_fields(g, 0.1, t, np.full((S, M + 1), r), np.full((S, M + 1), p))


def test_shipped_test_functions_are_admissible():
    tests = test_functions(2.0)
    assert len(tests) == 16
    assert sum(f.kind == "r" for f in tests) == 8
    for f in tests:
        edge = 1.0 if f.kind == "r" else 0.0
        assert abs(f.value([0.0, 1.0], [edge])).max() < 1e-12


def test_inadmissible_test_functions_rejected():
    one = lambda x: np.ones_like(x, dtype=float)  # noqa: E731
    zero = lambda x: np.zeros_like(x, dtype=float)  # noqa: E731
    with pytest.raises(ValueError, match="vanish"):
        TestFunction("bad", "r", one, zero, one, zero)
    with pytest.raises(ValueError, match="kind"):
        TestFunction("bad", "q", zero, zero, one, zero)
    r_test = next(f for f in test_functions(1.0) if f.kind == "r")
    p_test = next(f for f in test_functions(1.0) if f.kind == "p")
    tr = _constant_traj()
    with pytest.raises(ValueError, match="admissible"):
        weak_residual_r(tr, p_test)
    with pytest.raises(ValueError, match="admissible"):
        weak_residual_p(tr, r_test, make_linear_tension(1.0), BoundaryTensionProfile.constant(0.0))


def test_loglog_slope_of_power_law():
    d = np.array([0.2, 0.1, 0.05])
    assert loglog_slope(d, 3 * d**0.7) == pytest.approx(0.7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lp_norms_are_ordered(seed):
    rng = np.random.default_rng(seed)
    g = Grid(16)
    t = np.linspace(0, 1, 9)
    tr = Trajectory.from_fields(g, 0.1, t, rng.normal(size=(9, 17)), rng.normal(size=(9, 17)))
    n1, n15, n2 = (lp_norm(tr, p) for p in (1.0, 1.5, 2.0))
    assert n1 <= n15 * (1 + 1e-12) and n15 <= n2 * (1 + 1e-12)
    assert lp_norm(tr, 1.0, tr) == 0.0


def test_lp_norm_of_constant_field():
    tr = _constant_traj(r=0.3, p=0.4)
    for p in (1.0, 1.5, 2.0):
        assert lp_norm(tr, p) == pytest.approx(0.5)


def test_lp_norm_rejects_mismatched_trajectories():
    with pytest.raises(ValueError):
        lp_norm(_constant_traj(S=41), 1.0, _constant_traj(S=21))


def test_weak_residuals_at_equilibrium_are_second_order_quadrature_error():
    # a steady state satisfies the weak form exactly; only trapezoid error in t and x remains
    lin = make_linear_tension(1.5)
    rstar = 0.3
    b = BoundaryTensionProfile.constant(1.5 * rstar)
    coarse = weak_residuals(_constant_traj(M=40, S=41, r=rstar), lin, b)
    fine = weak_residuals(_constant_traj(M=80, S=81, r=rstar), lin, b)
    assert len(coarse) == 16
    assert max(coarse.values()) < 1e-3
    for name, v in coarse.items():
        if v > 1e-12:
            assert 3.5 < v / fine[name] < 4.5, name


def _oracle_trajectory(delta, M=400, S=401):
    """Linear-law spectral solution sampled on a grid, for the weak-form check."""
    lin = make_linear_tension(1.5)
    b = BoundaryTensionProfile(0.0, 1.5, 1.0)
    sol = LinearSpectralSolution.from_functions(1.5, delta, b, lambda x: 0.5 * np.cos(0.5 * np.pi * x),
                                                lambda x: 0.25 * np.sin(0.5 * np.pi * x))
    g = Grid(M)
    t = np.linspace(0, 1, S)
    r, p = sol.evaluate(t, g.x)
    return Trajectory.from_fields(g, delta, t, r, p), lin, b


@pytest.mark.parametrize("delta", [0.05, 0.0125])
def test_weak_strain_residual_matches_viscous_term(delta):
    tr, _, _ = _oracle_trajectory(delta)
    x, w = tr.grid.x, tr.grid.weights
    r_x = np.gradient(tr.r, x, axis=1, edge_order=2)
    for phi in (f for f in test_functions(1.0) if f.kind == "r"):
        predicted = -delta * np.concatenate([[0.0], np.cumsum(
            0.5 * np.diff(tr.times) * ((phi.d_x(tr.times, x) * r_x) @ w)[1:]
            + 0.5 * np.diff(tr.times) * ((phi.d_x(tr.times, x) * r_x) @ w)[:-1])])
        got = weak_residual_r(tr, phi)
        scale = np.max(np.abs(predicted))
        assert scale > 0
        np.testing.assert_allclose(got, predicted, atol=5e-3 * scale + 1e-9)


def test_young_variances_vanish_for_constant_state():
    y = young_concentration(_constant_traj(M=80, S=81), 8, 8)
    assert y.max_variance == 0.0
    np.testing.assert_allclose(y.mean_r, 0.3)


def test_young_single_box_matches_global_variance():
    rng = np.random.default_rng(1)
    g = Grid(30)
    r, p = rng.normal(size=(20, 31)), rng.normal(size=(20, 31))
    tr = Trajectory.from_fields(g, 0.1, np.linspace(0, 1, 20), r, p)
    y = young_concentration(tr, 1, 1)
    assert y.counts[0, 0] == r.size
    assert y.variance[0, 0] == pytest.approx(r.var() + p.var())


def test_young_rejects_sparse_boxes():
    tr = _constant_traj(M=20, S=21)
    with pytest.raises(ValueError, match=str(MIN_BOX_SAMPLES)):
        young_concentration(tr, 8, 8)
    with pytest.raises(ValueError, match="finer"):
        young_concentration(tr, 30, 2)


def test_tartar_defect_of_identical_pairs_is_zero(softplus):
    rng = np.random.default_rng(2)
    g = Grid(40)
    tr = Trajectory.from_fields(g, 0.1, np.linspace(0, 1, 41), rng.uniform(-0.5, 1, (41, 41)),
                                rng.uniform(-0.5, 0.5, (41, 41)))
    pair = FreeEnergyPair(softplus)
    d = tartar_defect(tr, pair, pair)
    assert np.max(np.abs(d.defect)) < 1e-12
    assert not d.flagged.any()


def test_tartar_defect_vanishes_at_equilibrium(softplus):
    d = tartar_defect(_constant_traj(M=40, S=41), FreeEnergyPair(softplus), MomentumPair(softplus))
    assert d.max_defect < 1e-14


def test_sweep_rejects_bad_delta_lists(softplus):
    b = BoundaryTensionProfile.constant(0.0)
    with pytest.raises(ValueError, match="empty"):
        delta_sweep(_zero_init(), softplus, b, deltas=[])
    with pytest.raises(ValueError, match="decreasing"):
        delta_sweep(_zero_init(), softplus, b, deltas=[0.1, 0.2])


def test_equilibrium_sweep_has_zero_distances(softplus, tmp_path):
    b = BoundaryTensionProfile.constant(0.0)
    rep = delta_sweep(_zero_init(), softplus, b, deltas=[0.2, 0.1, 0.05], T=0.5, boxes=(2, 2))
    assert rep.failures == {}
    assert rep.distances["L1"] == [0.0, 0.0]
    assert all(v == 0.0 for v in rep.norms["L2"])
    assert all(y["max_variance"] == 0.0 for y in rep.young)
    rep.write(tmp_path, "eq", trajectory_stride=5)
    data = json.loads((tmp_path / "eq.json").read_text())
    assert data["deltas"] == [0.2, 0.1, 0.05]
    assert (tmp_path / "eq_delta_0.1.csv").exists()


def test_single_delta_gives_empty_distance_table(softplus):
    rep = delta_sweep(_zero_init(), softplus, BoundaryTensionProfile.constant(0.0), deltas=[0.1], T=0.2,
                      boxes=(2, 2))
    assert rep.distances == {"L1": [], "L1.5": []}
    assert rep.l1_decreasing()
