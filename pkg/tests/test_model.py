import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from quasiwave.model import (BoundaryTensionProfile, Grid, ModelError, StateField, check_tension_conditions,
                             compatibility_defects, cosine_profiles, eulerian_position, inverse_tension,
                             linear_counterpart, make_linear_tension, make_softplus_tension,
                             mollify_initial_data, viscous_data_norm)

# F(r) = int_0^r tau for c1=1, c2=2, by adaptive quadrature (scipy.integrate.quad)
F_QUAD = {1.0: 0.7906718564607157, -2.5: 4.115860187224215, 3.0: 7.693844771405452}
# root of tau(r) = 2 by 200 bisection steps on [0, 2]
TAU_INV_2 = 1.2168725190390652


def test_softplus_examples(softplus):
    assert float(softplus.tau(0.0)) == 0.0
    assert float(softplus.dtau(0.0)) == 1.5
    assert 4.5 <= float(softplus.F(3.0)) <= 9.0


@pytest.mark.parametrize("r", sorted(F_QUAD))
def test_free_energy_primitive_matches_quadrature(softplus, r):
    assert float(softplus.F(r)) == pytest.approx(F_QUAD[r], rel=1e-13)


def test_parameter_validation():
    with pytest.raises(ModelError):
        make_softplus_tension(0.0, 2.0)
    with pytest.raises(ModelError):
        make_softplus_tension(2.0, 2.0)
    with pytest.raises(ModelError):
        make_linear_tension(-1.0)


def test_structural_conditions_on_random_samples(softplus):
    r = np.random.default_rng(0).uniform(-20, 20, 10_000)
    out = check_tension_conditions(softplus, r)
    assert out["stiffness_bounds"] and out["quadratic_bounds"] and out["fixed_curvature_sign"]
    assert out["sup_d2tau"] <= 0.25 + 1e-15


def test_curvature_square_integrable_and_stable(softplus):
    vals = []
    for L in (10, 20, 40):
        r = np.linspace(-L, L, 200_001)
        vals.append([trapezoid(softplus.d2tau(r) ** 2, r), trapezoid(softplus.d3tau(r) ** 2, r)])
    vals = np.array(vals)
    assert np.all(np.isfinite(vals))
    np.testing.assert_allclose(vals[1], vals[2], rtol=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.floats(-30, 30))
def test_primitive_derivative_is_tension(r):
    m = make_softplus_tension(1.0, 2.0)
    h = 1e-4
    fd = (float(m.F(r + h)) - float(m.F(r - h))) / (2 * h)
    assert fd == pytest.approx(float(m.tau(r)), abs=1e-6 * (1 + abs(r)))


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10))
def test_inverse_round_trip(r):
    m = make_softplus_tension(1.0, 2.0)
    assert inverse_tension(m, float(m.tau(r))) == pytest.approx(r, abs=1e-10)


def test_inverse_examples(softplus):
    assert inverse_tension(softplus, 0.0) == 0.0
    assert inverse_tension(softplus, float(softplus.tau(1.7))) == pytest.approx(1.7, abs=1e-12)
    assert inverse_tension(softplus, 2.0) == pytest.approx(TAU_INV_2, abs=1e-12)


def test_ramp_frozen_after_t_star_and_bounded(ramp):
    t = np.linspace(0, 3, 3001)
    assert np.all(ramp.derivative(t[t >= ramp.t_star]) == 0.0)
    assert float(ramp(0.0)) == 0.0 and float(ramp(5.0)) == ramp.tau_end
    assert np.all(np.abs(ramp(t)) + np.abs(ramp.derivative(t)) <= ramp.C_tau + 1e-12)
    # derivative polynomial agrees with the pointwise derivative on the ramp
    tt = np.linspace(0, 1, 11)
    np.testing.assert_allclose(ramp.derivative_poly()(tt), ramp.derivative(tt), atol=1e-13)


def test_constant_profile():
    b = BoundaryTensionProfile.constant(0.7)
    assert b.is_constant and float(b(2.0)) == 0.7 and b.C_tau == pytest.approx(0.7)


def test_mollify_zero_data_stays_zero(softplus):
    g = Grid(64)
    d = mollify_initial_data(np.zeros(65), np.zeros(65), softplus, BoundaryTensionProfile.constant(0.0),
                             h=1 / 16, grid=g)
    assert np.all(d.state.r == 0) and np.all(d.state.p == 0)


def test_mollify_constant_strain_unchanged(softplus):
    g = Grid(64)
    rstar = 0.8
    b = BoundaryTensionProfile.constant(float(softplus.tau(rstar)))
    d = mollify_initial_data(np.full(65, rstar), np.zeros(65), softplus, b, h=1 / 16, grid=g)
    np.testing.assert_allclose(d.state.r, rstar, atol=1e-14)
    assert np.all(d.state.p == 0)


def test_mollified_step_error_scales_like_sqrt_h(softplus):
    g = Grid(512)
    raw = (g.x < 0.5).astype(float)
    hs = np.array([1 / 16, 1 / 32, 1 / 64])
    errs = []
    for h in hs:
        d = mollify_initial_data(raw, np.zeros_like(raw), softplus, BoundaryTensionProfile.constant(0.0),
                                 h=h, grid=g)
        errs.append(math.sqrt(g.integrate((d.state.r - raw) ** 2)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope == pytest.approx(0.5, abs=0.05)
    assert max(np.array(errs) / np.sqrt(hs)) < 0.33


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.0, 1 / 32, 1 / 16]))
def test_mollified_data_meet_compatibility_exactly(seed, h):
    m = make_softplus_tension(1.0, 2.0)
    g = Grid(64)
    rng = np.random.default_rng(seed)
    b = BoundaryTensionProfile(float(rng.uniform(-1, 1)), 0.0, 1.0)
    d = mollify_initial_data(rng.normal(size=65), rng.normal(size=65), m, b, h=h, grid=g)
    f = d.flags
    assert f["p_left"] == 0.0 and f["r_right"] == 0.0
    assert f["r_x_left"] < 1e-10 and f["p_x_right"] < 1e-10
    assert d.state.r[-1] == inverse_tension(m, float(b(0.0)))


def test_viscous_data_norm_uniform_over_sweep(ramp_init):
    norms = [viscous_data_norm(ramp_init, d) for d in (0.2, 0.1, 0.05, 0.025, 0.0125)]
    assert max(norms) <= viscous_data_norm(ramp_init, 0.2) and min(norms) > 0


def test_eulerian_position_examples():
    g = Grid(100)
    assert np.all(eulerian_position(StateField(g, np.zeros(101), np.zeros(101))) == 0)
    assert eulerian_position(StateField(g, np.full(101, 2.0), np.zeros(101)), 1.0) == pytest.approx(2.0)
    assert eulerian_position(StateField(g, g.x, np.zeros(101)), 1.0) == pytest.approx(0.5, abs=1e-4)
    with pytest.raises(ModelError):
        eulerian_position(StateField(g, g.x, np.zeros(101)), 0.123456)


def test_state_validation():
    g = Grid(4)
    with pytest.raises(ModelError):
        StateField(g, np.zeros(4), np.zeros(5))
    with pytest.raises(ModelError):
        StateField(g, np.full(5, np.nan), np.zeros(5))


def test_cosine_profiles_compatible(softplus, ramp):
    g = Grid(50)
    r, p = cosine_profiles(g, softplus, ramp, 0.5, 0.25)
    flags = compatibility_defects(StateField(g, r, p), 0.0)
    assert flags["p_left"] == 0 and flags["r_right"] < 1e-15


def test_linear_counterpart_shares_strain_endpoints(softplus, ramp):
    lin, lb = linear_counterpart(softplus, ramp)
    assert lin.c1 == 1.5
    assert inverse_tension(lin, lb.tau_end) == pytest.approx(inverse_tension(softplus, ramp.tau_end))
    assert lb.t_star == ramp.t_star
