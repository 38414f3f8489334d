"""Constitutive law, boundary forcing, grids and initial data.

Everything here is immutable once built; the solver, thermodynamic
diagnostics and entropy construction all consume these objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, spence

Array = np.ndarray
_LOG2 = math.log(2.0)
_PI2_12 = math.pi**2 / 12.0


class ModelError(ValueError):
    """Raised for parameter sets that violate the constitutive assumptions."""


# ---------------------------------------------------------------------------
# tension laws
# ---------------------------------------------------------------------------


def _softplus(r):
    return np.logaddexp(0.0, r)


def _softplus_excess_primitive(r):
    """Integral over [0, r] of softplus(s) - log 2, free of cancellation."""
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    small = np.abs(r) < 1e-3
    rs = r[small]
    out[small] = rs**2 / 4 + rs**3 / 24 - rs**5 / 960 + rs**7 / 20160
    neg = (~small) & (r <= 0)
    rn = r[neg]
    # primitive of softplus is -Li2(-e^r); Li2(z) = spence(1 - z)
    out[neg] = -spence(1.0 + np.exp(rn)) - _PI2_12 - rn * _LOG2
    pos = (~small) & (r > 0)
    rp = r[pos]
    out[pos] = rp**2 / 2 + _PI2_12 + spence(1.0 + np.exp(-rp)) - rp * _LOG2
    return out


@dataclass(frozen=True)
class TensionModel:
    """A strictly increasing tension law with its derivatives and primitive.

    ``F`` is normalised so that ``F(0) = 0``; together with ``tau(0) = 0``
    this gives ``c1 r^2 / 2 <= F(r) <= c2 r^2 / 2``.
    """

    name: str
    c1: float
    c2: float
    tau: Callable[[Array], Array]
    dtau: Callable[[Array], Array]
    d2tau: Callable[[Array], Array]
    d3tau: Callable[[Array], Array]
    F: Callable[[Array], Array]
    params: dict = field(default_factory=dict)

    @property
    def is_linear(self) -> bool:
        return self.name == "linear"

    def inverse(self, s: float) -> float:
        return inverse_tension(self, s)


def make_softplus_tension(c1: float, c2: float) -> TensionModel:
    """Shifted softplus blend ``c1 r + (c2 - c1)(softplus(r) - log 2)``.

    Stiffness runs from ``c1`` (r -> -inf) to ``c2`` (r -> +inf), the
    curvature ``tau''`` is strictly positive and both ``tau''`` and
    ``tau'''`` decay exponentially, so they are square integrable.
    """
    if not (c1 > 0):
        raise ModelError(f"c1 must be positive, got {c1}")
    if not (c2 > c1):
        raise ModelError(f"c2 must exceed c1, got c1={c1}, c2={c2}")
    k = c2 - c1

    def tau(r):
        r = np.asarray(r, dtype=float)
        return c1 * r + k * (_softplus(r) - _LOG2)

    def dtau(r):
        return c1 + k * expit(np.asarray(r, dtype=float))

    def d2tau(r):
        s = expit(np.asarray(r, dtype=float))
        return k * s * (1.0 - s)

    def d3tau(r):
        s = expit(np.asarray(r, dtype=float))
        return k * s * (1.0 - s) * (1.0 - 2.0 * s)

    def F(r):
        r = np.asarray(r, dtype=float)
        return 0.5 * c1 * r**2 + k * _softplus_excess_primitive(np.atleast_1d(r)).reshape(r.shape)

    return TensionModel("softplus", c1, c2, tau, dtau, d2tau, d3tau, F, {"c1": c1, "c2": c2})


def make_linear_tension(c: float) -> TensionModel:
    """Linear law ``tau = c r``; used as an analytically solvable oracle."""
    if not (c > 0):
        raise ModelError(f"linear stiffness must be positive, got {c}")

    def zero(r):
        return np.zeros_like(np.asarray(r, dtype=float))

    return TensionModel(
        "linear",
        c,
        c,
        lambda r: c * np.asarray(r, dtype=float),
        lambda r: np.full_like(np.asarray(r, dtype=float), c),
        zero,
        zero,
        lambda r: 0.5 * c * np.asarray(r, dtype=float) ** 2,
        {"c": c},
    )


def inverse_tension(model: TensionModel, s: float, tol: float = 1e-14) -> float:
    """Solve ``tau(r) = s``.

    Since ``tau(0) = 0`` and ``c1 <= tau' <= c2`` the root lies between
    ``s / c2`` and ``s / c1``; Brent's method on that bracket.
    """
    s = float(s)
    if s == 0.0:
        return 0.0
    if model.is_linear:
        return s / model.c1
    lo, hi = sorted((s / model.c2, s / model.c1))
    f = lambda r: float(model.tau(r)) - s  # noqa: E731
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        # widen once; a law satisfying the stiffness bounds never gets here
        lo, hi = lo - abs(lo) - 1.0, hi + abs(hi) + 1.0
        if f(lo) * f(hi) > 0:
            raise ModelError(f"cannot bracket tau(r) = {s}; tension law is defective")
    return brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200)


def check_tension_conditions(model: TensionModel, samples: Array) -> dict:
    """Evaluate the structural conditions on a sample of strains.

    Returns a dict of booleans plus the measured extrema.
    """
    r = np.asarray(samples, dtype=float)
    d1, d2 = model.dtau(r), model.d2tau(r)
    F = model.F(r)
    tol = 1e-12 * (1.0 + r**2)
    out = {
        "stiffness_bounds": bool(np.all((d1 >= model.c1 - 1e-14) & (d1 <= model.c2 + 1e-14))),
        "quadratic_bounds": bool(
            np.all(F >= 0.5 * model.c1 * r**2 - tol) and np.all(F <= 0.5 * model.c2 * r**2 + tol)
        ),
        "sup_d2tau": float(np.max(np.abs(d2))),
        "sup_d3tau": float(np.max(np.abs(model.d3tau(r)))),
    }
    if model.is_linear:
        out["fixed_curvature_sign"] = False
    else:
        out["fixed_curvature_sign"] = bool(np.all(d2 > 0) or np.all(d2 < 0))
    return out


# ---------------------------------------------------------------------------
# boundary tension
# ---------------------------------------------------------------------------


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _dsmoothstep(u):
    inside = (u > 0.0) & (u < 1.0)
    uc = np.clip(u, 0.0, 1.0)
    return np.where(inside, 30.0 * uc**2 * (1.0 - uc) ** 2, 0.0)


@dataclass(frozen=True)
class BoundaryTensionProfile:
    """Applied tension ``tau_bar(t)``, frozen after ``t_star``.

    The default ramp uses the quintic smoothstep, which is C^2 and has a
    vanishing derivative at both ends of the ramp.
    """

    tau_start: float
    tau_end: float
    t_star: float

    def __post_init__(self):
        if not (self.t_star > 0):
            raise ModelError(f"t_star must be positive, got {self.t_star}")

    @classmethod
    def constant(cls, value: float) -> "BoundaryTensionProfile":
        return cls(value, value, 1.0)

    @property
    def is_constant(self) -> bool:
        return self.tau_start == self.tau_end

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.tau_start + (self.tau_end - self.tau_start) * _smoothstep(t / self.t_star)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return (self.tau_end - self.tau_start) / self.t_star * _dsmoothstep(t / self.t_star)

    def derivative_poly(self) -> np.polynomial.Polynomial:
        """``tau_bar'`` on ``[0, t_star]`` as a polynomial in ``t``."""
        u = np.polynomial.Polynomial([0.0, 1.0 / self.t_star])
        p = 30.0 * u**2 * (1 - u) ** 2
        return (self.tau_end - self.tau_start) / self.t_star * p

    @property
    def C_tau(self) -> float:
        """``sup_t (|tau_bar| + |tau_bar'|)``, by dense sampling of the ramp."""
        t = np.linspace(0.0, self.t_star, 20001)
        return float(np.max(np.abs(self(t)) + np.abs(self.derivative(t))))


# ---------------------------------------------------------------------------
# grid and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    M: int

    def __post_init__(self):
        if self.M < 2:
            raise ModelError(f"grid needs at least 2 cells, got M={self.M}")

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    @property
    def x(self) -> Array:
        return np.arange(self.M + 1) / self.M

    @property
    def weights(self) -> Array:
        w = np.full(self.M + 1, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def integrate(self, f: Array) -> float | Array:
        """Trapezoidal integral over [0, 1] along the last axis."""
        return np.asarray(f) @ self.weights


@dataclass(frozen=True)
class StateField:
    grid: Grid
    r: Array
    p: Array
    t: float = 0.0

    def __post_init__(self):
        n = self.grid.M + 1
        r = np.asarray(self.r, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if r.shape != (n,) or p.shape != (n,):
            raise ModelError(f"state arrays must have {n} entries, got {r.shape}, {p.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
            raise ModelError("state contains non-finite values")
        r.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)

    def replace(self, **kw) -> "StateField":
        args = {"grid": self.grid, "r": self.r, "p": self.p, "t": self.t}
        args.update(kw)
        return StateField(**args)


def eulerian_position(state: StateField, x: float | None = None):
    """Cumulative trapezoid ``q(x) = int_0^x r``.

    With ``x=None`` the whole nodal profile is returned; ``x`` must
    otherwise be a grid node.  ``q(1)`` is the total extension ``L``.
    """
    g = state.grid
    q = np.concatenate([[0.0], np.cumsum(0.5 * g.dx * (state.r[1:] + state.r[:-1]))])
    if x is None:
        return q
    j = int(round(float(x) * g.M))
    if abs(j * g.dx - float(x)) > 1e-12:
        raise ModelError(f"x={x} is not a grid node")
    return float(q[j])


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialData:
    r0: StateField  # full state; r0.r and r0.p are the prepared profiles
    h: float
    boundary_strain: float
    flags: dict

    @property
    def state(self) -> StateField:
        return self.r0


def _bump_kernel(h: float, dx: float) -> Array:
    K = int(math.floor(h / dx))
    if K < 1:
        return np.ones(1)
    s = np.arange(-K, K + 1) * dx / h
    w = np.zeros_like(s)
    inside = np.abs(s) < 1
    w[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return w / w.sum()


def _reflect(f: Array, K: int, left: str, right: str, left_val: float, right_val: float) -> Array:
    """Extend by K nodes: 'even' mirrors, 'odd' mirrors about the given value."""
    f = f.copy()
    if left == "odd":
        f[0] = left_val
    if right == "odd":
        f[-1] = right_val
    lo = f[1 : K + 1][::-1]
    hi = f[-K - 1 : -1][::-1]
    if left == "odd":
        lo = 2 * left_val - lo
    if right == "odd":
        hi = 2 * right_val - hi
    return np.concatenate([lo, f, hi])


def mollify_initial_data(
    raw_r0: Array,
    raw_p0: Array,
    model: TensionModel,
    boundary: BoundaryTensionProfile,
    delta: float | None = None,
    h: float = 0.0,
    grid: Grid | None = None,
) -> InitialData:
    """Smooth raw profiles and make them compatible with the viscous boundary set.

    Strain is reflected evenly at x=0 and oddly about ``tau^{-1}(tau_bar(0))``
    at x=1; momentum oddly about 0 at x=0 and evenly at x=1.  After the
    convolution with a bump of half-width ``h`` the four boundary relations
    are imposed exactly, the Neumann ones through the second-order one-sided
    stencil ``-3 u_0 + 4 u_1 - u_2 = 0``.
    """
    raw_r0 = np.asarray(raw_r0, dtype=float)
    raw_p0 = np.asarray(raw_p0, dtype=float)
    grid = grid or Grid(raw_r0.size - 1)
    a0 = inverse_tension(model, float(boundary(0.0)))
    ker = _bump_kernel(h, grid.dx)
    K = ker.size // 2
    if K > grid.M - 1:
        raise ModelError(f"mollifier width h={h} exceeds the domain")
    if K:
        r = np.convolve(_reflect(raw_r0, K, "even", "odd", 0.0, a0), ker, mode="valid")
        p = np.convolve(_reflect(raw_p0, K, "odd", "even", 0.0, 0.0), ker, mode="valid")
    else:
        r, p = raw_r0.copy(), raw_p0.copy()
    p[0] = 0.0
    r[-1] = a0
    r[0] = (4.0 * r[1] - r[2]) / 3.0
    p[-1] = (4.0 * p[-2] - p[-3]) / 3.0
    state = StateField(grid, r, p, 0.0)
    flags = compatibility_defects(state, a0)
    return InitialData(state, h, a0, flags)


def compatibility_defects(state: StateField, boundary_strain: float) -> dict:
    r, p, dx = state.r, state.p, state.grid.dx
    return {
        "p_left": abs(float(p[0])),
        "r_right": abs(float(r[-1]) - boundary_strain),
        "r_x_left": abs(float(-3 * r[0] + 4 * r[1] - r[2]) / (2 * dx)),
        "p_x_right": abs(float(3 * p[-1] - 4 * p[-2] + p[-3]) / (2 * dx)),
    }


def viscous_data_norm(init: InitialData, delta: float) -> float:
    """``|r0| + |p0| + sqrt(delta)(|r0'| + |p0'|)`` in discrete L^2."""
    s = init.state
    g = s.grid
    l2 = lambda f: math.sqrt(float(g.integrate(f**2)))  # noqa: E731
    cell = lambda f: math.sqrt(float(np.sum(np.diff(f) ** 2) / g.dx))  # noqa: E731
    return l2(s.r) + l2(s.p) + math.sqrt(delta) * (cell(s.r) + cell(s.p))


def cosine_profiles(grid: Grid, model: TensionModel, boundary: BoundaryTensionProfile,
                    r_amp: float, p_amp: float) -> tuple[Array, Array]:
    """Smooth profiles already compatible with all four boundary relations."""
    x = grid.x
    a0 = inverse_tension(model, float(boundary(0.0)))
    return a0 + r_amp * np.cos(0.5 * np.pi * x), p_amp * np.sin(0.5 * np.pi * x)


def linear_counterpart(model: TensionModel, boundary: BoundaryTensionProfile,
                       c: float | None = None) -> tuple[TensionModel, BoundaryTensionProfile]:
    """Linear law ``c r`` with a ramp that moves the boundary strain between the same end values.

    ``c`` defaults to the mid stiffness ``(c1 + c2) / 2``.
    """
    c = 0.5 * (model.c1 + model.c2) if c is None else c
    lin = make_linear_tension(c)
    a0 = inverse_tension(model, boundary.tau_start)
    a1 = inverse_tension(model, boundary.tau_end)
    return lin, BoundaryTensionProfile(c * a0, c * a1, boundary.t_star)
