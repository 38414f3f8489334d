"""Lax entropy pairs built in Riemann coordinates, and their production.

The pair is obtained from ``(H, Q)`` on a rectangle in ``(w1, w2)``:

    H_{w1} = a Q,   Q_{w2} = -a H,   H(w1_0, .) = g,   Q(., w2_0) = 0,

solved by the Volterra series ``H = g + sum_n A^n g`` with

    (A f)(w1, w2) = -int_{w1_0}^{w1} a(v - w2) int_{w2_0}^{w2} a(v - u) f(v, u) du dv,

and mapped back by ``eta = (tau')^{-1/4} (H + Q) / 2``,
``q = (tau')^{1/4} (H - Q) / 2``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline, RegularGridInterpolator

from .model import TensionModel
from .viscous_solver import Trajectory

TOL_SERIES = 1e-10
MAX_DEPTH = 64
MARGIN = 0.2
DERIVATIVE_KEYS = ("eta_r", "eta_p", "q_r", "q_p", "eta_rr", "eta_rp", "eta_pp")


class GoursatError(RuntimeError):
    """The Neumann series did not reach the requested tolerance."""


# ---------------------------------------------------------------------------
# Riemann coordinates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiemannCoords:
    """Tabulated ``z(r) = int_0^r sqrt(tau')`` and its inverse."""

    model: TensionModel
    r_nodes: np.ndarray
    z_nodes: np.ndarray
    resolution: int
    _z: CubicHermiteSpline = field(repr=False)
    _r: CubicHermiteSpline = field(repr=False)

    @property
    def r_range(self) -> tuple[float, float]:
        return float(self.r_nodes[0]), float(self.r_nodes[-1])

    @property
    def z_range(self) -> tuple[float, float]:
        return float(self.z_nodes[0]), float(self.z_nodes[-1])

    def z(self, r):
        return self._z(np.asarray(r, dtype=float))

    def r_of_z(self, z):
        return self._r(np.asarray(z, dtype=float))

    def to_w(self, r, p):
        z = self.z(r)
        p = np.asarray(p, dtype=float)
        return p + z, p - z

    def to_rp(self, w1, w2):
        w1, w2 = np.asarray(w1, dtype=float), np.asarray(w2, dtype=float)
        return self.r_of_z(0.5 * (w1 - w2)), 0.5 * (w1 + w2)

    def covering(self, z_lo: float, z_hi: float) -> "RiemannCoords":
        """Return coordinates whose z-table contains ``[z_lo, z_hi]``."""
        lo, hi = self.z_range
        if z_lo >= lo and z_hi <= hi:
            return self
        s = math.sqrt(self.model.c1)
        r_lo = min(self.r_range[0], z_lo / s - 1.0)
        r_hi = max(self.r_range[1], z_hi / s + 1.0)
        h = (self.r_range[1] - self.r_range[0]) / (self.resolution - 1)
        n = int(math.ceil((r_hi - r_lo) / h)) + 1
        return riemann_z(self.model, (r_lo, r_hi), n)


def riemann_z(model: TensionModel, r_range: tuple[float, float] = (-3.0, 3.0),
              resolution: int = 2001) -> RiemannCoords:
    """Cumulative 8-point Gauss-Legendre integration of ``sqrt(tau')``.

    The node set always contains ``r = 0`` so that ``z(0) = 0`` exactly.
    Both directions use cubic Hermite interpolation with exact slopes.
    """
    lo, hi = min(r_range[0], 0.0), max(r_range[1], 0.0)
    if not hi > lo:
        raise ValueError(f"empty r-range {r_range}")
    resolution = max(int(resolution), 3)
    h = (hi - lo) / (resolution - 1)
    n_lo, n_hi = int(math.ceil(-lo / h)), int(math.ceil(hi / h))
    r = np.concatenate([np.linspace(lo, 0.0, n_lo + 1)[:-1] if n_lo else np.empty(0),
                        np.linspace(0.0, hi, n_hi + 1) if n_hi else np.zeros(1)])
    xg, wg = np.polynomial.legendre.leggauss(8)
    a, b = r[:-1, None], r[1:, None]
    pts = 0.5 * (a + b) + 0.5 * (b - a) * xg
    cell = 0.5 * (b - a)[:, 0] * (np.sqrt(model.dtau(pts)) @ wg)
    z = np.concatenate([[0.0], np.cumsum(cell)])
    z -= z[n_lo]
    slope = np.sqrt(model.dtau(r))
    zs = CubicHermiteSpline(r, z, slope, extrapolate=True)
    rs = CubicHermiteSpline(z, r, 1.0 / slope, extrapolate=True)
    return RiemannCoords(model, r, z, resolution, zs, rs)


def coeff_a(model: TensionModel, coords: RiemannCoords, d):
    """``a = tau'' / (8 tau'^{3/2})`` at ``r = z^{-1}(d / 2)``, ``d = w1 - w2``."""
    d = np.asarray(d, dtype=float)
    half = 0.5 * d
    coords = coords.covering(float(np.min(half)), float(np.max(half)))
    r = coords.r_of_z(half)
    return model.d2tau(r) / (8.0 * model.dtau(r) ** 1.5)


# ---------------------------------------------------------------------------
# Goursat data and problem
# ---------------------------------------------------------------------------


def bump_datum(center: float, half_width: float, amplitude: float = 1.0) -> Callable:
    """C^2 bump ``A (1 - s^2)^3`` on ``|s| < 1``, ``s = (w - center) / half_width``."""

    def g(w):
        s = (np.asarray(w, dtype=float) - center) / half_width
        return amplitude * np.where(np.abs(s) < 1, (1 - s**2) ** 3, 0.0)

    g.support = (center - half_width, center + half_width)
    return g


def hat_datum(center: float, half_width: float, amplitude: float = 1.0) -> Callable:
    """Piecewise-linear hat; continuous with compact support but kinked."""

    def g(w):
        s = (np.asarray(w, dtype=float) - center) / half_width
        return amplitude * np.clip(1 - np.abs(s), 0.0, None)

    g.support = (center - half_width, center + half_width)
    return g


DATA = {"bump": bump_datum, "hat": hat_datum}


@dataclass(frozen=True)
class GoursatProblem:
    """Rectangle ``[w1_0, w1_0 + L1] x [w2_0, w2_0 + L2]`` with square cells."""

    corner: tuple[float, float]
    extent: tuple[float, float]
    n2: int
    datum: Callable
    datum_name: str = "bump"

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError(f"rectangle extent must be positive, got {self.extent}")
        if self.n2 < 4:
            raise ValueError(f"need at least 4 cells along w2, got {self.n2}")
        lo, hi = getattr(self.datum, "support", (None, None))
        w2_lo, w2_hi = self.corner[1], self.corner[1] + self.extent[1]
        if lo is not None and not (w2_lo < lo and hi < w2_hi):
            raise ValueError(f"datum support [{lo}, {hi}] not strictly inside [{w2_lo}, {w2_hi}]")

    @property
    def h(self) -> float:
        return self.extent[1] / self.n2

    @property
    def n1(self) -> int:
        return max(int(math.ceil(self.extent[0] / self.h - 1e-9)), 1)

    @property
    def w1(self) -> np.ndarray:
        return self.corner[0] + self.h * np.arange(self.n1 + 1)

    @property
    def w2(self) -> np.ndarray:
        return self.corner[1] + self.h * np.arange(self.n2 + 1)

    def refined(self, factor: int = 2) -> "GoursatProblem":
        return GoursatProblem(self.corner, self.extent, self.n2 * factor, self.datum, self.datum_name)


def visited_w_range(coords: RiemannCoords, r, p) -> tuple[tuple[float, float], tuple[float, float]]:
    w1, w2 = coords.to_w(np.ravel(r), np.ravel(p))
    return (float(w1.min()), float(w1.max())), (float(w2.min()), float(w2.max()))


def default_problem(w1_range, w2_range, n2: int = 64, datum: str = "bump",
                    margin: float = MARGIN) -> GoursatProblem:
    """Rectangle covering the given ranges plus ``margin`` of their width on each side.

    The datum is centred in the ``w2`` range with support on its middle 80%.
    """
    if datum not in DATA:
        raise ValueError(f"unknown Goursat datum {datum!r}; choose from {sorted(DATA)}")

    def pad(lo, hi):
        w = max(hi - lo, 1e-3)
        return lo - margin * w, hi + margin * w

    a1, b1 = pad(*w1_range)
    a2, b2 = pad(*w2_range)
    g = DATA[datum](0.5 * (a2 + b2), 0.4 * (b2 - a2))
    return GoursatProblem((a1, a2), (b1 - a1, b2 - a2), n2, g, datum)


# ---------------------------------------------------------------------------
# pairs
# ---------------------------------------------------------------------------


class ClosedFormPair:
    """An entropy pair with analytic derivatives in ``(r, p)``."""

    name = "closed"
    convex = False

    def __init__(self, model: TensionModel):
        self.model = model

    def values(self, r, p) -> dict:
        raise NotImplementedError


class MomentumPair(ClosedFormPair):
    """``eta = p``, ``q = -tau(r)``."""

    name = "momentum"

    def values(self, r, p):
        r, p = np.asarray(r, dtype=float), np.asarray(p, dtype=float)
        z, o = np.zeros_like(r + p), np.ones_like(r + p)
        m = self.model
        return {"eta": p + 0 * r, "q": -m.tau(r) + 0 * p, "eta_r": z, "eta_p": o,
                "q_r": -m.dtau(r) + 0 * p, "q_p": z, "eta_rr": z, "eta_rp": z, "eta_pp": z}


class FreeEnergyPair(ClosedFormPair):
    """``eta = p^2/2 + F(r)``, ``q = -p tau(r)``; convex since ``tau' > 0``."""

    name = "free_energy"
    convex = True

    def values(self, r, p):
        r, p = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(p, dtype=float))
        m = self.model
        tau, dtau = m.tau(r), m.dtau(r)
        return {"eta": 0.5 * p**2 + m.F(r), "q": -p * tau, "eta_r": tau, "eta_p": p,
                "q_r": -p * dtau, "q_p": -tau, "eta_rr": dtau, "eta_rp": np.zeros_like(r),
                "eta_pp": np.ones_like(r)}


@dataclass
class EntropyPair:
    """Tabulated pair on a ``(w1, w2)`` grid with ``(r, p)`` derivatives."""

    problem: GoursatProblem
    coords: RiemannCoords
    w1: np.ndarray
    w2: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    eta: np.ndarray
    q: np.ndarray
    derivs: dict
    depth: int
    increments: list
    residuals: tuple = (math.nan, math.nan)
    name: str = "goursat"
    convex: bool = False

    @property
    def increment_ratios(self) -> np.ndarray:
        inc = np.asarray(self.increments, dtype=float)
        if inc.size < 2:
            return np.zeros(0)
        return inc[1:] / inc[:-1]

    def bounds(self) -> dict:
        """Sup norms of the pair and its derivatives over the rectangle."""
        out = {"eta": float(np.max(np.abs(self.eta))), "q": float(np.max(np.abs(self.q)))}
        out.update({k: float(np.max(np.abs(v))) for k, v in self.derivs.items()})
        return out

    def contains(self, r, p) -> np.ndarray:
        """Mask of states whose Riemann coordinates lie in the rectangle."""
        w1, w2 = self.coords.to_w(r, p)
        return ((w1 >= self.w1[0]) & (w1 <= self.w1[-1])
                & (w2 >= self.w2[0]) & (w2 <= self.w2[-1]))

    def values(self, r, p, keys=None) -> dict:
        """Linear interpolation of tabulated fields at states ``(r, p)``.

        States outside the rectangle raise ``ValueError``.
        """
        w1, w2 = self.coords.to_w(r, p)
        pts = np.stack([np.ravel(w1), np.ravel(w2)], axis=-1)
        shape = np.shape(w1)
        tables = {"eta": self.eta, "q": self.q, **self.derivs}
        out = {}
        for key in keys or tables:
            f = RegularGridInterpolator((self.w1, self.w2), tables[key], bounds_error=True)
            out[key] = f(pts).reshape(shape)
        return out

    def write(self, directory: Path, stem: str = "entropy_pair") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["w1", "w2", "H", "Q", "eta", "q"])
            for i, a in enumerate(self.w1):
                for j, b in enumerate(self.w2):
                    w.writerow([repr(float(v)) for v in
                                (a, b, self.H[i, j], self.Q[i, j], self.eta[i, j], self.q[i, j])])
        meta = {
            "corner": list(self.problem.corner),
            "extent": list(self.problem.extent),
            "h": self.problem.h,
            "datum": self.problem.datum_name,
            "depth": self.depth,
            "increments": [float(v) for v in self.increments],
            "lax_residuals": [float(v) for v in self.residuals],
            "bounds": self.bounds(),
        }
        (directory / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _cumtrapz(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * h * (f[1:] + f[:-1]), axis=0)
    return np.moveaxis(out, 0, axis)


def _grad(f, h):
    return (np.gradient(f, h, axis=0, edge_order=2), np.gradient(f, h, axis=1, edge_order=2))


def goursat_solve(problem: GoursatProblem, model: TensionModel, coords: RiemannCoords,
                  tol_series: float = TOL_SERIES, max_depth: int = MAX_DEPTH) -> EntropyPair:
    """Solve the Goursat problem by the Neumann series and tabulate ``(eta, q)``."""
    w1, w2, h = problem.w1, problem.w2, problem.h
    D = w1[:, None] - w2[None, :]
    coords = coords.covering(0.5 * float(D.min()), 0.5 * float(D.max()))
    A = coeff_a(model, coords, D)
    g = np.broadcast_to(problem.datum(w2)[None, :], D.shape).copy()
    g_norm = float(np.max(np.abs(g)))
    if g_norm == 0:
        raise ValueError("Goursat datum vanishes identically")

    H = g.copy()
    f = g
    increments = []
    depth = 0
    while True:
        if depth >= max_depth:
            raise GoursatError(
                f"series did not converge in {max_depth} terms (last increment "
                f"{increments[-1]:.3g}); refine the grid or shrink the rectangle")
        f = -_cumtrapz(A * _cumtrapz(A * f, h, axis=1), h, axis=0)
        depth += 1
        inc = float(np.max(np.abs(f)))
        increments.append(inc)
        H += f
        if inc < tol_series * g_norm:
            break
    Q = -_cumtrapz(A * H, h, axis=1)

    r, p = coords.to_rp(w1[:, None], w2[None, :])
    tp = model.dtau(r)
    eta = 0.5 * tp**-0.25 * (H + Q)
    q = 0.5 * tp**0.25 * (H - Q)

    c = np.sqrt(tp)
    c_r = model.d2tau(r) / (2.0 * c)
    e1, e2 = _grad(eta, h)
    q1, q2 = _grad(q, h)
    e11, e12 = _grad(e1, h)
    _, e22 = _grad(e2, h)
    derivs = {
        "eta_r": c * (e1 - e2),
        "eta_p": e1 + e2,
        "q_r": c * (q1 - q2),
        "q_p": q1 + q2,
        "eta_rr": c_r * (e1 - e2) + c**2 * (e11 - 2 * e12 + e22),
        "eta_rp": c * (e11 - e22),
        "eta_pp": e11 + 2 * e12 + e22,
    }
    pair = EntropyPair(problem, coords, w1, w2, H, Q, eta, q, derivs, depth, increments)
    pair.residuals = lax_residual(pair, model)
    return pair


def lax_residual(pair, model: TensionModel, r_range=(-1.0, 1.0), p_range=(-1.0, 1.0),
                 n: int = 101) -> tuple[float, float]:
    """Sup norms of ``eta_r + q_p`` and ``tau' eta_p + q_r``.

    Tabulated pairs are checked on the interior of their own grid; closed
    form pairs on an ``n x n`` grid over the given ``(r, p)`` box.
    """
    if isinstance(pair, EntropyPair):
        d = {k: v[1:-1, 1:-1] for k, v in pair.derivs.items()}
        r, _ = pair.coords.to_rp(pair.w1[1:-1, None], pair.w2[None, 1:-1])
    else:
        r, p = np.meshgrid(np.linspace(*r_range, n), np.linspace(*p_range, n), indexing="ij")
        d = pair.values(r, p)
    res1 = d["eta_r"] + d["q_p"]
    res2 = model.dtau(r) * d["eta_p"] + d["q_r"]
    return float(np.max(np.abs(res1))), float(np.max(np.abs(res2)))


# ---------------------------------------------------------------------------
# entropy production along viscous solutions
# ---------------------------------------------------------------------------


@dataclass
class EntropyProduction:
    """Cell-integrated terms of the entropy balance on ``Q_T``.

    All arrays have shape ``(S-1, M)``: one entry per space-time cell.
    ``sigma = delta (eta_r r_x + eta_p p_x)_x - (eta_t + q_x)`` is the
    production, which is non-negative for convex entropies;
    ``residual = eta_t + q_x - flux + dissipation`` vanishes in the limit.
    """

    pair_name: str
    convex: bool
    delta: float
    times: np.ndarray
    transport: np.ndarray
    flux: np.ndarray
    dissipation: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return self.flux - self.transport

    @property
    def residual(self) -> np.ndarray:
        return self.transport - self.flux + self.dissipation

    def cell_area(self, dx: float) -> np.ndarray:
        return np.diff(self.times)[:, None] * dx

    def min_sigma(self) -> float:
        return float(np.min(self.sigma))

    def summary(self, tol: float | None = None) -> dict:
        out = {
            "pair": self.pair_name,
            "delta": self.delta,
            "total_production": float(np.sum(self.sigma)),
            "min_cell_production": self.min_sigma(),
            "max_identity_residual": float(np.max(np.abs(self.residual))),
        }
        if tol is not None and self.convex:
            out["tol"] = tol
            out["fraction_ok"] = float(np.mean(self.sigma >= -tol))
        return out


def _x_derivative(f: np.ndarray, dx: float) -> np.ndarray:
    return np.gradient(f, dx, axis=-1, edge_order=2)


def entropy_production(pair, trajectory: Trajectory, delta: float | None = None) -> EntropyProduction:
    """Integrate each term of the entropy balance over every grid cell.

    Time integrals use the trapezoid rule on consecutive snapshots, space
    integrals the trapezoid rule on the two nodes of a cell.  The strain
    slope at ``x = 0`` and the momentum slope at ``x = 1`` are set to zero,
    as the boundary conditions require.
    """
    delta = trajectory.delta if delta is None else delta
    t, r, p = trajectory.times, trajectory.r, trajectory.p
    dx = trajectory.grid.dx
    v = pair.values(r, p)
    r_x = _x_derivative(r, dx)
    p_x = _x_derivative(p, dx)
    r_x[:, 0] = 0.0
    p_x[:, -1] = 0.0
    phi = v["eta_r"] * r_x + v["eta_p"] * p_x
    quad = v["eta_rr"] * r_x**2 + 2 * v["eta_rp"] * r_x * p_x + v["eta_pp"] * p_x**2

    dt = np.diff(t)[:, None]
    d_eta = np.diff(v["eta"], axis=0)
    transport = 0.5 * dx * (d_eta[:, 1:] + d_eta[:, :-1])
    dq = np.diff(v["q"], axis=1)
    transport = transport + 0.5 * dt * (dq[1:] + dq[:-1])
    dphi = np.diff(phi, axis=1)
    flux = delta * 0.5 * dt * (dphi[1:] + dphi[:-1])
    corners = quad[1:, 1:] + quad[1:, :-1] + quad[:-1, 1:] + quad[:-1, :-1]
    dissipation = delta * 0.25 * dt * dx * corners
    return EntropyProduction(getattr(pair, "name", "pair"), bool(getattr(pair, "convex", False)),
                             delta, t.copy(), transport, flux, dissipation)


def production_tolerance(oracle: EntropyProduction, safety: float = 5.0) -> float:
    """``safety`` times the largest cell identity residual of an oracle run."""
    return safety * max(float(np.max(np.abs(oracle.residual))), np.finfo(float).eps)
