"""Vanishing-viscosity sweeps: strong convergence, weak residuals, oscillation diagnostics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import BoundaryTensionProfile, InitialData, TensionModel
from .thermo import clausius_gap, energy_J, gronwall_bound, initial_constant
from .viscous_solver import SolverError, Trajectory, ViscousConfig, solve

DEFAULT_DELTAS = (0.2, 0.1, 0.05, 0.025, 0.0125)
LP_EXPONENTS = (1.0, 1.5)
MIN_BOX_SAMPLES = 10


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Separable ``T(t / T_end) X(x)`` used in the weak formulation.

    r-tests must vanish at x = 1, p-tests at x = 0.
    """

    __test__ = False  # not a pytest class

    name: str
    kind: str
    X: Callable
    dX: Callable
    T: Callable
    dT: Callable
    t_end: float = 1.0

    def __post_init__(self):
        if self.kind not in ("r", "p"):
            raise ValueError(f"test function kind must be 'r' or 'p', got {self.kind!r}")
        edge = 1.0 if self.kind == "r" else 0.0
        if abs(float(self.X(np.array([edge]))[0])) > 1e-12:
            raise ValueError(f"test function {self.name!r} does not vanish at x={edge:g}")

    def value(self, t, x):
        return np.outer(self.T(np.asarray(t) / self.t_end), self.X(np.asarray(x)))

    def d_t(self, t, x):
        return np.outer(self.dT(np.asarray(t) / self.t_end) / self.t_end, self.X(np.asarray(x)))

    def d_x(self, t, x):
        return np.outer(self.T(np.asarray(t) / self.t_end), self.dX(np.asarray(x)))


_PI = math.pi
_R_PROFILES = {
    "1-x": (lambda x: 1 - x, lambda x: -np.ones_like(x)),
    "x(1-x)": (lambda x: x * (1 - x), lambda x: 1 - 2 * x),
    "cos(pi x/2)": (lambda x: np.cos(0.5 * _PI * x), lambda x: -0.5 * _PI * np.sin(0.5 * _PI * x)),
    "cos(3pi x/2)": (lambda x: np.cos(1.5 * _PI * x), lambda x: -1.5 * _PI * np.sin(1.5 * _PI * x)),
}
_P_PROFILES = {
    "x": (lambda x: np.asarray(x, dtype=float), lambda x: np.ones_like(x)),
    "x(1-x)": (lambda x: x * (1 - x), lambda x: 1 - 2 * x),
    "sin(pi x/2)": (lambda x: np.sin(0.5 * _PI * x), lambda x: 0.5 * _PI * np.cos(0.5 * _PI * x)),
    "sin(3pi x/2)": (lambda x: np.sin(1.5 * _PI * x), lambda x: 1.5 * _PI * np.cos(1.5 * _PI * x)),
}
_T_PROFILES = {
    "1": (lambda s: np.ones_like(s, dtype=float), lambda s: np.zeros_like(s, dtype=float)),
    "1-3s^2+2s^3": (lambda s: 1 - 3 * s**2 + 2 * s**3, lambda s: -6 * s + 6 * s**2),
}


def test_functions(t_end: float) -> list[TestFunction]:
    """The 16 shipped test functions, 8 per equation."""
    out = []
    for kind, profiles in (("r", _R_PROFILES), ("p", _P_PROFILES)):
        for xname, (X, dX) in profiles.items():
            for tname, (T, dT) in _T_PROFILES.items():
                out.append(TestFunction(f"{kind}:{xname}*{tname}", kind, X, dX, T, dT, t_end))
    return out


test_functions.__test__ = False


def _cumtrapz(f, t):
    out = np.zeros(t.size)
    out[1:] = np.cumsum(0.5 * np.diff(t) * (f[1:] + f[:-1]))
    return out


def weak_residual_r(traj: Trajectory, phi: TestFunction) -> np.ndarray:
    """``int phi r(t) - int phi(0) r_0 - int_0^t int (phi_s r - phi_x p)`` per snapshot."""
    if phi.kind != "r":
        raise ValueError(f"{phi.name!r} is not an admissible strain test function")
    t, x, w = traj.times, traj.grid.x, traj.grid.weights
    lhs = (phi.value(t, x) * traj.r) @ w
    integrand = (phi.d_t(t, x) * traj.r - phi.d_x(t, x) * traj.p) @ w
    return lhs - lhs[0] - _cumtrapz(integrand, t)


def weak_residual_p(traj: Trajectory, psi: TestFunction, model: TensionModel,
                    boundary: BoundaryTensionProfile) -> np.ndarray:
    """Momentum analogue including the boundary work ``int_0^t psi(s,1) tau_bar(s) ds``."""
    if psi.kind != "p":
        raise ValueError(f"{psi.name!r} is not an admissible momentum test function")
    t, x, w = traj.times, traj.grid.x, traj.grid.weights
    lhs = (psi.value(t, x) * traj.p) @ w
    integrand = (psi.d_t(t, x) * traj.p - psi.d_x(t, x) * model.tau(traj.r)) @ w
    integrand = integrand + psi.value(t, np.array([1.0]))[:, 0] * boundary(t)
    return lhs - lhs[0] - _cumtrapz(integrand, t)


def weak_residuals(traj: Trajectory, model: TensionModel, boundary: BoundaryTensionProfile,
                   tests: Sequence[TestFunction] | None = None) -> dict:
    """Max-in-time absolute weak residual for each test function."""
    tests = test_functions(float(traj.times[-1]) or 1.0) if tests is None else tests
    out = {}
    for f in tests:
        res = weak_residual_r(traj, f) if f.kind == "r" else weak_residual_p(traj, f, model, boundary)
        out[f.name] = float(np.max(np.abs(res)))
    return out


def loglog_slope(deltas, values) -> float:
    """Least-squares slope of ``log values`` against ``log deltas``."""
    d, v = np.asarray(deltas, dtype=float), np.asarray(values, dtype=float)
    if d.size < 2 or np.any(v <= 0):
        return math.nan
    return float(np.polyfit(np.log(d), np.log(v), 1)[0])


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def lp_norm(traj: Trajectory, p: float, other: Trajectory | None = None) -> float:
    """Normalised ``L^p(Q_T)`` norm of ``|u|`` (or of ``|u - other|``).

    ``|u| = sqrt(r^2 + p^2)``; space and time by trapezoid; the measure of
    ``Q_T`` is scaled to one so the norms are ordered in ``p``.
    """
    r, q = traj.r, traj.p
    if other is not None:
        if other.r.shape != r.shape or not np.allclose(other.times, traj.times):
            raise ValueError("trajectories must share grid and snapshot times")
        r, q = r - other.r, q - other.p
    mag = np.sqrt(r**2 + q**2) ** p
    space = traj.grid.integrate(mag)
    t = traj.times
    span = float(t[-1] - t[0])
    total = float(space[0]) if span == 0 else float(_cumtrapz(space, t)[-1] / span)
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# Young-measure surrogates
# ---------------------------------------------------------------------------


def _box_index(n_samples: int, n_boxes: int) -> np.ndarray:
    return np.minimum((np.arange(n_samples) * n_boxes) // n_samples, n_boxes - 1)


@dataclass
class YoungDiagnostic:
    """Per-box sample statistics of ``(r, p)`` over an ``nt x nx`` partition of ``Q_T``."""

    nt: int
    nx: int
    counts: np.ndarray
    mean_r: np.ndarray
    mean_p: np.ndarray
    variance: np.ndarray  # var r + var p
    moments: dict = field(default_factory=dict)

    @property
    def max_variance(self) -> float:
        return float(np.max(self.variance))

    def summary(self) -> dict:
        return {"boxes": [self.nt, self.nx], "min_count": int(self.counts.min()),
                "max_variance": self.max_variance, "mean_variance": float(np.mean(self.variance))}


def _box_mean(field_: np.ndarray, it: np.ndarray, ix: np.ndarray, nt: int, nx: int):
    acc = np.zeros((nt, nx))
    np.add.at(acc, (it[:, None], ix[None, :]), field_)
    cnt = np.zeros((nt, nx))
    np.add.at(cnt, (it[:, None], ix[None, :]), 1.0)
    return acc / np.maximum(cnt, 1), cnt


def young_concentration(traj: Trajectory, nt: int = 8, nx: int = 8, pairs: Sequence = ()) -> YoungDiagnostic:
    """Box variances of the state; optional box means of ``eta`` and ``q`` for given pairs."""
    S, n = traj.r.shape
    if S < nt or n < nx:
        raise ValueError(f"partition {nt}x{nx} is finer than the sample grid {S}x{n}")
    it, ix = _box_index(S, nt), _box_index(n, nx)
    mr, cnt = _box_mean(traj.r, it, ix, nt, nx)
    mp, _ = _box_mean(traj.p, it, ix, nt, nx)
    if cnt.min() < MIN_BOX_SAMPLES:
        raise ValueError(f"box partition {nt}x{nx} leaves boxes with fewer than {MIN_BOX_SAMPLES} samples")
    m2r, _ = _box_mean(traj.r**2, it, ix, nt, nx)
    m2p, _ = _box_mean(traj.p**2, it, ix, nt, nx)
    var = np.maximum(m2r - mr**2, 0.0) + np.maximum(m2p - mp**2, 0.0)
    moments = {}
    for pair in pairs:
        if hasattr(pair, "contains"):
            v = pair.values(traj.r, traj.p, ("eta", "q"))
        else:
            v = pair.values(traj.r, traj.p)
        moments[getattr(pair, "name", "pair")] = {
            "eta": _box_mean(v["eta"], it, ix, nt, nx)[0],
            "q": _box_mean(v["q"], it, ix, nt, nx)[0],
        }
    return YoungDiagnostic(nt, nx, cnt, mr, mp, var, moments)


@dataclass
class TartarDefect:
    defect: np.ndarray  # (nt, nx); NaN where flagged
    flagged: np.ndarray  # boxes with states outside a pair's table

    @property
    def max_defect(self) -> float:
        d = np.abs(self.defect[~self.flagged])
        return float(d.max()) if d.size else math.nan

    @property
    def mean_defect(self) -> float:
        d = np.abs(self.defect[~self.flagged])
        return float(d.mean()) if d.size else math.nan


def tartar_defect(traj: Trajectory, pair1, pair2, nt: int = 8, nx: int = 8) -> TartarDefect:
    """Per box: ``<eta1 q2 - eta2 q1> - (<eta1><q2> - <eta2><q1>)``."""
    S, n = traj.r.shape
    it, ix = _box_index(S, nt), _box_index(n, nx)
    r, p = traj.r, traj.p
    inside = np.ones_like(r, dtype=bool)
    for pair in (pair1, pair2):
        if hasattr(pair, "contains"):
            inside &= pair.contains(r, p)
    out_cnt, _ = _box_mean((~inside).astype(float), it, ix, nt, nx)
    flagged = out_cnt > 0
    if not inside.any():
        return TartarDefect(np.full((nt, nx), np.nan), np.ones((nt, nx), dtype=bool))
    # outside states are replaced by an inside one; their boxes are discarded anyway
    k = np.flatnonzero(inside.ravel())[0]
    rr = np.where(inside, r, r.ravel()[k])
    pp = np.where(inside, p, p.ravel()[k])

    def ev(pair):
        if hasattr(pair, "contains"):
            return pair.values(rr, pp, ("eta", "q"))
        return pair.values(rr, pp)

    v1, v2 = ev(pair1), ev(pair2)
    m = lambda f: _box_mean(f, it, ix, nt, nx)[0]  # noqa: E731
    d = m(v1["eta"] * v2["q"] - v2["eta"] * v1["q"]) - (m(v1["eta"]) * m(v2["q"]) - m(v2["eta"]) * m(v1["q"]))
    d = np.where(flagged, np.nan, d)
    return TartarDefect(d, flagged)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepReport:
    deltas: list
    failures: dict
    distances: dict  # "L1", "L1.5": consecutive-pair distances
    norms: dict  # "L1", "L1.5", "L2" per delta
    weak: dict  # test name -> residual per delta
    weak_slopes: dict
    weak_aggregate_slope: float
    max_gap: list
    max_J: list
    gronwall_bound: float
    young: list
    tartar: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict, repr=False)

    def l1_decreasing(self) -> bool:
        d = self.distances.get("L1", [])
        return all(b < a for a, b in zip(d, d[1:]))

    def l2_spread(self) -> float:
        n = np.asarray(self.norms["L2"], dtype=float)
        if not n.size or n.max() == 0:
            return 0.0
        return float((n.max() - n.min()) / n.max())

    def to_dict(self) -> dict:
        return {
            "deltas": self.deltas,
            "failures": self.failures,
            "distances": self.distances,
            "norms": self.norms,
            "weak_residuals": self.weak,
            "weak_slopes": self.weak_slopes,
            "weak_aggregate_slope": self.weak_aggregate_slope,
            "max_clausius_gap": self.max_gap,
            "max_J": self.max_J,
            "gronwall_bound": self.gronwall_bound,
            "young": self.young,
            "tartar": self.tartar,
            "l1_decreasing": self.l1_decreasing(),
            "l2_spread": self.l2_spread(),
        }

    def write(self, directory: Path, stem: str = "sweep", trajectory_stride: int | None = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True))
        if trajectory_stride:
            for d, tr in self.trajectories.items():
                tr.write(directory, f"{stem}_delta_{d:g}", stride=trajectory_stride)


def _clean(obj):
    """JSON-safe copy: NaN becomes None, numpy scalars become floats."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def delta_sweep(init: InitialData, model: TensionModel, boundary: BoundaryTensionProfile,
                deltas: Sequence[float] = DEFAULT_DELTAS, T: float = 2.0, scheme: str = "imex",
                dt: float | None = None, boxes: tuple[int, int] = (8, 8),
                tartar_pairs: tuple | None = None) -> SweepReport:
    """Run the viscous solver for each viscosity and collect the convergence diagnostics."""
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ValueError("delta list is empty")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError(f"delta list must be strictly decreasing, got {deltas}")
    tests = test_functions(T if T > 0 else 1.0)
    C0 = initial_constant(init, model, boundary)
    bound = gronwall_bound(model, boundary, C0)

    runs: dict[float, Trajectory] = {}
    failures = {}
    for d in deltas:
        try:
            runs[d] = solve(init, ViscousConfig(d, T, dt=dt, scheme=scheme), model, boundary)
        except SolverError as exc:
            failures[f"{d:g}"] = str(exc)
    ok = [d for d in deltas if d in runs]
    trajs = [runs[d] for d in ok]

    distances = {f"L{p:g}": [lp_norm(a, p, b) for a, b in zip(trajs, trajs[1:])] for p in LP_EXPONENTS}
    norms = {f"L{p:g}": [lp_norm(tr, p) for tr in trajs] for p in (1.0, 1.5, 2.0)}
    weak = {f.name: [] for f in tests}
    for tr in trajs:
        for name, v in weak_residuals(tr, model, boundary, tests).items():
            weak[name].append(v)
    slopes = {name: loglog_slope(ok, v) for name, v in weak.items()}
    agg = [math.sqrt(sum(weak[f.name][i] ** 2 for f in tests)) for i in range(len(ok))]

    young = []
    tartar = []
    for d, tr in zip(ok, trajs):
        y = young_concentration(tr, *boxes)
        young.append({"delta": d, **y.summary()})
        if tartar_pairs is not None:
            td = tartar_defect(tr, *tartar_pairs, *boxes)
            tartar.append({"delta": d, "max": td.max_defect, "mean": td.mean_defect,
                           "flagged": int(td.flagged.sum())})
    return SweepReport(
        deltas=ok,
        failures=failures,
        distances=distances,
        norms=norms,
        weak=weak,
        weak_slopes=slopes,
        weak_aggregate_slope=loglog_slope(ok, agg),
        max_gap=[float(np.max(clausius_gap(tr, model, boundary))) for tr in trajs],
        max_J=[float(np.max(energy_J(tr))) for tr in trajs],
        gronwall_bound=bound,
        young=young,
        tartar=tartar,
        trajectories=dict(zip(ok, trajs)),
    )
