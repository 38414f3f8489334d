"""Finite-difference integration of the viscous p-system.

    r_t - p_x = delta r_xx,    p_t - tau(r)_x = delta p_xx

on [0, 1] with p(t,0) = 0, r(t,1) = tau^{-1}(tau_bar(t)), p_x(t,1) = 0 and
r_x(t,0) = 0.

Co-located nodes x_j = j/M carry both fields.  Fluxes are central; the
Neumann relations enter through ghost reflection (r even and p odd about
x=0, p even and ``tau - tau_bar`` odd about x=1).  With trapezoid weights
this discretisation satisfies an exact semi-discrete energy identity:

    d/dt sum_j w_j (p_j^2/2 + F(r_j)) = tau_bar d/dt sum_j w_j r_j - delta D_h,

    D_h = sum_j [(tau_{j+1} - tau_j)(r_{j+1} - r_j) + (p_{j+1} - p_j)^2] / dx.

Time stepping is the second-order IMEX trapezoidal scheme (Heun on the
flux, Crank-Nicolson on the diffusion), or plain Heun when fully explicit.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import solve_banded

from .model import (
    BoundaryTensionProfile,
    Grid,
    InitialData,
    StateField,
    TensionModel,
    inverse_tension,
)

CFL = 0.4
SCHEMES = ("imex", "explicit")


class SolverError(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (first failure at t={t:.6g})")
        self.t = t


def cfl_dt(grid: Grid, model: TensionModel, delta: float, scheme: str = "imex") -> float:
    """Largest admissible step: hyperbolic CFL, plus the diffusive limit if explicit."""
    dt = CFL * grid.dx / math.sqrt(model.c2)
    if scheme == "explicit":
        dt = min(dt, CFL * grid.dx**2 / (2.0 * delta))
    elif scheme != "imex":
        raise ValueError(f"unknown scheme {scheme!r}")
    return dt


@dataclass(frozen=True)
class ViscousConfig:
    delta: float
    T: float
    dt: float | None = None
    snapshot_times: Sequence[float] | None = None  # None: every step
    scheme: str = "imex"

    def __post_init__(self):
        if not (self.delta > 0):
            raise ValueError(f"viscosity must be positive, got {self.delta}")
        if self.T < 0:
            raise ValueError(f"final time must be non-negative, got {self.T}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.snapshot_times is not None:
            ts = np.asarray(self.snapshot_times, dtype=float)
            if np.any(ts < 0) or np.any(ts > self.T + 1e-12):
                raise ValueError("snapshot times must lie in [0, T]")

    def resolve_steps(self, grid: Grid, model: TensionModel) -> tuple[int, float]:
        dt_max = cfl_dt(grid, model, self.delta, self.scheme)
        dt = dt_max if self.dt is None else self.dt
        if dt > dt_max * (1 + 1e-12):
            raise ValueError(f"dt={dt} violates the stability rule dt <= {dt_max}")
        if self.T == 0:
            return 0, dt
        n = int(math.ceil(self.T / dt - 1e-9))
        return n, self.T / n


@dataclass
class Trajectory:
    """Snapshots plus per-step scalar records of one viscous run."""

    grid: Grid
    delta: float
    dt: float
    times: np.ndarray  # (S,)
    r: np.ndarray  # (S, M+1)
    p: np.ndarray  # (S, M+1)
    step_times: np.ndarray  # (n+1,)
    boundary_strain: np.ndarray  # r(t,1) per step
    extension: np.ndarray  # trapezoid int r per step
    dissipation: np.ndarray  # delta int_0^t D_h, the energy-consistent dissipation
    gradient_integral: np.ndarray  # delta int_0^t |u_x|^2
    meta: dict = field(default_factory=dict)

    def state(self, k: int) -> StateField:
        return StateField(self.grid, self.r[k].copy(), self.p[k].copy(), float(self.times[k]))

    def states(self):
        for k in range(len(self.times)):
            yield self.state(k)

    def at_snapshots(self, per_step: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.step_times, self.times - 0.5 * self.dt)
        return per_step[idx]

    @property
    def snapshot_dissipation(self) -> np.ndarray:
        return self.at_snapshots(self.dissipation)

    @property
    def snapshot_gradient_integral(self) -> np.ndarray:
        return self.at_snapshots(self.gradient_integral)

    @classmethod
    def from_fields(cls, grid: Grid, delta: float, times, r, p, meta: dict | None = None) -> "Trajectory":
        """Wrap fields computed elsewhere (e.g. an oracle); energy records are zero."""
        times = np.asarray(times, dtype=float)
        zeros = np.zeros(times.size)
        dt = float(times[1] - times[0]) if times.size > 1 else 0.0
        return cls(grid, delta, dt, times, np.asarray(r, dtype=float), np.asarray(p, dtype=float),
                   times.copy(), np.asarray(r)[:, -1].copy(), grid.integrate(r), zeros, zeros.copy(),
                   dict(meta or {}))

    def write(self, directory: Path, stem: str = "trajectory", stride: int = 1) -> None:
        """CSV snapshot records (t, x, r, p) plus a JSON metadata sidecar.

        ``stride`` keeps every stride-th snapshot (the last one always).
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        x = self.grid.x
        keep = list(range(0, len(self.times), max(int(stride), 1)))
        if keep[-1] != len(self.times) - 1:
            keep.append(len(self.times) - 1)
        with open(directory / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "r", "p"])
            for k in keep:
                t = self.times[k]
                for j in range(x.size):
                    w.writerow([repr(float(t)), repr(float(x[j])), repr(float(self.r[k, j])),
                                repr(float(self.p[k, j]))])
        meta = {
            "delta": self.delta,
            "M": self.grid.M,
            "dt": self.dt,
            "n_steps": int(self.step_times.size - 1),
            "snapshot_stride": int(stride),
            "dissipation_integral": float(self.dissipation[-1]),
            "gradient_integral": float(self.gradient_integral[-1]),
            **self.meta,
        }
        (directory / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# spatial operators
# ---------------------------------------------------------------------------


def _flux(r, p, tau_bar_t, model, dx):
    """Central-difference flux terms (p_x, tau(r)_x) with ghost reflection."""
    tau = model.tau(r)
    dr = np.empty_like(r)
    dp = np.empty_like(p)
    dr[1:-1] = (p[2:] - p[:-2]) / (2 * dx)
    dr[0] = p[1] / dx  # p odd about x=0
    dr[-1] = 0.0
    dp[1:-1] = (tau[2:] - tau[:-2]) / (2 * dx)
    dp[-1] = (tau_bar_t - tau[-2]) / dx  # tau - tau_bar odd about x=1
    dp[0] = 0.0
    return dr, dp


def _laplacian(r, p, dx):
    lr = np.zeros_like(r)
    lp = np.zeros_like(p)
    lr[1:-1] = (r[2:] - 2 * r[1:-1] + r[:-2]) / dx**2
    lr[0] = 2 * (r[1] - r[0]) / dx**2
    lp[1:-1] = (p[2:] - 2 * p[1:-1] + p[:-2]) / dx**2
    lp[-1] = 2 * (p[-2] - p[-1]) / dx**2
    return lr, lp


def _banded(M: int, theta: float, which: str) -> np.ndarray:
    """Band storage of ``I - theta L`` on the free nodes of one field (size M)."""
    ab = np.zeros((3, M))
    ab[1, :] = 1 + 2 * theta
    ab[0, 1:] = -theta
    ab[2, :-1] = -theta
    if which == "r":  # free nodes 0..M-1, ghost mirror at 0
        ab[0, 1] = -2 * theta
    else:  # free nodes 1..M, ghost mirror at M
        ab[2, M - 2] = -2 * theta
    return ab


def discrete_dissipation(r, p, model, dx):
    """``D_h`` (tau'-weighted) and the plain gradient norm ``sum |du|^2 / dx``."""
    dr, dp = np.diff(r), np.diff(p)
    weighted = float(np.sum(np.diff(model.tau(r)) * dr + dp**2) / dx)
    plain = float(np.sum(dr**2 + dp**2) / dx)
    return weighted, plain


def apply_boundary(state: StateField, t: float, model: TensionModel,
                   boundary: BoundaryTensionProfile, delta: float | None = None) -> StateField:
    """Impose the Dirichlet pair exactly.

    The Neumann pair is carried by ghost reflection inside the stencils, so
    it holds identically for any nodal state; see ``neumann_stencil_values``.
    """
    r = np.array(state.r)
    p = np.array(state.p)
    p[0] = 0.0
    r[-1] = inverse_tension(model, float(boundary(t)))
    return state.replace(r=r, p=p, t=t)


def neumann_stencil_values(state: StateField) -> tuple[float, float]:
    """Central derivatives r_x(0), p_x(1) evaluated with the reflected ghosts."""
    r, p, dx = state.r, state.p, state.grid.dx
    r_ghost, p_ghost = r[1], p[-2]
    return (r[1] - r_ghost) / (2 * dx), (p_ghost - p[-2]) / (2 * dx)


class _Stepper:
    def __init__(self, grid, model, boundary, delta, dt, scheme):
        self.grid, self.model, self.boundary = grid, model, boundary
        self.delta, self.dt, self.scheme = delta, dt, scheme
        self.dx = grid.dx
        M = grid.M
        theta = 0.5 * dt * delta / self.dx**2
        self.theta = theta
        if scheme == "imex":
            self.ab_r = _banded(M, theta, "r")
            self.ab_p = _banded(M, theta, "p")
        self._a_cache: dict[float, float] = {}

    def a(self, t):
        v = self._a_cache.get(t)
        if v is None:
            v = inverse_tension(self.model, float(self.boundary(t)))
            self._a_cache[t] = v
        return v

    def _implicit(self, rhs_r, rhs_p, a_new):
        """Solve (I - dt/2 delta L) u = rhs on the free nodes."""
        rhs_r = rhs_r[:-1].copy()
        rhs_r[-1] += self.theta * a_new
        r = np.empty(self.grid.M + 1)
        p = np.empty(self.grid.M + 1)
        r[:-1] = solve_banded((1, 1), self.ab_r, rhs_r, check_finite=False)
        r[-1] = a_new
        p[1:] = solve_banded((1, 1), self.ab_p, rhs_p[1:], check_finite=False)
        p[0] = 0.0
        return r, p

    def step(self, r, p, t):
        dt, delta, dx, model = self.dt, self.delta, self.dx, self.model
        t1 = t + dt
        tb0, tb1 = float(self.boundary(t)), float(self.boundary(t1))
        a1 = self.a(t1)
        f_r0, f_p0 = _flux(r, p, tb0, model, dx)
        l_r0, l_p0 = _laplacian(r, p, dx)
        if self.scheme == "imex":
            g_r0, g_p0 = delta * l_r0, delta * l_p0
            rs, ps = self._implicit(r + dt * f_r0 + 0.5 * dt * g_r0,
                                    p + dt * f_p0 + 0.5 * dt * g_p0, a1)
            f_r1, f_p1 = _flux(rs, ps, tb1, model, dx)
            rn, pn = self._implicit(r + 0.5 * dt * (f_r0 + f_r1) + 0.5 * dt * g_r0,
                                    p + 0.5 * dt * (f_p0 + f_p1) + 0.5 * dt * g_p0, a1)
        else:
            k_r0 = f_r0 + delta * l_r0
            k_p0 = f_p0 + delta * l_p0
            rs, ps = r + dt * k_r0, p + dt * k_p0
            rs[-1], ps[0] = a1, 0.0
            f_r1, f_p1 = _flux(rs, ps, tb1, model, dx)
            l_r1, l_p1 = _laplacian(rs, ps, dx)
            rn = r + 0.5 * dt * (k_r0 + f_r1 + delta * l_r1)
            pn = p + 0.5 * dt * (k_p0 + f_p1 + delta * l_p1)
            rn[-1], pn[0] = a1, 0.0
        if not (np.all(np.isfinite(rn)) and np.all(np.isfinite(pn))):
            raise SolverError(
                f"non-finite values after step (delta={delta}, dt={dt}, scheme={self.scheme}); "
                "reduce dt or check the tension law",
                t1,
            )
        return rn, pn


def step(state: StateField, t: float, config: ViscousConfig, model: TensionModel,
         boundary: BoundaryTensionProfile, dt: float | None = None) -> StateField:
    """Advance one time step from ``t``; the result carries the new time stamp."""
    if dt is None:
        dt = config.dt if config.dt is not None else cfl_dt(state.grid, model, config.delta, config.scheme)
    st = _Stepper(state.grid, model, boundary, config.delta, dt, config.scheme)
    rn, pn = st.step(np.array(state.r), np.array(state.p), t)
    return StateField(state.grid, rn, pn, t + dt)


def solve(init: InitialData | StateField, config: ViscousConfig, model: TensionModel,
          boundary: BoundaryTensionProfile) -> Trajectory:
    """Integrate to ``config.T`` and record snapshots and per-step energy terms."""
    s0 = init.state if isinstance(init, InitialData) else init
    grid = s0.grid
    n, dt = config.resolve_steps(grid, model)
    stepper = _Stepper(grid, model, boundary, config.delta, dt, config.scheme)
    r, p = np.array(s0.r), np.array(s0.p)
    delta = config.delta

    step_times = np.arange(n + 1) * dt
    if n:
        step_times[-1] = config.T
    if config.snapshot_times is None:
        snap_idx = np.arange(n + 1)
    else:
        snap_idx = np.unique(np.rint(np.asarray(config.snapshot_times) / dt).astype(int).clip(0, n))
    want = np.zeros(n + 1, dtype=bool)
    want[snap_idx] = True

    R = np.empty((snap_idx.size, grid.M + 1))
    P = np.empty_like(R)
    b_strain = np.empty(n + 1)
    ext = np.empty(n + 1)
    diss = np.zeros(n + 1)
    grad = np.zeros(n + 1)

    k = 0
    Dw_prev, Dg_prev = discrete_dissipation(r, p, model, grid.dx)
    for i in range(n + 1):
        if i > 0:
            r, p = stepper.step(r, p, step_times[i - 1])
            Dw, Dg = discrete_dissipation(r, p, model, grid.dx)
            h = step_times[i] - step_times[i - 1]
            diss[i] = diss[i - 1] + 0.5 * h * delta * (Dw + Dw_prev)
            grad[i] = grad[i - 1] + 0.5 * h * delta * (Dg + Dg_prev)
            Dw_prev, Dg_prev = Dw, Dg
        b_strain[i] = r[-1]
        ext[i] = grid.integrate(r)
        if want[i]:
            R[k], P[k] = r, p
            k += 1
    return Trajectory(
        grid=grid,
        delta=delta,
        dt=dt,
        times=step_times[snap_idx],
        r=R,
        p=P,
        step_times=step_times,
        boundary_strain=b_strain,
        extension=ext,
        dissipation=diss,
        gradient_integral=grad,
        meta={"scheme": config.scheme, "T": config.T, "model": model.name, **model.params},
    )
