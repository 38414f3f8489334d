"""Free energy, boundary work, the energy functional J and the Clausius gap."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import BoundaryTensionProfile, InitialData, StateField, TensionModel
from .viscous_solver import Trajectory

# tolerance is this multiple of the balance residual measured on oracle runs
TOL_SAFETY = 5.0


def free_energy(state: StateField, model: TensionModel) -> float:
    """Trapezoidal ``int (p^2/2 + F(r)) dx``."""
    return float(state.grid.integrate(0.5 * state.p**2 + model.F(state.r)))


def _free_energy_series(traj: Trajectory, model: TensionModel) -> np.ndarray:
    return traj.grid.integrate(0.5 * traj.p**2 + model.F(traj.r))


def _cumtrapz(f, t):
    out = np.zeros_like(f, dtype=float)
    if f.size > 1:
        out[1:] = np.cumsum(0.5 * np.diff(t) * (f[1:] + f[:-1]))
    return out


def work(traj: Trajectory, boundary: BoundaryTensionProfile) -> np.ndarray:
    """Work of the boundary tension up to each snapshot time.

    ``W(t) = -int_0^t tau_bar' L ds + tau_bar(t) L(t) - tau_bar(0) L(0)``
    with ``L`` the trapezoidal mean strain; time integral by trapezoid.
    """
    t = traj.times
    L = traj.grid.integrate(traj.r)
    tb = boundary(t)
    return -_cumtrapz(boundary.derivative(t) * L, t) + tb * L - tb[0] * L[0]


def work_mechanical(traj: Trajectory, boundary: BoundaryTensionProfile) -> np.ndarray:
    """``int_0^t tau_bar dL`` by the trapezoid rule (valid for smooth runs)."""
    t = traj.times
    L = traj.grid.integrate(traj.r)
    tb = boundary(t)
    out = np.zeros_like(t)
    out[1:] = np.cumsum(0.5 * (tb[1:] + tb[:-1]) * np.diff(L))
    return out


def energy_J(traj: Trajectory) -> np.ndarray:
    """``|u(t)|^2_{L^2} + delta int_0^t |u_x|^2`` at each snapshot."""
    return traj.grid.integrate(traj.r**2 + traj.p**2) + traj.snapshot_gradient_integral


def initial_constant(init: InitialData | StateField, model: TensionModel,
                     boundary: BoundaryTensionProfile) -> float:
    """``F(u_0) + C_tau |int r_0|``, the initial-data constant of the energy bound."""
    s = init.state if isinstance(init, InitialData) else init
    return free_energy(s, model) + boundary.C_tau * abs(float(s.grid.integrate(s.r)))


def gronwall_bound(model: TensionModel, boundary: BoundaryTensionProfile, C0: float,
                   frozen_tail: bool = True) -> float:
    """Closed-form bound on ``J`` valid for all times and viscosities.

    ``(4 c1 C0 + 2 C^2 (2 + c1 T*)) / c1^2 * exp(2 T* / c1)`` covers the
    ramp; for ``t >= T*`` the frozen-tail term ``C T* sqrt(.)`` is added.
    """
    c1, Ts, C = model.c1, boundary.t_star, boundary.C_tau
    base = (4 * c1 * C0 + 2 * C**2 * (2 + c1 * Ts)) / c1**2 * math.exp(2 * Ts / c1)
    if frozen_tail:
        base += C * Ts * math.sqrt(base)
    return base


@dataclass
class ThermoReport:
    times: np.ndarray
    free_energy: np.ndarray
    work: np.ndarray
    J: np.ndarray
    gap: np.ndarray
    dissipation: np.ndarray
    gronwall_bound: float
    C0: float
    meta: dict = field(default_factory=dict)

    @property
    def balance_residual(self) -> np.ndarray:
        """``gap + dissipation``; zero for the exact viscous solution."""
        return self.gap + self.dissipation

    def write(self, directory: Path, stem: str = "thermo") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "F", "W", "J", "gap"])
            for row in zip(self.times, self.free_energy, self.work, self.J, self.gap):
                w.writerow([repr(float(v)) for v in row])
        meta = {
            "gronwall_bound": self.gronwall_bound,
            "C0": self.C0,
            "max_J": float(np.max(self.J)),
            "max_gap": float(np.max(self.gap)),
            "max_balance_residual": float(np.max(np.abs(self.balance_residual))),
            **self.meta,
        }
        (directory / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def clausius_gap(traj: Trajectory, model: TensionModel, boundary: BoundaryTensionProfile) -> np.ndarray:
    """``F(u(t)) - F(u_0) - W(t)``; non-positive for the viscous flow."""
    F = _free_energy_series(traj, model)
    return F - F[0] - work(traj, boundary)


def thermo_report(traj: Trajectory, model: TensionModel, boundary: BoundaryTensionProfile,
                  C0: float | None = None) -> ThermoReport:
    F = _free_energy_series(traj, model)
    W = work(traj, boundary)
    if C0 is None:
        C0 = initial_constant(traj.state(0), model, boundary)
    return ThermoReport(
        times=traj.times.copy(),
        free_energy=F,
        work=W,
        J=energy_J(traj),
        gap=F - F[0] - W,
        dissipation=traj.snapshot_dissipation.copy(),
        gronwall_bound=gronwall_bound(model, boundary, C0),
        C0=C0,
        meta={"delta": traj.delta, "M": traj.grid.M, "dt": traj.dt},
    )


def tolerance_from_oracles(*residuals) -> float:
    """``TOL_SAFETY`` times the largest balance residual over oracle runs."""
    worst = max(float(np.max(np.abs(r))) for r in residuals)
    return TOL_SAFETY * max(worst, np.finfo(float).eps)
