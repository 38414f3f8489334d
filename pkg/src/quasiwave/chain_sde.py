"""Anharmonic chain in a heat bath, pulled at the last particle.

Strains ``r_i = q_i - q_{i-1}`` and momenta ``p_i`` for ``i = 1..N``; particle
0 is pinned.  The bath acts through conservative currents on bonds: the
strain current between sites i and i+1 is ``delta (V'(r_{i+1}) - V'(r_i)) dt
- sigma dw~_i`` and the momentum current ``delta (p_{i+1} - p_i) dt - sigma dw_i``,
``sigma = sqrt(2 delta / beta)``.  The last strain bond exchanges with a
reservoir at tension ``tau_bar``, the first momentum bond with the pinned
particle.  Each current is paired with its own Brownian motion so the
dynamics satisfies fluctuation-dissipation; this needs ``w~_N`` and ``w_0``
besides ``w~_1..w~_{N-1}`` and ``w_1..w_{N-1}``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import BoundaryTensionProfile, TensionModel, make_linear_tension
from .viscous_solver import Trajectory

NOISE_BLOCK = 256  # steps of noise drawn per generator call


class ChainError(RuntimeError):
    """Non-finite values in the chain dynamics."""


@dataclass(frozen=True)
class ChainConfig:
    """Microscopic parameters; times ``T`` and ``t_star`` of ``boundary`` are macroscopic."""

    N: int
    potential: TensionModel
    boundary: BoundaryTensionProfile
    beta_inv: float = 0.02
    delta0: float = 1.0
    delta_mic: float | None = None  # overrides delta0 * sqrt(N)
    dt: float | None = None
    ensemble: int = 64
    seed: int = 0
    T: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"chain needs N >= 2, got {self.N}")
        if not self.beta_inv > 0:
            raise ValueError(f"temperature must be positive, got {self.beta_inv}")
        if self.delta < 0:
            raise ValueError(f"bath coupling must be non-negative, got {self.delta}")
        if self.ensemble < 1:
            raise ValueError(f"ensemble size must be positive, got {self.ensemble}")
        if self.dt is not None and self.dt > self.dt_max * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds the stability limit {self.dt_max}")

    @property
    def delta(self) -> float:
        return self.delta0 * math.sqrt(self.N) if self.delta_mic is None else self.delta_mic

    @property
    def delta_eff(self) -> float:
        """Viscosity of the macroscopic equation after rescaling by N."""
        return self.delta / self.N

    @property
    def dt_max(self) -> float:
        """``0.1 / sqrt(sup V'')`` plus the explicit limit of the bath diffusion."""
        c2 = self.potential.c2
        dt = 0.1 / math.sqrt(c2)
        if self.delta > 0:
            dt = min(dt, self.delta / (c2 + 4.0 * self.delta**2))
        return dt

    def steps(self) -> tuple[int, float]:
        """Steps and step length covering the chain time ``N T`` exactly."""
        t_chain = self.N * self.T
        if t_chain == 0:
            return 0, self.dt or self.dt_max
        dt = self.dt or self.dt_max
        n = int(math.ceil(t_chain / dt - 1e-9))
        return n, t_chain / n

    def metadata(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("potential", "boundary")}
        d.update(potential=self.potential.name, potential_params=self.potential.params,
                 boundary=asdict(self.boundary), delta=self.delta, delta_eff=self.delta_eff)
        return d


@dataclass(frozen=True)
class ChainState:
    r: np.ndarray
    p: np.ndarray  # p_1..p_N; p_0 = 0 is implicit
    t: float = 0.0

    def __post_init__(self):
        r, p = np.asarray(self.r, dtype=float), np.asarray(self.p, dtype=float)
        if r.shape != p.shape or r.ndim != 1:
            raise ValueError(f"strain and momentum arrays must match, got {r.shape} and {p.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
            raise ChainError("chain state contains non-finite values")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)

    @property
    def N(self) -> int:
        return self.r.size


def _increment(r, p, t, dt, xi_r, xi_p, cfg: ChainConfig):
    """One Euler-Maruyama step on the last axis; ``xi_*`` are standard normals.

    ``xi_r[..., i]`` drives the strain current on bond (i+1, i+2), the last
    entry the reservoir bond; ``xi_p[..., 0]`` drives the pinned bond and
    ``xi_p[..., i]`` the momentum bond (i, i+1).
    """
    V1 = cfg.potential.tau(r)
    tb = float(cfg.boundary(t / cfg.N))
    delta = cfg.delta
    s = math.sqrt(2.0 * cfg.beta_inv * delta * dt)

    # strain currents J_i across bonds i=1..N (bond N is the reservoir)
    J = np.empty_like(r)
    J[..., :-1] = delta * (V1[..., 1:] - V1[..., :-1]) * dt - s * xi_r[..., :-1]
    J[..., -1] = delta * (tb - V1[..., -1]) * dt - s * xi_r[..., -1]
    # momentum currents K_i across bonds i=0..N-1 (bond 0 is the pinned particle)
    K = np.empty_like(p)
    K[..., 0] = delta * p[..., 0] * dt - s * xi_p[..., 0]
    K[..., 1:] = delta * (p[..., 1:] - p[..., :-1]) * dt - s * xi_p[..., 1:]

    dr = np.empty_like(r)
    dr[..., 0] = p[..., 0] * dt
    dr[..., 1:] = (p[..., 1:] - p[..., :-1]) * dt
    dr[..., 0] += J[..., 0]
    dr[..., 1:] += J[..., 1:] - J[..., :-1]

    dp = np.empty_like(p)
    dp[..., :-1] = (V1[..., 1:] - V1[..., :-1]) * dt
    dp[..., -1] = (tb - V1[..., -1]) * dt
    dp[..., :-1] += K[..., 1:] - K[..., :-1]
    dp[..., -1] += -K[..., -1]
    return r + dr, p + dp


def sde_step(state: ChainState, config: ChainConfig, rng: np.random.Generator | None = None,
             dt: float | None = None) -> ChainState:
    """Advance one Euler-Maruyama step; ``rng=None`` switches the noise off."""
    dt = config.steps()[1] if dt is None else dt
    N = state.N
    if rng is None:
        xi_r = xi_p = np.zeros(N)
    else:
        xi = rng.standard_normal(2 * N)
        xi_r, xi_p = xi[:N], xi[N:]
    r, p = _increment(state.r, state.p, state.t, dt, xi_r, xi_p, config)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
        raise ChainError(f"non-finite chain state at t={state.t + dt:.6g}; reduce dt")
    return ChainState(r, p, state.t + dt)


def empirical_profile(state: ChainState | tuple, G: Callable) -> tuple[float, float]:
    """``(1/N) sum_i G(i/N) (r_i, p_i)``; also accepts batched ``(r, p)`` arrays."""
    r, p = (state.r, state.p) if isinstance(state, ChainState) else state
    N = np.shape(r)[-1]
    g = np.asarray(G(np.arange(1, N + 1) / N), dtype=float) * np.ones(N)
    return (np.asarray(r) @ g) / N, (np.asarray(p) @ g) / N


def local_equilibrium(config: ChainConfig, r_profile: Callable, p_profile: Callable,
                      rng: np.random.Generator | None) -> ChainState:
    """Gaussian fluctuations of variance ``beta^{-1}/V''`` and ``beta^{-1}`` around the profiles."""
    x = np.arange(1, config.N + 1) / config.N
    r0 = np.asarray(r_profile(x), dtype=float) * np.ones(config.N)
    p0 = np.asarray(p_profile(x), dtype=float) * np.ones(config.N)
    if rng is not None:
        r0 = r0 + np.sqrt(config.beta_inv / config.potential.dtau(r0)) * rng.standard_normal(config.N)
        p0 = p0 + math.sqrt(config.beta_inv) * rng.standard_normal(config.N)
    return ChainState(r0, p0, 0.0)


@dataclass
class EnsembleResult:
    """Empirical profiles per member, sample time, test profile and field."""

    config: ChainConfig
    times: np.ndarray  # macroscopic sample times actually hit
    G_names: list
    profiles: np.ndarray  # (ensemble, n_times, n_G, 2)
    p_variance: np.ndarray  # (n_times,) mean over sites and members of p_i^2 - <p_i>^2

    @property
    def mean(self) -> np.ndarray:
        return self.profiles.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        E = self.profiles.shape[0]
        if E < 2:
            return np.full(self.profiles.shape[1:], np.inf)
        return self.profiles.std(axis=0, ddof=1) / math.sqrt(E)

    def write(self, directory: Path, stem: str = "chain") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / f"{stem}_members.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["member", "t", "G", "r", "p"])
            for m in range(self.profiles.shape[0]):
                for k, t in enumerate(self.times):
                    for g, name in enumerate(self.G_names):
                        w.writerow([m, repr(float(t)), name, repr(float(self.profiles[m, k, g, 0])),
                                    repr(float(self.profiles[m, k, g, 1]))])
        (directory / f"{stem}.json").write_text(
            json.dumps({"config": self.config.metadata(), "times": [float(t) for t in self.times]},
                       indent=2, sort_keys=True))


def run_ensemble(config: ChainConfig, r_profile: Callable, p_profile: Callable,
                 G: dict[str, Callable], times: Sequence[float], noise: bool = True) -> EnsembleResult:
    """Simulate all members; each owns a generator spawned from ``config.seed``.

    Members are advanced together, but every member draws its noise from its
    own stream, so results do not depend on how the ensemble is batched.
    ``noise=False`` runs a single deterministic member from the bare profiles.
    """
    n, dt = config.steps()
    E, N = (config.ensemble, config.N) if noise else (1, config.N)
    if noise:
        children = np.random.SeedSequence(config.seed).spawn(E)
        rngs = [np.random.Generator(np.random.PCG64(s)) for s in children]
    else:
        rngs = [None]
    states = [local_equilibrium(config, r_profile, p_profile, g) for g in rngs]
    r = np.stack([s.r for s in states])
    p = np.stack([s.p for s in states])

    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > config.T + 1e-12):
        raise ValueError("sample times must lie in [0, T]")
    # chain step index of each macroscopic sample time
    idx = np.rint(times * N / dt).astype(int).clip(0, n) if n else np.zeros(times.size, dtype=int)
    Gv = np.stack([np.asarray(f(np.arange(1, N + 1) / N), dtype=float) * np.ones(N) for f in G.values()], axis=1)
    prof = np.empty((E, times.size, len(G), 2))
    pvar = np.empty(times.size)

    def record(step):
        for k in np.flatnonzero(idx == step):
            # one fixed-shape product per member keeps rounding independent of E
            for m in range(E):
                prof[m, k, :, 0] = r[m] @ Gv / N
                prof[m, k, :, 1] = p[m] @ Gv / N
            pvar[k] = float(np.mean(p.var(axis=0, ddof=0))) if E > 1 else float(np.mean(p**2))

    record(0)
    block = np.zeros((E, NOISE_BLOCK, 2 * N))
    for i in range(n):
        j = i % NOISE_BLOCK
        if j == 0 and noise:
            B = min(NOISE_BLOCK, n - i)
            block = np.stack([g.standard_normal((B, 2 * N)) for g in rngs])
        xi = block[:, j]
        r, p = _increment(r, p, i * dt, dt, xi[:, :N], xi[:, N:], config)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
            raise ChainError(f"non-finite chain state at chain time {(i + 1) * dt:.6g}; reduce dt")
        record(i + 1)
    return EnsembleResult(config, idx * dt / N, list(G), prof, pvar)


# ---------------------------------------------------------------------------
# comparison with the macroscopic equation
# ---------------------------------------------------------------------------


def pde_profiles(traj: Trajectory, G: dict[str, Callable], times: Sequence[float],
                 shift: float = 0.0) -> np.ndarray:
    """``int G (r, p) dx`` at the snapshots nearest to ``times``: shape (n_times, n_G, 2)."""
    x = traj.grid.x
    out = np.empty((len(times), len(G), 2))
    for k, t in enumerate(times):
        s = int(np.argmin(np.abs(traj.times - t)))
        for g, f in enumerate(G.values()):
            w = traj.grid.weights * (np.asarray(f(x), dtype=float) * np.ones_like(x))
            out[k, g] = (traj.r[s] @ w, traj.p[s] @ w)
    return out


@dataclass
class HydroTable:
    times: np.ndarray
    G_names: list
    chain_mean: np.ndarray
    chain_se: np.ndarray
    pde: np.ndarray
    pde_err: np.ndarray  # grid error estimate of the PDE side
    chain_err: np.ndarray  # deterministic discretisation error of the N-site chain
    meta: dict = field(default_factory=dict)

    @property
    def deviation(self) -> np.ndarray:
        return self.chain_mean - self.pde

    @property
    def combined_se(self) -> np.ndarray:
        return np.sqrt(self.chain_se**2 + self.pde_err**2 + self.chain_err**2)

    @property
    def rms_deviation(self) -> float:
        return float(np.sqrt(np.mean(self.deviation**2)))

    def within(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.deviation) <= k * self.combined_se))

    def write(self, directory: Path, stem: str = "hydro") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "G", "field", "chain_mean", "chain_se", "pde", "deviation", "combined_se"])
            for k, t in enumerate(self.times):
                for g, name in enumerate(self.G_names):
                    for c, fld in enumerate("rp"):
                        w.writerow([repr(float(t)), name, fld, repr(float(self.chain_mean[k, g, c])),
                                    repr(float(self.chain_se[k, g, c])), repr(float(self.pde[k, g, c])),
                                    repr(float(self.deviation[k, g, c])),
                                    repr(float(self.combined_se[k, g, c]))])
        (directory / f"{stem}.json").write_text(json.dumps(
            {"rms_deviation": self.rms_deviation, "within_3se": self.within(), **self.meta},
            indent=2, sort_keys=True))


def hydro_compare(result: EnsembleResult, pde: Trajectory, G: dict[str, Callable],
                  pde_fine: Trajectory | None = None,
                  mean_field: EnsembleResult | None = None) -> HydroTable:
    """Ensemble means of the empirical profiles against the macroscopic solution.

    Error budget besides the Monte-Carlo standard error: ``pde_fine`` (same
    problem on a refined grid) estimates the grid error of the PDE side, and
    ``mean_field`` (the chain with noise switched off) the O(1/N) error of
    replacing the integral by a sum over N sites.  Missing terms count as 0.
    """
    ref = pde_profiles(pde, G, result.times)
    err = np.zeros_like(ref) if pde_fine is None else np.abs(pde_profiles(pde_fine, G, result.times) - ref)
    chain_err = np.zeros_like(ref) if mean_field is None else np.abs(mean_field.mean - ref)
    return HydroTable(result.times, result.G_names, result.mean, result.stderr, ref, err, chain_err,
                      {"config": result.config.metadata()})


DEFAULT_G = {
    "1": lambda x: np.ones_like(x),
    "x": lambda x: x,
    "cos(pi x/2)": lambda x: np.cos(0.5 * math.pi * x),
    "sin(pi x/2)": lambda x: np.sin(0.5 * math.pi * x),
}


def harmonic_potential(c: float = 1.0) -> TensionModel:
    """``V = c r^2 / 2``; the macroscopic tension equals ``V'`` exactly."""
    return make_linear_tension(c)
