"""Acceptance suite: one function per criterion, shared by ``verify`` and the tests.

Every function takes an :class:`AcceptanceContext` built from an
:class:`~quasiwave.config.ExperimentConfig` and returns a
:class:`CriterionResult`.  Heavy runs (the viscosity sweep, the linear-law
counterparts) are computed once per context.  Results carry no timings or
paths, so identical configs give byte-identical reports.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from . import chain_sde, entropy_pairs, greens
from .config import ExperimentConfig
from .convergence_lab import _P_PROFILES, _R_PROFILES, SweepReport, _clean, delta_sweep, weak_residuals
from .model import (BoundaryTensionProfile, Grid, InitialData, StateField, cosine_profiles, inverse_tension,
                    linear_counterpart, mollify_initial_data)
from .thermo import thermo_report, tolerance_from_oracles
from .viscous_solver import Trajectory, ViscousConfig, cfl_dt, solve

WEAK_ORACLE_FACTOR = 3.0
WEAK_MIN_SLOPE = 0.8
L2_SPREAD_MAX = 0.05
BALANCE_MIN_RATIO = 3.0
LAX_MIN_RATIO = 3.5
SERIES_MAX_RATIO = 0.5
IDENTITY_TOL = 1e-12
REFINEMENT_FACTOR = 2.0
LIPSCHITZ_SPREAD_MAX = 0.25
HYDRO_SE_FACTOR = 3.0


@dataclass
class CriterionResult:
    number: int
    name: str
    clauses: dict  # clause -> bool
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    @property
    def failed_clauses(self) -> list[str]:
        return [k for k, v in self.clauses.items() if not v]

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = "" if self.passed else "  [failed: " + ", ".join(self.failed_clauses) + "]"
        return f"{status} criterion {self.number}: {self.name}{detail}"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "clauses": dict(self.clauses), "metrics": _clean(self.metrics)}


class AcceptanceContext:
    """Lazily computed shared runs for one configuration."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.model = config.tension_model()
        self.boundary = config.boundary_profile()
        self.grid = Grid(config.grid.M)
        self.T = config.grid.T

    # -- the standard ramp experiment ------------------------------------

    def initial_data(self, model=None, boundary=None, grid=None) -> InitialData:
        model = model or self.model
        boundary = boundary or self.boundary
        grid = grid or self.grid
        ic = self.config.initial
        r0, p0 = cosine_profiles(grid, model, boundary, ic.r_amp, ic.p_amp)
        return mollify_initial_data(r0, p0, model, boundary, h=ic.mollifier_h, grid=grid)

    @cached_property
    def sweep(self) -> SweepReport:
        s = self.config.sweep
        return delta_sweep(self.initial_data(), self.model, self.boundary, s.deltas, T=self.T,
                           scheme=self.config.grid.scheme, boxes=tuple(s.boxes))

    @cached_property
    def linear(self):
        """Linear law with the same boundary strain history (mid stiffness)."""
        return linear_counterpart(self.model, self.boundary)

    @cached_property
    def linear_runs(self) -> dict[float, Trajectory]:
        """Linear counterpart at every sweep viscosity, same grid and time step."""
        lm, lb = self.linear
        init = self.initial_data(lm, lb)
        out = {}
        for d, tr in self.sweep.trajectories.items():
            out[d] = solve(init, ViscousConfig(d, self.T, dt=tr.dt, scheme=self.config.grid.scheme), lm, lb)
        return out

    @cached_property
    def equilibrium_runs(self) -> dict[float, Trajectory]:
        """Zero data under zero applied tension: an exact rest state."""
        rest = StateField(self.grid, np.zeros(self.grid.M + 1), np.zeros(self.grid.M + 1))
        zero = BoundaryTensionProfile.constant(0.0)
        return {d: solve(rest, ViscousConfig(d, self.T, dt=tr.dt, scheme=self.config.grid.scheme),
                         self.model, zero)
                for d, tr in self.sweep.trajectories.items()}

    def initial_functions(self) -> tuple[Callable, Callable]:
        ic = self.config.initial
        a0 = inverse_tension(self.model, float(self.boundary(0.0)))
        return (lambda x: a0 + ic.r_amp * np.cos(0.5 * math.pi * x),
                lambda x: ic.p_amp * np.sin(0.5 * math.pi * x))


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def energy_bound(ctx: AcceptanceContext) -> CriterionResult:
    rep = ctx.sweep
    ok = [j <= rep.gronwall_bound for j in rep.max_J]
    return CriterionResult(1, "energy bound", {
        "all runs completed": not rep.failures,
        "max J below the Gronwall bound for every delta": all(ok),
    }, {"deltas": rep.deltas, "max_J": rep.max_J, "gronwall_bound": rep.gronwall_bound,
        "failures": rep.failures})


def _balance_refinement(ctx: AcceptanceContext, delta: float) -> list[float]:
    """Max balance residual at M and 2M with the time step halved."""
    out = []
    M = ctx.config.grid.M // 2
    dt = cfl_dt(Grid(M), ctx.model, delta, ctx.config.grid.scheme)
    for k in range(2):
        g = Grid(M * 2**k)
        init = ctx.initial_data(grid=g)
        tr = solve(init, ViscousConfig(delta, ctx.T, dt=dt / 2**k, scheme=ctx.config.grid.scheme),
                   ctx.model, ctx.boundary)
        out.append(float(np.max(np.abs(thermo_report(tr, ctx.model, ctx.boundary).balance_residual))))
    return out


def clausius(ctx: AcceptanceContext) -> CriterionResult:
    lm, lb = ctx.linear
    zero = BoundaryTensionProfile.constant(0.0)
    gaps, tols, balance = [], [], []
    ok = True
    for d, tr in ctx.sweep.trajectories.items():
        rep = thermo_report(tr, ctx.model, ctx.boundary)
        tol = tolerance_from_oracles(thermo_report(ctx.linear_runs[d], lm, lb).balance_residual,
                                     thermo_report(ctx.equilibrium_runs[d], ctx.model, zero).balance_residual)
        gaps.append(float(np.max(rep.gap)))
        tols.append(tol)
        balance.append(float(np.max(np.abs(rep.balance_residual))))
        ok = ok and bool(np.all(rep.gap <= tol))
    refine = _balance_refinement(ctx, ctx.config.solve.delta)
    ratio = refine[0] / refine[1] if refine[1] > 0 else math.inf
    return CriterionResult(2, "viscous Clausius inequality", {
        "gap below tol_disc at every snapshot": ok,
        "balance residual shrinks by 3x under refinement": ratio >= BALANCE_MIN_RATIO,
    }, {"deltas": list(ctx.sweep.trajectories), "max_gap": gaps, "tol_disc": tols,
        "max_balance_residual": balance, "refinement_delta": ctx.config.solve.delta,
        "refinement_residuals": refine, "refinement_ratio": ratio})


def strong_convergence(ctx: AcceptanceContext) -> CriterionResult:
    rep = ctx.sweep
    spread = rep.l2_spread()
    return CriterionResult(3, "strong convergence", {
        "L1 Cauchy differences strictly decreasing": rep.l1_decreasing(),
        "L2 norms vary by less than 5%": spread < L2_SPREAD_MAX,
    }, {"L1_distances": rep.distances["L1"], "L2_norms": rep.norms["L2"], "L2_spread": spread})


def weak_solution(ctx: AcceptanceContext) -> CriterionResult:
    rep = ctx.sweep
    d_fine = rep.deltas[-1]
    tr = rep.trajectories[d_fine]
    lm, lb = ctx.linear
    r0, p0 = ctx.initial_functions()
    sol = greens.LinearSpectralSolution.from_functions(lm.c1, d_fine, lb, r0, p0)
    rr, pp = sol.evaluate(tr.times, tr.grid.x)
    oracle = weak_residuals(Trajectory.from_fields(tr.grid, d_fine, tr.times, rr, pp), lm, lb)
    fine = {k: v[-1] for k, v in rep.weak.items()}
    ratio = {k: fine[k] / oracle[k] if oracle[k] > 0 else math.inf for k in fine}
    return CriterionResult(4, "weak solution", {
        "finest residuals within 3x of the spectral oracle": all(v <= WEAK_ORACLE_FACTOR for v in ratio.values()),
        "aggregate log-log slope at least 0.8": rep.weak_aggregate_slope >= WEAK_MIN_SLOPE,
    }, {"finest_delta": d_fine, "finest_residuals": fine, "oracle_residuals": oracle,
        "oracle_ratio": ratio, "aggregate_slope": rep.weak_aggregate_slope, "slopes": rep.weak_slopes})


def entropy_problem(ctx: AcceptanceContext):
    """Riemann coordinates and Goursat rectangle covering every sweep state."""
    coords = entropy_pairs.riemann_z(ctx.model)
    trajs = list(ctx.sweep.trajectories.values())
    r = np.concatenate([t.r.ravel() for t in trajs])
    p = np.concatenate([t.p.ravel() for t in trajs])
    wr = entropy_pairs.visited_w_range(coords, r, p)
    e = ctx.config.entropy
    return coords, entropy_pairs.default_problem(*wr, n2=e.n2, datum=e.datum, margin=e.margin)


def lax_pairs(ctx: AcceptanceContext) -> CriterionResult:
    coords, prob = entropy_problem(ctx)
    e = ctx.config.entropy
    coarse = entropy_pairs.goursat_solve(prob, ctx.model, coords, e.tol_series, e.max_depth)
    fine = entropy_pairs.goursat_solve(prob.refined(), ctx.model, coords, e.tol_series, e.max_depth)
    datum_err = float(np.max(np.abs(coarse.H[0] - prob.datum(coarse.w2))))
    q_edge = float(np.max(np.abs(coarse.Q[:, 0])))
    ratios = [a / b if b > 0 else math.inf for a, b in zip(coarse.residuals, fine.residuals)]
    inc = coarse.increment_ratios
    max_inc = float(inc.max()) if inc.size else 0.0
    return CriterionResult(5, "Lax entropy pairs", {
        "Goursat data reproduced exactly": datum_err == 0.0 and q_edge == 0.0,
        "both Lax residuals shrink 3.5x under refinement": all(r >= LAX_MIN_RATIO for r in ratios),
        "series increments decay with ratio below 1/2": max_inc < SERIES_MAX_RATIO,
    }, {"rectangle": {"corner": list(prob.corner), "extent": list(prob.extent), "n2": prob.n2},
        "datum_error": datum_err, "Q_edge": q_edge, "residuals_coarse": list(coarse.residuals),
        "residuals_fine": list(fine.residuals), "refinement_ratios": ratios, "depth": coarse.depth,
        "max_increment_ratio": max_inc})


def local_lax(ctx: AcceptanceContext) -> CriterionResult:
    lm, _ = ctx.linear
    pair, lin_pair = entropy_pairs.FreeEnergyPair(ctx.model), entropy_pairs.FreeEnergyPair(lm)
    rows = []
    ok = True
    for d, tr in ctx.sweep.trajectories.items():
        ep = entropy_pairs.entropy_production(pair, tr)
        tol = entropy_pairs.production_tolerance(entropy_pairs.entropy_production(lin_pair, ctx.linear_runs[d]))
        frac = float(np.mean(ep.sigma >= -tol))
        ok = ok and frac == 1.0
        rows.append({"delta": d, "min_cell_production": ep.min_sigma(), "tol_disc": tol, "fraction_ok": frac})
    return CriterionResult(6, "local Lax entropy condition", {
        "production above -tol_disc on every cell": ok,
    }, {"runs": rows})


def green_identities(ctx: AcceptanceContext) -> CriterionResult:
    gc = ctx.config.greens
    rng = np.random.default_rng(ctx.config.seed)
    n = gc.samples
    x, xp = rng.uniform(0.0, 1.0, n), rng.uniform(0.0, 1.0, n)
    t = rng.uniform(0.01, 1.0, n)
    kp, kr = greens.SpectralKernel("p", gc.delta), greens.SpectralKernel("r", gc.delta)
    ident = greens.mixed_identity_check(kp, kr, x, xp, t)

    # composition on a profile with a jump, so the tail is not trivial
    g = ctx.grid
    step = np.where((g.x > 0.3) & (g.x < 0.6), 1.0, 0.0) + g.x * (1.0 - g.x)
    comp = []
    for kern in (kp, kr):
        f = step.copy()
        f[0 if kern.kind == "p" else -1] = 0.0
        for s, u in rng.uniform(0.01, 0.5, (5, 2)):
            comp.append(greens.composition_defect(kern, f, float(s), float(u), g))
    comp_ok = all(c["defect"] <= c["bound"] for c in comp)

    lm, lb = ctx.linear
    r0, p0 = ctx.initial_functions()
    sol = greens.LinearSpectralSolution.from_functions(lm.c1, gc.delta, lb, r0, p0)
    snaps = np.linspace(0.0, ctx.T, 21)
    errs = []
    for M in gc.refinement:
        grid = Grid(M)
        tr = solve(ctx.initial_data(lm, lb, grid), ViscousConfig(gc.delta, ctx.T, snapshot_times=snaps), lm, lb)
        rr, pp = sol.evaluate(tr.times, grid.x)
        errs.append(float(np.max(np.sqrt(grid.integrate((tr.r - rr) ** 2 + (tr.p - pp) ** 2)))))
    observed = errs[1] / (errs[0] / 4.0)
    return CriterionResult(7, "Green identities", {
        "symmetry and derivative identities within 1e-12": ident["max"] <= IDENTITY_TOL,
        "semigroup composition defect below the tail bound": comp_ok,
        "spectral vs finite differences within 2x of the refinement prediction":
            1.0 / REFINEMENT_FACTOR <= observed <= REFINEMENT_FACTOR,
    }, {"identity_defects": ident, "composition": comp, "fd_errors": errs,
        "refinement": list(gc.refinement), "observed_over_predicted": observed})


def lipschitz(ctx: AcceptanceContext) -> CriterionResult:
    family = {**{"r:" + k: v[0] for k, v in _R_PROFILES.items()},
              **{"p:" + k: v[0] for k, v in _P_PROFILES.items()}}
    per_delta, per_phi = [], {k: [] for k in family}
    for tr in ctx.sweep.trajectories.values():
        scaled = {}
        for name, phi in family.items():
            d = greens.lipschitz_test(tr, phi)
            per_phi[name].append(d["ratio"])
            scaled[name] = d["ratio"] / (d["phi_l2"] + d["dphi_l2"])
        per_delta.append(max(scaled.values()))
    C = np.asarray(per_delta)
    spread = float((C.max() - C.min()) / C.max())
    phi_spread = {k: float((max(v) - min(v)) / max(v)) for k, v in per_phi.items()}
    return CriterionResult(8, "Lipschitz continuity", {
        "per-delta Lipschitz constants vary by less than 25%": spread < LIPSCHITZ_SPREAD_MAX,
    }, {"C_delta": per_delta, "spread": spread, "per_phi_spread": phi_spread})


def chain_setup(config: ExperimentConfig):
    """Harmonic potential, boundary ramp and initial profiles of the chain experiment."""
    c = config.chain
    b = config.boundary
    ic = config.initial
    V = chain_sde.harmonic_potential(c.stiffness)
    ramp = BoundaryTensionProfile(c.stiffness * b.strain_start, c.stiffness * b.strain_end, b.t_star)
    r_prof = lambda x: b.strain_start + ic.r_amp * np.cos(0.5 * math.pi * x)  # noqa: E731
    p_prof = lambda x: ic.p_amp * np.sin(0.5 * math.pi * x)  # noqa: E731
    return V, ramp, r_prof, p_prof


def chain_table(config: ExperimentConfig, N: int):
    """Ensemble, noiseless chain and PDE on two grids for one chain length."""
    c = config.chain
    V, ramp, r_prof, p_prof = chain_setup(config)
    cfg = chain_sde.ChainConfig(N, V, ramp, beta_inv=c.beta_inv, delta0=c.delta0, ensemble=c.ensemble,
                                seed=config.seed, T=c.T)
    times = np.linspace(0.0, c.T, c.samples)
    res = chain_sde.run_ensemble(cfg, r_prof, p_prof, chain_sde.DEFAULT_G, times)
    mf = chain_sde.run_ensemble(cfg, r_prof, p_prof, chain_sde.DEFAULT_G, times, noise=False)
    pdes = []
    for M in (config.grid.M, 2 * config.grid.M):
        g = Grid(M)
        pdes.append(solve(StateField(g, r_prof(g.x), p_prof(g.x)),
                          ViscousConfig(cfg.delta_eff, c.T, snapshot_times=res.times), V, ramp))
    return res, chain_sde.hydro_compare(res, pdes[0], chain_sde.DEFAULT_G, pdes[1], mf)


def hydrodynamics(ctx: AcceptanceContext) -> CriterionResult:
    sizes = sorted(ctx.config.chain.sizes)
    rms, maxz = [], []
    last = None
    for N in sizes:
        _, tab = chain_table(ctx.config, N)
        rms.append(tab.rms_deviation)
        maxz.append(float(np.max(np.abs(tab.deviation) / tab.combined_se)))
        last = tab
    return CriterionResult(9, "hydrodynamic consistency", {
        f"deviations within 3 combined SE at N={sizes[-1]}": last.within(HYDRO_SE_FACTOR),
        "RMS deviation nonincreasing in N": all(b <= a for a, b in zip(rms, rms[1:])),
    }, {"sizes": sizes, "rms_deviation": rms, "max_z": maxz})


CRITERIA = {
    1: energy_bound,
    2: clausius,
    3: strong_convergence,
    4: weak_solution,
    5: lax_pairs,
    6: local_lax,
    7: green_identities,
    8: lipschitz,
    9: hydrodynamics,
}


def run_suite(config: ExperimentConfig, only=None, log: Callable[[str], None] | None = None):
    """Evaluate the selected criteria (all by default) in order."""
    ctx = AcceptanceContext(config)
    out = []
    for k in sorted(CRITERIA if only is None else only):
        res = CRITERIA[k](ctx)
        if log:
            log(res.line())
        out.append(res)
    return out


def report_json(config: ExperimentConfig, results: list[CriterionResult]) -> str:
    failures = [r.number for r in results if not r.passed]
    doc = {"config": config.to_dict(), "criteria": [r.to_dict() for r in results],
           "failures": failures, "passed": not failures}
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"
