"""Command line entry point: ``quasiwave <subcommand> [--config FILE]``.

Exit codes: 0 success, 1 contract failure (see ``failures.json`` in the
run directory), 2 configuration error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import acceptance, entropy_pairs, greens
from .chain_sde import ChainError
from .config import ConfigError, ExperimentConfig, load_config
from .convergence_lab import _clean
from .thermo import thermo_report
from .viscous_solver import SolverError, ViscousConfig, solve

log = logging.getLogger("quasiwave")

EXIT_OK, EXIT_CONTRACT, EXIT_CONFIG = 0, 1, 2


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def run_directory(root: Path, command: str) -> Path:
    """Fresh ``<root>/<command>-<UTC timestamp>`` directory (suffixed if taken)."""
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = Path(root) / f"{command}-{stamp}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _one_run(cfg: ExperimentConfig, ctx: acceptance.AcceptanceContext):
    return solve(ctx.initial_data(), ViscousConfig(cfg.solve.delta, cfg.grid.T, scheme=cfg.grid.scheme),
                 ctx.model, ctx.boundary)


# ---------------------------------------------------------------------------
# subcommands; each returns a list of failures (empty on success)
# ---------------------------------------------------------------------------


def cmd_solve(cfg: ExperimentConfig, out: Path) -> list:
    ctx = acceptance.AcceptanceContext(cfg)
    try:
        tr = _one_run(cfg, ctx)
    except SolverError as exc:
        return [{"stage": "solve", "t": exc.t, "message": str(exc)}]
    if cfg.solve.trajectory_stride:
        tr.write(out, "trajectory", stride=cfg.solve.trajectory_stride)
    thermo_report(tr, ctx.model, ctx.boundary).write(out, "thermo")
    log.info("solve: %d snapshots to t=%g", tr.times.size, tr.times[-1])
    return []


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> list:
    ctx = acceptance.AcceptanceContext(cfg)
    rep = ctx.sweep
    rep.write(out, "sweep", trajectory_stride=cfg.sweep.trajectory_stride)
    log.info("sweep: L1 decreasing=%s, L2 spread=%.4f", rep.l1_decreasing(), rep.l2_spread())
    return [{"stage": "sweep", "delta": d, "message": m} for d, m in rep.failures.items()]


def cmd_entropy(cfg: ExperimentConfig, out: Path) -> list:
    ctx = acceptance.AcceptanceContext(cfg)
    e = cfg.entropy
    try:
        tr = _one_run(cfg, ctx)
    except SolverError as exc:
        return [{"stage": "solve", "t": exc.t, "message": str(exc)}]
    coords = entropy_pairs.riemann_z(ctx.model)
    prob = entropy_pairs.default_problem(*entropy_pairs.visited_w_range(coords, tr.r, tr.p),
                                         n2=e.n2, datum=e.datum, margin=e.margin)
    try:
        pair = entropy_pairs.goursat_solve(prob, ctx.model, coords, e.tol_series, e.max_depth)
        fine = entropy_pairs.goursat_solve(prob.refined(), ctx.model, coords, e.tol_series, e.max_depth)
    except entropy_pairs.GoursatError as exc:
        return [{"stage": "goursat", "message": str(exc)}]
    pair.write(out, "entropy_pair")
    productions = {
        "free_energy": entropy_pairs.entropy_production(entropy_pairs.FreeEnergyPair(ctx.model), tr).summary(),
        "momentum": entropy_pairs.entropy_production(entropy_pairs.MomentumPair(ctx.model), tr).summary(),
        "goursat": entropy_pairs.entropy_production(pair, tr).summary(),
    }
    _dump(out / "entropy.json", {
        "delta": cfg.solve.delta,
        "depth": pair.depth,
        "increment_ratios": pair.increment_ratios.tolist(),
        "lax_residuals": {"n2": list(pair.residuals), "2 n2": list(fine.residuals)},
        "bounds": pair.bounds(),
        "production": productions,
    })
    return []


def cmd_greens(cfg: ExperimentConfig, out: Path) -> list:
    ctx = acceptance.AcceptanceContext(cfg)
    res = acceptance.green_identities(ctx)
    try:
        tr = _one_run(cfg, ctx)
    except SolverError as exc:
        return [{"stage": "solve", "t": exc.t, "message": str(exc)}]
    lip = {}
    for kind, profiles in (("r", acceptance._R_PROFILES), ("p", acceptance._P_PROFILES)):
        for name, (X, _) in profiles.items():
            d = greens.lipschitz_test(tr, X)
            lip[f"{kind}:{name}"] = {k: d[k] for k in ("ratio_r", "ratio_p", "ratio", "phi_l2", "dphi_l2")}
    _dump(out / "greens.json", {"identities": res.to_dict(), "lipschitz": {"delta": cfg.solve.delta, **lip}})
    return [{"stage": "greens", "clause": c} for c in res.failed_clauses]


def cmd_chain(cfg: ExperimentConfig, out: Path) -> list:
    rms = []
    for N in sorted(cfg.chain.sizes):
        try:
            res, tab = acceptance.chain_table(cfg, N)
        except ChainError as exc:
            return [{"stage": "chain", "N": N, "message": str(exc)}]
        res.write(out, f"chain_N{N}")
        tab.write(out, f"hydro_N{N}")
        rms.append(tab.rms_deviation)
        log.info("chain N=%d: rms deviation %.3g, within 3 SE: %s", N, tab.rms_deviation, tab.within())
    _dump(out / "chain.json", {"sizes": sorted(cfg.chain.sizes), "rms_deviation": rms})
    return []


def cmd_verify(cfg: ExperimentConfig, out: Path, only=None) -> list:
    results = acceptance.run_suite(cfg, only=only, log=print)
    (out / "report.json").write_text(acceptance.report_json(cfg, results))
    (out / "report.txt").write_text("".join(r.line() + "\n" for r in results))
    return [{"criterion": r.number, "name": r.name, "failed_clauses": r.failed_clauses}
            for r in results if not r.passed]


COMMANDS = {
    "solve": (cmd_solve, "one viscous run with its thermodynamic report"),
    "sweep": (cmd_sweep, "vanishing-viscosity sweep with convergence diagnostics"),
    "entropy": (cmd_entropy, "entropy-pair construction, Lax residuals and entropy production"),
    "greens": (cmd_greens, "Green's function identities and Lipschitz diagnostics"),
    "chain": (cmd_chain, "stochastic chain ensembles against the macroscopic equation"),
    "verify": (cmd_verify, "full acceptance suite"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quasiwave", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("-c", "--config", type=Path, default=None,
                       help="TOML experiment file (default: the shipped default.toml)")
        p.add_argument("-o", "--output-dir", type=Path, default=None,
                       help="root for run directories (overrides output_dir in the config)")
        if name == "verify":
            p.add_argument("--criteria", type=str, default=None,
                           help="comma-separated subset of criteria, e.g. 1,3")
    return ap


def _parse_criteria(text: str | None):
    if text is None:
        return None
    try:
        picked = sorted({int(s) for s in text.split(",") if s.strip()})
    except ValueError as exc:
        raise ConfigError("--criteria", f"expected integers, got {text!r}") from exc
    bad = [k for k in picked if k not in acceptance.CRITERIA]
    if bad or not picked:
        raise ConfigError("--criteria", f"choose from {sorted(acceptance.CRITERIA)}, got {text!r}")
    return picked


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        only = _parse_criteria(getattr(args, "criteria", None))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = run_directory(args.output_dir or Path(cfg.output_dir), args.command)
    _dump(out / "config.json", {"command": args.command, "config": cfg.to_dict(),
                                "criteria": only, "numpy": np.__version__})
    func = COMMANDS[args.command][0]
    failures = func(cfg, out, only) if args.command == "verify" else func(cfg, out)
    _dump(out / "failures.json", failures)
    print(out)
    if failures:
        print(f"{len(failures)} contract failure(s); see {out / 'failures.json'}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
