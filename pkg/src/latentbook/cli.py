"""Command-line front end.

Every subcommand reads an optional JSON config, writes CSV/JSON artifacts
into ``--out`` and finishes with ``manifest.json`` listing them.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 liquidity-crisis abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import __version__, analytic, bvp, calibration, impact, sim, stability
from .exceptions import LatentBookError, LiquidityCrisis, ParameterError
from .model import ModelParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CRISIS = 4


class CrisisAbort(Exception):
    """Raised after partial outputs are written for a crisis-terminated run."""


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: Optional[int]
    outputs: list[str] = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = __version__
    status: str = "ok"

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True), encoding="utf-8")
        return path


def config_digest(config: dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, compact separators)."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- config helpers ------------------------------------------------------------------


def _params(cfg: dict[str, Any]) -> ModelParams:
    if "params" in cfg:
        return ModelParams.from_dict(cfg["params"])
    d = dict(cfg.get("dimensionless", {"k_ll": 0.35, "k_lr": 0.112}))
    try:
        return ModelParams.from_dimensionless(d.pop("k_ll"), d.pop("k_lr", 0.0), **d)
    except TypeError as exc:
        raise ParameterError(f"bad dimensionless parameters: {exc}") from None


def _bvp_cfg(cfg: dict[str, Any]) -> bvp.BvpConfig:
    try:
        return bvp.BvpConfig(**cfg.get("solver", {}))
    except TypeError as exc:
        raise ParameterError(f"bad solver config: {exc}") from None


def _sim_cfg(p: ModelParams, cfg: dict[str, Any], seed: int) -> sim.SimConfig:
    s = dict(cfg.get("sim", {}))
    try:
        return sim.SimConfig.from_params(
            p,
            n_bins=s.pop("n_bins", 400),
            half_width=s.pop("half_width", None),
            p_diff_latent=s.pop("p_diff_latent", 0.1),
            seed=seed,
            **s,
        )
    except TypeError as exc:
        raise ParameterError(f"bad simulation config: {exc}") from None


def _out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ------------------------------------------------------------------------


def cmd_stationary(cfg: dict[str, Any], args: argparse.Namespace, outputs: list[str]) -> dict[str, Any]:
    p = _params(cfg)
    mode = cfg.get("mode", "bvp")
    solver = _bvp_cfg(cfg)
    if mode not in ("analytic-dr0", "analytic-dreq", "bvp"):
        raise ParameterError(f"unknown mode {mode!r}")
    if args.dry_run:
        return {"mode": mode, "params": p.to_dict(), "solver": asdict(solver)}
    out = _out(args)
    if mode == "analytic-dr0":
        profile = analytic.stationary_dr0(p)
    elif mode == "analytic-dreq":
        profile = analytic.stationary_dreq(p)
    else:
        profile = bvp.solve_stationary(p, solver)
    profile.to_csv(out / "profile.csv")
    outputs.append("profile.csv")
    diag = {"mode": mode, "params": p.to_dict(), **{k: v for k, v in profile.diagnostics.items()}}
    if mode == "bvp" and math.isclose(p.D_revealed, p.D_latent, rel_tol=1e-12):
        ref = analytic.stationary_dreq(p, profile.grid)
        scale = float(np.max(np.abs(ref.phi_revealed)))
        diag["max_rel_error_vs_closed_form"] = float(np.max(np.abs(profile.phi_revealed - ref.phi_revealed)) / scale)
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True), encoding="utf-8")
    outputs.append("diagnostics.json")
    return diag


def cmd_simulate(cfg: dict[str, Any], args: argparse.Namespace, outputs: list[str]) -> dict[str, Any]:
    p = _params(cfg)
    sc = _sim_cfg(p, cfg, args.seed)
    ensemble = int(cfg.get("ensemble", 1))
    if ensemble < 1:
        raise ParameterError("ensemble must be >= 1")
    if args.dry_run:
        return {"params": p.to_dict(), "sim": sc.to_dict(), "ensemble": ensemble}
    out = _out(args)
    seeds = [sc.seed] if ensemble == 1 else sim.ensemble_seeds(sc.seed, ensemble)
    results = [sim.run(sc.replace(seed=s)) for s in seeds]
    acc = results[0].accumulator
    for r in results[1:]:
        acc.merge(r.accumulator)
    acc.profile(p.replace(L_latent=sc.L_latent)).to_csv(out / "profile.csv")
    outputs.append("profile.csv")
    results[0].series.to_csv(out / "series.csv")
    outputs.append("series.csv")
    meta = {"members": [r.metadata(sc.replace(seed=s)) for r, s in zip(results, seeds)], "config": sc.to_dict()}
    vols = []
    for r in results:
        try:
            v = sim.volatility(r.series, sc.window, "trade")
            vf = sim.volatility(r.series, sc.window, "fair")
            vols.append({"trade_rs": v.rogers_satchell, "trade_p": v.parkinson, "fair_rs": vf.rogers_satchell, "fair_p": vf.parkinson})
        except ParameterError:
            vols.append(None)
    meta["volatility"] = vols
    sim.write_metadata(out / "metadata.json", meta)
    outputs.append("metadata.json")
    if any(r.aborted or r.crisis_steps for r in results):
        raise CrisisAbort("simulation hit a liquidity crisis or the domain edge; outputs are partial")
    return meta


def cmd_map(cfg: dict[str, Any], args: argparse.Namespace, outputs: list[str]) -> dict[str, Any]:
    solver = _bvp_cfg(cfg)
    ax_ll = dict({"n": 60, "lo": 0.02, "hi": 3.0}, **cfg.get("k_ll", {}))
    ax_lr = dict({"n": 60, "lo": 0.02, "hi": 3.0}, **cfg.get("k_lr", {}))
    ratios = cfg.get("ratios")
    if args.dry_run:
        return {"k_ll": ax_ll, "k_lr": ax_lr, "solver": asdict(solver), "ratios": ratios}
    out = _out(args)
    xs = stability.default_axis(int(ax_ll["n"]), float(ax_ll["lo"]), float(ax_ll["hi"]))
    ys = stability.default_axis(int(ax_lr["n"]), float(ax_lr["lo"]), float(ax_lr["hi"]))
    cells = stability.sweep(xs, ys, solver, args.workers)
    stability.write_cells_csv(cells, out / "cells.csv")
    outputs.append("cells.csv")
    line = stability.critical_line(cells, solver, xtol=1e-4)
    line.to_csv(out / "critical_line.csv")
    outputs.append("critical_line.csv")
    report = {"excluded_rows": {repr(k): v for k, v in line.excluded.items()}, "failed_cells": sum(not c.ok for c in cells)}
    if ratios:
        stability.line_from_ratios(ratios, solver).to_csv(out / "critical_line_ratios.csv")
        outputs.append("critical_line_ratios.csv")
    return report


def cmd_impact(cfg: dict[str, Any], args: argparse.Namespace, outputs: list[str]) -> dict[str, Any]:
    p = _params(cfg)
    sc = _sim_cfg(p, cfg, args.seed)
    m = dict({"m0": 10.0 * p.J, "duration": 0.5 / p.omega}, **cfg.get("metaorder", {}))
    try:
        spec = impact.MetaorderSpec(**m)
    except TypeError as exc:
        raise ParameterError(f"bad metaorder config: {exc}") from None
    ensemble = int(cfg.get("ensemble", 64))
    window = cfg.get("fit_window")
    if args.dry_run:
        return {"params": p.to_dict(), "sim": sc.to_dict(), "metaorder": asdict(spec), "ensemble": ensemble, "fit_window": window}
    out = _out(args)
    sim_params = sc.params
    traj = impact.run_metaorder(sc, spec, ensemble, args.workers)
    traj.to_csv(out / "trajectory.csv")
    outputs.append("trajectory.csv")
    report: dict[str, Any] = dict(traj.metadata)
    report["regime"] = spec.regime(sim_params)
    try:
        win = tuple(window) if window else (traj.Q[traj.Q.size // 100 + 1], traj.Q[-1])
        report["exponent"] = impact.fit_impact_exponent(traj, win)
        report["fit_window"] = list(win)
    except ParameterError as exc:
        report["exponent"] = None
        report["exponent_error"] = str(exc)
    try:
        book = impact.static_book(sim_params)
        q = traj.Q[traj.Q < book.max_volume]
        geo = book.price_of_Q(q)
        with open(out / "geometric.csv", "w", encoding="utf-8") as fh:
            fh.write("Q,price\n")
            for a, b in zip(q, geo):
                fh.write(f"{float(a)!r},{float(b)!r}\n")
        outputs.append("geometric.csv")
    except ParameterError:
        pass
    traj.metadata.update(report)
    traj.write_metadata(out / "metadata.json")
    outputs.append("metadata.json")
    if traj.crisis:
        raise CrisisAbort("liquidity crisis during execution; trajectory truncated")
    return report


def cmd_calibrate(cfg: dict[str, Any], args: argparse.Namespace, outputs: list[str]) -> dict[str, Any]:
    files = cfg.get("snapshots")
    if not files:
        files = [str(Path(__file__).parent / "data" / "synthetic_snapshots.csv")]
    base = Path(args.config).parent if args.config else Path.cwd()
    files = [str(f if Path(f).is_absolute() else (base / f)) for f in files]
    try:
        binning = calibration.BinningConfig(**cfg.get("binning", {}))
        fit_cfg = dict(cfg.get("fit", {}))
        for key in ("k_ll_range", "ratio_range"):
            if key in fit_cfg:
                fit_cfg[key] = tuple(fit_cfg[key])
        fitc = calibration.FitConfig(**fit_cfg)
    except TypeError as exc:
        raise ParameterError(f"bad calibration config: {exc}") from None
    solver = _bvp_cfg(cfg)
    if args.dry_run:
        return {"snapshots": files, "binning": asdict(binning), "fit": asdict(fitc), "solver": asdict(solver)}
    for f in files:
        if not Path(f).is_file():
            raise ParameterError(f"snapshot file not found: {f}")
    out = _out(args)
    profile = calibration.ingest_snapshots(files, binning, workers=args.workers)
    profile.to_csv(out / "profile.csv")
    outputs.append("profile.csv")
    result = calibration.fit(profile, solver, fitc)
    result.to_json(out / "fit.json")
    outputs.append("fit.json")
    result.to_table_csv(out / "table.csv", cfg.get("asset"))
    outputs.append("table.csv")
    line = stability.line_from_ratios(cfg_ratios(cfg), solver, xtol=1e-4)
    report = calibration.stability_report(result, line)
    report["skipped"] = profile.skipped
    report["n_snapshots"] = profile.n_snapshots
    (out / "stability.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=float), encoding="utf-8")
    outputs.append("stability.json")
    return report


def cfg_ratios(cfg: dict[str, Any]) -> Sequence[float]:
    return cfg.get("ratios", (0.01, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 1.0, 1.5, 2.0))


COMMANDS: dict[str, Callable[[dict[str, Any], argparse.Namespace, list[str]], dict[str, Any]]] = {
    "stationary": cmd_stationary,
    "simulate": cmd_simulate,
    "map": cmd_map,
    "impact": cmd_impact,
    "calibrate": cmd_calibrate,
}


# -- entry point ------------------------------------------------------------------------


def _add_globals(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master RNG seed")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="parallel workers")
    p.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS, help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentbook", description="Latent/revealed order book model")
    parser.add_argument("--version", action="version", version=__version__)
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "stationary": "stationary book (closed form or finite differences)",
        "simulate": "particle simulation",
        "map": "stability map and critical line",
        "impact": "metaorder impact experiment",
        "calibrate": "fit averaged order-book snapshots",
    }
    for name, text in helps.items():
        _add_globals(sub.add_parser(name, help=text))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    defaults = {"config": None, "out": "out", "seed": 0, "workers": os.cpu_count() or 1, "dry_run": False}
    for key, value in defaults.items():
        if not hasattr(args, key):
            setattr(args, key, value)

    try:
        cfg: dict[str, Any] = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
            if not isinstance(cfg, dict):
                raise ParameterError("config must be a JSON object")
        if "seed" in cfg and "--seed" not in (argv if argv is not None else sys.argv[1:]):
            args.seed = int(cfg["seed"])
    except (OSError, json.JSONDecodeError, ParameterError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outputs: list[str] = []
    manifest = RunManifest(args.command, config_digest(cfg), args.seed)
    start = time.perf_counter()
    code = EXIT_OK
    try:
        result = COMMANDS[args.command](cfg, args, outputs)
    except CrisisAbort as exc:
        print(f"liquidity crisis: {exc}", file=sys.stderr)
        manifest.status = "crisis"
        code = EXIT_CRISIS
    except LiquidityCrisis as exc:
        print(f"liquidity crisis: {exc}", file=sys.stderr)
        manifest.status = "crisis"
        code = EXIT_CRISIS
    except (ParameterError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LatentBookError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        manifest.status = "failed"
        code = EXIT_NUMERIC
    else:
        if args.dry_run:
            print(json.dumps({"command": args.command, "seed": args.seed, "config": result}, indent=2, sort_keys=True, default=str))
            return EXIT_OK
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
    if args.dry_run:
        return code
    manifest.wall_clock = time.perf_counter() - start
    manifest.outputs = list(outputs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
