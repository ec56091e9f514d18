"""Command-line front end.

Usage::

    divbands <subcommand> --config FILE [--bands M|escalate] [--seed N] [--workers K] [--out DIR]

``--config`` takes a JSON file or the name of a bundled config
(``erlang21``, ``erlang_mix1``, ``erlang_mix2``, ``pareto``, ``erlang_pareto``).
Every subcommand writes ``result.json`` into ``--out``; solvers and
``hjb-check`` also write ``hjb.csv``, ``solve-es`` writes ``fitness.csv`` and
``scale-table`` writes ``scale.csv``.

Exit status is 2 for invalid configuration, 1 for numerical failures and 0
otherwise. The log level is read from ``DIVBANDS_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from divbands.deficit import Tables, build_tables
from divbands.errors import DivBandsError, InvariantError
from divbands.es import EsConfig, es_optimize, escalate_bands
from divbands.gradient import GradientSolverConfig, solve_gradient
from divbands.mc import mc_estimate
from divbands.model import BandStrategy, ClaimDistribution, ModelParams, collapsed_pairs
from divbands.value import HjbReport, ValueFunction, hjb_check

log = logging.getLogger("divbands")

BUNDLED = ("erlang21", "erlang_mix1", "erlang_mix2", "pareto", "erlang_pareto")

_TOP_KEYS = {"model", "claims", "grid", "gradient", "es", "mc", "output"}
_MODEL_KEYS = {"lambda", "delta", "eta"}
_GRID_KEYS = {"n_grid", "n_deficit"}
_MC_KEYS = {"n_paths"}
# the config file says "lambda" for the offspring count, the dataclass says lam
_ES_RENAME = {"lambda": "lam"}


class ConfigError(InvariantError):
    """The experiment configuration could not be parsed."""


@dataclass
class ExperimentConfig:
    """Everything needed to run one experiment."""

    lam: float
    delta: float
    eta: float
    claims: ClaimDistribution
    n_grid: int = 10000
    n_deficit: int = 1000
    gradient: GradientSolverConfig = field(default_factory=GradientSolverConfig)
    es: EsConfig = field(default_factory=EsConfig)
    n_paths: int = 100000
    output: Optional[str] = None
    raw: dict = field(default_factory=dict)

    @property
    def params(self) -> ModelParams:
        return ModelParams.for_claims(self.lam, self.delta, self.eta, self.claims)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(d, _TOP_KEYS, "config")
        for key in ("model", "claims"):
            if key not in d:
                raise ConfigError(f"config is missing {key!r}")
        model = d["model"]
        _reject_unknown(model, _MODEL_KEYS, "model")
        missing = _MODEL_KEYS - set(model)
        if missing:
            raise ConfigError(f"model is missing {sorted(missing)}")
        claims = ClaimDistribution.from_dict(d["claims"])
        grid = d.get("grid", {})
        _reject_unknown(grid, _GRID_KEYS, "grid")
        gcfg = _dataclass_from(GradientSolverConfig, d.get("gradient", {}), "gradient")
        es_raw = {_ES_RENAME.get(k, k): v for k, v in d.get("es", {}).items()}
        ecfg = _dataclass_from(EsConfig, es_raw, "es")
        mc = d.get("mc", {})
        _reject_unknown(mc, _MC_KEYS, "mc")
        return cls(float(model["lambda"]), float(model["delta"]), float(model["eta"]), claims,
                   int(grid.get("n_grid", 10000)), int(grid.get("n_deficit", 1000)), gcfg, ecfg,
                   int(mc.get("n_paths", 100000)), d.get("output"), d)


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _dataclass_from(cls, d: dict, where: str):
    names = {f.name for f in fields(cls)}
    _reject_unknown(d, names, where)
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**vals)


def load_config(path: str) -> ExperimentConfig:
    """Read a config file, or a bundled config by name."""
    p = Path(path)
    if p.exists():
        text = p.read_text()
    elif path in BUNDLED:
        text = resources.files("divbands.configs").joinpath(f"{path}.json").read_text()
    else:
        raise ConfigError(f"config file {path!r} not found")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    try:
        return ExperimentConfig.from_dict(d)
    except (TypeError, KeyError) as e:
        raise ConfigError(f"{path}: {e}") from e


# -- output helpers ------------------------------------------------------------

def _write_json(out: Path, record: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])


def _write_hjb(out: Path, rep: HjbReport) -> None:
    _write_csv(out / "hjb.csv", ("x", "L_residual", "V_prime"),
               zip(rep.x[rep.checked], rep.residual[rep.checked], rep.derivative[rep.checked]))


def _record(cmd: str, cfg: ExperimentConfig, args, **outputs) -> dict:
    inputs = {"config": cfg.raw, "seed": args.seed, "bands": args.bands}
    for name in ("levels", "u", "paths"):
        if getattr(args, name, None) is not None:
            inputs[name] = getattr(args, name)
    return {"command": cmd, "inputs": inputs, **outputs}


def _tables(cfg: ExperimentConfig) -> Tables:
    return build_tables(cfg.params, cfg.claims, cfg.n_grid, cfg.n_deficit)


def _levels(args) -> BandStrategy:
    if not args.levels:
        raise ConfigError("--levels is required for this subcommand")
    return BandStrategy(tuple(args.levels))


# -- subcommands ---------------------------------------------------------------

def cmd_solve_gradient(cfg, args, out):
    t0 = time.perf_counter()
    tables = _tables(cfg)
    t1 = time.perf_counter()
    gcfg = cfg.gradient
    if args.bands not in (None, "escalate"):
        gcfg = replace(gcfg, max_bands=int(args.bands))
    res = solve_gradient(tables, gcfg)
    _write_hjb(out, res.hjb)
    return _record("solve-gradient", cfg, args,
                   levels=list(res.strategy.levels), value_at_u0=res.value_at_u0, u0=tables.u0,
                   hjb=res.hjb.to_dict(), flat_region=res.flat_region, warning=res.warning,
                   timings={"tables_seconds": t1 - t0, **res.timings})


def cmd_solve_es(cfg, args, out):
    t0 = time.perf_counter()
    tables = _tables(cfg)
    t1 = time.perf_counter()
    ecfg = cfg.es
    if args.seed is not None:
        ecfg = replace(ecfg, rng_seed=args.seed)
    if args.workers:
        ecfg = replace(ecfg, workers=args.workers)
    if args.bands in (None, "escalate"):
        res = escalate_bands(tables, ecfg)
        rep = res.hjb
    else:
        res = es_optimize(tables, int(args.bands), ecfg)
        rep = hjb_check(ValueFunction(res.strategy, tables))
        res.collapse_detected = bool(collapsed_pairs(res.strategy, ecfg.collapse_tol))
    _write_hjb(out, rep)
    _write_csv(out / "fitness.csv", ("generation", "best_fitness"), enumerate(res.trace))
    return _record("solve-es", cfg, args,
                   levels=list(res.strategy.levels), fitness=res.fitness, u0=tables.u0,
                   generations_used=res.generations, collapse_detected=res.collapse_detected,
                   small_level=res.small_level, warning=res.warning, hjb=rep.to_dict(),
                   timings={"tables_seconds": t1 - t0, **res.timings})


def cmd_value(cfg, args, out):
    t0 = time.perf_counter()
    tables = _tables(cfg)
    s = _levels(args)
    us = args.u if args.u else [tables.u0]
    vals = np.atleast_1d(ValueFunction(s, tables)(np.array(us, float)))
    w = csv.writer(sys.stdout)
    w.writerow(("u", "value"))
    for u, v in zip(us, vals):
        w.writerow((repr(float(u)), repr(float(v))))
    return _record("value", cfg, args, levels=list(s.levels),
                   values=[{"u": float(u), "value": float(v)} for u, v in zip(us, vals)],
                   timings={"seconds": time.perf_counter() - t0})


def cmd_hjb_check(cfg, args, out):
    t0 = time.perf_counter()
    tables = _tables(cfg)
    s = _levels(args)
    rep = hjb_check(ValueFunction(s, tables), tol=cfg.gradient.hjb_tol)
    _write_hjb(out, rep)
    region = rep.positive_region()
    return _record("hjb-check", cfg, args, levels=list(s.levels), hjb=rep.to_dict(),
                   positive_region=list(region) if region else None,
                   timings={"seconds": time.perf_counter() - t0})


def cmd_simulate(cfg, args, out):
    t0 = time.perf_counter()
    s = _levels(args)
    params = cfg.params
    u = args.u[0] if args.u else params.u0
    n = args.paths or cfg.n_paths
    res = mc_estimate(params, cfg.claims, s, u, n, seed=args.seed or 0, workers=args.workers or 1)
    return _record("simulate", cfg, args, levels=list(s.levels), u_start=u, **res.to_dict(),
                   timings={"seconds": time.perf_counter() - t0})


def cmd_scale_table(cfg, args, out):
    t0 = time.perf_counter()
    tables = _tables(cfg)
    sc = tables.scale
    _write_csv(out / "scale.csv", ("x", "W", "W1", "W2"), zip(sc.grid, sc.w, sc.w1, sc.w2))
    return _record("scale-table", cfg, args, source=sc.source, rho=sc.rho, upper=sc.upper,
                   n_points=len(sc.grid), timings={"seconds": time.perf_counter() - t0})


COMMANDS = {
    "solve-gradient": cmd_solve_gradient,
    "solve-es": cmd_solve_es,
    "value": cmd_value,
    "hjb-check": cmd_hjb_check,
    "simulate": cmd_simulate,
    "scale-table": cmd_scale_table,
}


def _bands(text: str):
    if text == "escalate":
        return text
    try:
        m = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--bands takes a positive integer or 'escalate'")
    if m < 1:
        raise argparse.ArgumentTypeError("--bands must be at least 1")
    return m


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="divbands", description="Optimal band dividend strategies.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON config file or bundled config name")
    ap.add_argument("--bands", type=_bands, default=None, help="band count M or 'escalate'")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory (default: config 'output' or '.')")
    ap.add_argument("--levels", type=float, nargs="+", help="band levels b0 a1 b1 ...")
    ap.add_argument("--u", type=float, nargs="+", help="surplus values (default u0)")
    ap.add_argument("--paths", type=int, default=None, help="Monte Carlo paths")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("DIVBANDS_LOG_LEVEL", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.output or ".")
        record = COMMANDS[args.command](cfg, args, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except InvariantError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 2
    except (DivBandsError, ArithmeticError) as e:
        print(f"numerical failure ({type(e).__name__}): {e}", file=sys.stderr)
        return 1
    _write_json(out, record)
    if record.get("warning"):
        log.warning(record["warning"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
