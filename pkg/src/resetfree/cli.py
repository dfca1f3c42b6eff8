"""Command-line front end.

    resetfree run <config.json>        play every (env, K, seed) cell, write CSV + JSON, verify
    resetfree certify <config.json>    oracle-only checks on each configured environment
    resetfree scale <summary_dir>      log-log slopes of Regret(K) and Resets(K)

``RESETFREE_OUTPUT_DIR`` overrides ``output_dir`` from the config.
Exit codes: 0 success, 1 verification failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import oracle
from .env import EnvSpec, make_gridworld, make_random_tabular, trap_gridworld_3x3
from .errors import ConfigError, InfeasibleSpecError, SearchBoundError
from .features import check_norms, one_hot_dual, one_hot_primal
from .harness import GameHyper, dual_regret_check, run_game, t1_check, verify_reduction, write_run

OUTPUT_ENV_VAR = "RESETFREE_OUTPUT_DIR"
EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2

_cell = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}

ENV_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "kind": {"const": "gridworld"},
                "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "traps": {"type": "array", "items": _cell},
                "goal": {"oneOf": [_cell, {"type": "null"}]},
                "start": _cell,
                "slip": {"type": "number", "minimum": 0, "maximum": 1},
                "horizon": {"type": "integer", "minimum": 1},
            },
            "required": ["kind", "width", "height"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "preset"},
                "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                "preset": {"enum": ["trap_3x3"]},
                "horizon": {"type": "integer", "minimum": 1},
                "slip": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "required": ["kind", "preset"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "random_tabular"},
                "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                "num_states": {"type": "integer", "minimum": 2},
                "num_actions": {"type": "integer", "minimum": 2},
                "horizon": {"type": "integer", "minimum": 1},
                "reset_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "branching": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
            "required": ["kind", "num_states", "num_actions", "horizon"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "inline"},
                "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                "spec": {"type": "object"},
            },
            "required": ["kind", "spec"],
            "additionalProperties": False,
        },
    ]
}

_pos_int = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "env": ENV_SCHEMA,
        "envs": {"type": "array", "items": ENV_SCHEMA, "minItems": 1},
        "episodes": {"oneOf": [_pos_int, {"type": "array", "items": _pos_int, "minItems": 1}]},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "hyper": {
            "type": "object",
            "properties": {
                "B": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "C": {"type": "number", "exclusiveMinimum": 0},
                "ridge": {"type": "number", "exclusiveMinimum": 0},
                "p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "bonus_scale": {"type": "number", "minimum": 0},
                "alpha": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "beta": {"type": ["number", "null"], "minimum": 0},
                "sherman_morrison": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "workers": _pos_int,
        "verify": {
            "type": "object",
            "properties": {
                "saddle": {"type": "boolean"},
                "saddle_samples": _pos_int,
                "reduction": {"type": "boolean"},
                "equivalence": {"type": "boolean"},
                "dual_bound": {"type": "boolean"},
                "invariants": {"type": "boolean"},
                "optimism": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["episodes", "seeds"],
    "oneOf": [{"required": ["env"]}, {"required": ["envs"]}],
    "additionalProperties": False,
}

VERIFY_DEFAULTS = {
    "saddle": False,
    "saddle_samples": 200,
    "reduction": True,
    "equivalence": False,
    "dual_bound": True,
    "invariants": True,
    "optimism": False,
}


def _path_str(path) -> str:
    out = "$"
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def load_config(text_or_path) -> dict:
    """Parse and validate a config; raises :class:`ConfigError` with a location."""
    if isinstance(text_or_path, Path) or (isinstance(text_or_path, str) and not text_or_path.lstrip().startswith("{")):
        path = Path(text_or_path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    else:
        text = text_or_path
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda err: list(err.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(f"invalid config at {_path_str(err.absolute_path)}: {err.message}")
    cfg = dict(cfg)
    envs = cfg.pop("envs", None) or [cfg.pop("env")]
    cfg.pop("env", None)
    names = []
    for i, e in enumerate(envs):
        names.append(e.get("name") or default_env_name(e, i))
    if len(set(names)) != len(names):
        raise ConfigError(f"invalid config at $.envs: duplicate environment names {names}")
    cfg["envs"] = [dict(e, name=n) for e, n in zip(envs, names)]
    eps = cfg["episodes"]
    cfg["episodes"] = [eps] if isinstance(eps, int) else list(eps)
    cfg["hyper"] = dict(cfg.get("hyper", {}))
    cfg["verify"] = {**VERIFY_DEFAULTS, **cfg.get("verify", {})}
    cfg["output_dir"] = os.environ.get(OUTPUT_ENV_VAR) or cfg.get("output_dir", "runs")
    cfg.setdefault("workers", 1)
    return cfg


def default_env_name(env_cfg: dict, index: int) -> str:
    kind = env_cfg["kind"]
    if kind == "gridworld":
        return f"grid{env_cfg['width']}x{env_cfg['height']}_{index}"
    if kind == "preset":
        return env_cfg["preset"]
    if kind == "random_tabular":
        return f"random{env_cfg['num_states']}x{env_cfg['num_actions']}_{index}"
    return f"inline_{index}"


def build_env(env_cfg: dict) -> EnvSpec:
    """Construct the environment; infeasibility becomes a :class:`ConfigError`."""
    kind = env_cfg["kind"]
    try:
        if kind == "gridworld":
            return make_gridworld(
                env_cfg["width"],
                env_cfg["height"],
                trap_cells=[tuple(c) for c in env_cfg.get("traps", [])],
                goal_cell=tuple(env_cfg["goal"]) if env_cfg.get("goal") is not None else None,
                slip_prob=env_cfg.get("slip", 0.0),
                horizon=env_cfg.get("horizon", 5),
                start_cell=tuple(env_cfg.get("start", (0, 0))),
                name=env_cfg["name"],
            )
        if kind == "preset":
            return trap_gridworld_3x3(horizon=env_cfg.get("horizon", 5), slip_prob=env_cfg.get("slip", 0.1))
        if kind == "random_tabular":
            rng = np.random.default_rng(env_cfg.get("seed", 0))
            return make_random_tabular(
                env_cfg["num_states"], env_cfg["num_actions"], env_cfg["horizon"],
                env_cfg.get("reset_fraction", 0.2), rng, branching=env_cfg.get("branching", 2),
            )
        return EnvSpec.from_dict(env_cfg["spec"])
    except InfeasibleSpecError as e:
        raise ConfigError(
            f"environment {env_cfg['name']!r} is infeasible (some possible initial state cannot avoid resets): {e}"
        ) from e
    except (ValueError, KeyError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"environment {env_cfg['name']!r}: {e}") from e


def _hyper(cfg: dict) -> GameHyper:
    return GameHyper(**cfg["hyper"])


def run_cell(env_cfg: dict, K: int, seed: int, cfg: dict) -> dict:
    """One (env, K, seed) run: play, verify, write files.  Returns the summary."""
    spec = build_env(env_cfg)
    sp = oracle.saddle_point(spec)
    verify = cfg["verify"]
    res = run_game(
        spec, one_hot_primal(spec), one_hot_dual(spec), _hyper(cfg), K, seed, sp=sp,
        check_invariants=verify["invariants"],
    )
    checks = {}
    if verify["reduction"]:
        checks["reduction"] = verify_reduction(res.records, sp, spec)
    if verify["dual_bound"]:
        checks["dual_bound"] = dual_regret_check(res.records, sp, res.resolved["B"], res.resolved["comparator_in_U"])
    if verify["optimism"]:
        checks["optimism"] = t1_check(res.records, sp, res.resolved["B"], spec.horizon)
    if verify["invariants"]:
        checks["invariants"] = dict(res.invariants, passed=res.invariants["total"] == 0)
    passed = all(c["passed"] for c in checks.values())
    stem = f"{env_cfg['name']}__K{K}__seed{seed}"
    extra = {"env": env_cfg["name"], "K": K, "seed": seed, "verification": checks, "passed": passed}
    csv_path, json_path = write_run(res, cfg["output_dir"], stem, extra)
    return {
        "env": env_cfg["name"], "K": K, "seed": seed, "passed": passed,
        "regret": res.metrics.regret, "resets_expected": res.metrics.resets_expected,
        "resets_realized": res.metrics.resets_realized, "csv": str(csv_path), "json": str(json_path),
        "failed_checks": [k for k, c in checks.items() if not c["passed"]],
        "alpha": res.resolved["alpha"], "beta": res.resolved["beta"], "B": res.resolved["B"],
        "overrides": res.resolved["overrides"],
    }


def _stats(xs) -> tuple:
    xs = np.asarray(xs, dtype=float)
    se = float(xs.std(ddof=1) / math.sqrt(xs.size)) if xs.size > 1 else 0.0
    return float(xs.mean()), se


def grid_summary(cells: list) -> list:
    """Mean and standard error of Regret(K) and Resets(K) per (env, K)."""
    groups = {}
    for c in cells:
        groups.setdefault((c["env"], c["K"]), []).append(c)
    rows = []
    for (env, K), cs in sorted(groups.items()):
        rm, rse = _stats([c["regret"] for c in cs])
        cm, cse = _stats([c["resets_expected"] for c in cs])
        zm, zse = _stats([c["resets_realized"] for c in cs])
        rows.append({
            "env": env, "K": K, "seeds": len(cs),
            "regret_mean": rm, "regret_stderr": rse,
            "resets_mean": cm, "resets_stderr": cse,
            "resets_realized_mean": zm, "resets_realized_stderr": zse,
        })
    return rows


def certify_env(env_cfg: dict, verify: dict, seed: int = 0) -> dict:
    spec = build_env(env_cfg)
    sp = oracle.saddle_point(spec)
    rng = np.random.default_rng(seed)
    rep = {
        "env": env_cfg["name"],
        "lambda_hat": [None if np.isnan(x) else float(x) for x in sp.lambda_hat],
        "theta_star_norm": float(np.linalg.norm(sp.theta_star())),
        "features": check_norms(spec, one_hot_primal(spec), one_hot_dual(spec)),
    }
    rep["features"]["passed"] = bool(rep["features"]["ok"])
    rep["saddle"] = oracle.certify_saddle_point(spec, sp, verify["saddle_samples"], rng).to_dict()
    eq = oracle.certify_restricted_equivalence(spec, verify["saddle_samples"], rng, sp=sp)
    rep["equivalence"] = eq.to_dict()
    rep["passed"] = bool(rep["saddle"]["passed"] and rep["equivalence"]["passed"] and rep["features"]["passed"])
    return rep


def _print_rows(rows, out):
    print(f"{'env':<20} {'K':>6} {'seeds':>5} {'Regret(K)':>22} {'Resets(K)':>22}", file=out)
    for r in rows:
        print(
            f"{r['env']:<20} {r['K']:>6} {r['seeds']:>5} "
            f"{r['regret_mean']:>12.3f} ± {r['regret_stderr']:<7.3f} {r['resets_mean']:>12.3f} ± {r['resets_stderr']:<7.3f}",
            file=out,
        )


def cmd_run(cfg: dict, out=None) -> int:
    out = out or sys.stdout
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    env_reports = []
    status = EXIT_OK
    for env_cfg in cfg["envs"]:
        spec = build_env(env_cfg)
        try:
            sp = oracle.saddle_point(spec)
        except SearchBoundError as e:
            raise ConfigError(f"environment {env_cfg['name']!r}: {e}") from e
        B = cfg["hyper"].get("B")
        theta_norm = float(np.linalg.norm(sp.theta_star()))
        if B is not None and B < theta_norm:
            print(f"warning: B={B} is below ||theta*||={theta_norm:.4g}; the lambda* comparator is outside U", file=out)
        if cfg["verify"]["saddle"] or cfg["verify"]["equivalence"]:
            rep = certify_env(env_cfg, cfg["verify"], 0)
            env_reports.append(rep)
            if not rep["passed"]:
                status = EXIT_VERIFY
    jobs = [(e, K, s) for e in cfg["envs"] for K in cfg["episodes"] for s in cfg["seeds"]]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            cells = list(pool.map(run_cell, *zip(*jobs), [cfg] * len(jobs)))
    else:
        cells = [run_cell(e, K, s, cfg) for e, K, s in jobs]
    rows = grid_summary(cells)
    failed = [c for c in cells if not c["passed"]]
    if failed:
        status = EXIT_VERIFY
    doc = {
        "grid": rows,
        "cells": cells,
        "certification": env_reports,
        "hyper": cfg["hyper"],
        "overrides": sorted({o for c in cells for o in c["overrides"]}),
        "verify": cfg["verify"],
        "passed": status == EXIT_OK,
    }
    (out_dir / "grid_summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    _print_rows(rows, out)
    seen = set()
    for c in cells:
        if (c["env"], c["K"]) in seen:
            continue
        seen.add((c["env"], c["K"]))
        flag = f"  [overrides: {', '.join(c['overrides'])}]" if c["overrides"] else ""
        print(f"{c['env']:<20} K={c['K']}: alpha={c['alpha']:.4g} beta={c['beta']:.4g} B={c['B']:.4g}{flag}", file=out)
    for c in failed:
        print(f"FAILED {c['env']} K={c['K']} seed={c['seed']}: {', '.join(c['failed_checks'])}", file=out)
    for r in env_reports:
        if not r["passed"]:
            print(f"FAILED certification for {r['env']}", file=out)
    print(f"{len(cells)} runs written to {out_dir}; {'all checks passed' if status == EXIT_OK else 'verification failed'}", file=out)
    return status


def cmd_certify(cfg: dict, out=None) -> int:
    out = out or sys.stdout
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for env_cfg in cfg["envs"]:
        try:
            reports.append(certify_env(env_cfg, cfg["verify"], cfg["seeds"][0]))
        except SearchBoundError as e:
            raise ConfigError(f"environment {env_cfg['name']!r}: {e}") from e
    (out_dir / "certify.json").write_text(json.dumps(reports, indent=2, sort_keys=True))
    ok = True
    for r in reports:
        ok &= r["passed"]
        print(
            f"{r['env']:<20} saddle max violation {r['saddle']['max_violation']:.3g}  "
            f"equivalence counterexamples {r['equivalence']['worst']['counterexamples']}  "
            f"{'PASS' if r['passed'] else 'FAIL'}",
            file=out,
        )
    return EXIT_OK if ok else EXIT_VERIFY


def loglog_fit(Ks, values) -> tuple:
    """Least-squares slope and R^2 of ``log(values)`` against ``log(Ks)``."""
    x = np.log(np.asarray(Ks, dtype=float))
    y = np.log(np.maximum(np.asarray(values, dtype=float), 1e-300))
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else 1.0
    return float(slope), r2


def scaling_report(summary_dir, min_K: int = 4, min_seeds: int = 10) -> list:
    """Slopes per environment from the per-run summaries in ``summary_dir``."""
    runs = {}
    for p in sorted(Path(summary_dir).glob("*__K*__seed*.json")):
        doc = json.loads(p.read_text())
        runs.setdefault(doc["env"], {}).setdefault(doc["K"], []).append(doc["metrics"])
    report = []
    for env, byK in sorted(runs.items()):
        Ks = sorted(byK)
        seeds = [len(byK[K]) for K in Ks]
        reg = [float(np.mean([m["regret"] for m in byK[K]])) for K in Ks]
        res = [float(np.mean([m["resets_expected"] for m in byK[K]])) for K in Ks]
        entry = {"env": env, "K": Ks, "seeds": seeds, "regret_mean": reg, "resets_mean": res}
        entry["inconclusive"] = len(Ks) < min_K or min(seeds) < min_seeds
        if len(Ks) >= 2:
            entry["regret_slope"], entry["regret_r2"] = loglog_fit(Ks, reg)
            entry["resets_slope"], entry["resets_r2"] = loglog_fit(Ks, res)
            entry["avg_regret_ratio"] = (reg[-1] / Ks[-1]) / (reg[0] / Ks[0]) if reg[0] > 0 else float("nan")
        report.append(entry)
    return report


def cmd_scale(summary_dir, out=None) -> int:
    out = out or sys.stdout
    if not Path(summary_dir).is_dir():
        raise ConfigError(f"summary directory {summary_dir} does not exist")
    report = scaling_report(summary_dir)
    if not report:
        raise ConfigError(f"no run summaries found in {summary_dir}")
    Path(summary_dir, "scaling.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    for e in report:
        tag = "INCONCLUSIVE" if e["inconclusive"] else "ok"
        if "regret_slope" in e:
            print(
                f"{e['env']:<20} Regret slope {e['regret_slope']:.3f} (R2 {e['regret_r2']:.3f})  "
                f"Resets slope {e['resets_slope']:.3f} (R2 {e['resets_r2']:.3f})  "
                f"avg-regret ratio {e['avg_regret_ratio']:.3f}  [{tag}]",
                file=out,
            )
        else:
            print(f"{e['env']:<20} single K value  [{tag}]", file=out)
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="resetfree", description="Primal-dual reset-free RL experiments")
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", help="run an experiment grid")
    p.add_argument("config")
    p = sub.add_parser("certify", help="oracle-only checks")
    p.add_argument("config")
    p = sub.add_parser("scale", help="log-log scaling report over run summaries")
    p.add_argument("summary_dir")
    args = ap.parse_args(argv)
    try:
        if args.verb == "scale":
            return cmd_scale(args.summary_dir)
        cfg = load_config(Path(args.config))
        return cmd_run(cfg) if args.verb == "run" else cmd_certify(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
