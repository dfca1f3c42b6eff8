"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The experiment grids come from the shipped configs in ``configs/`` and are
run once per session through the CLI code path.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from resetfree import cli, make_gridworld, make_random_tabular, oracle, trap_gridworld_3x3

from conftest import chain_spec

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ("smoke", "reduction", "optimism", "scaling")


def announce(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")


@pytest.fixture(scope="session")
def grids(tmp_path_factory):
    """Run every shipped config once; returns name -> (cfg, summary, per-run docs, seconds)."""
    out = {}
    for name in CONFIGS:
        cfg = cli.load_config(ROOT / "configs" / f"{name}.json")
        cfg["output_dir"] = str(tmp_path_factory.mktemp(name))
        t0 = time.perf_counter()
        status = cli.cmd_run(cfg, out=open("/dev/null", "w"))
        secs = time.perf_counter() - t0
        d = Path(cfg["output_dir"])
        summary = json.loads((d / "grid_summary.json").read_text())
        runs = [json.loads(p.read_text()) for p in sorted(d.glob("*__K*__seed*.json"))]
        out[name] = {"cfg": cfg, "status": status, "summary": summary, "runs": runs, "seconds": secs, "dir": d}
    return out


def test_criterion_1_saddle_certification(capsys):
    t0 = time.perf_counter()
    specs = [trap_gridworld_3x3()]
    for i in range(24):
        rng = np.random.default_rng(1000 + i)
        S, A, H = 3 + i % 4, 2 + i % 2, 1 + i % 4
        specs.append(make_random_tabular(S, A, H, (0.2, 0.34)[i % 2], rng))
    worst = {}
    rng = np.random.default_rng(7)
    for spec in specs:
        assert spec.num_states <= 9 and spec.num_actions <= 4
        rep = oracle.certify_saddle_point(spec, oracle.saddle_point(spec), 200, rng)
        assert rep.passed, (spec, rep.worst)
        for key, v in rep.worst.items():
            worst[key] = max(worst.get(key, 0.0), v)
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-9 and secs <= 60 and len(specs) >= 21
    announce(capsys, 1, ok, f"{len(specs)} specs x 200 samples, worst violation {max(worst.values()):.2e}, {secs:.1f}s")
    assert ok


def test_criterion_2_restricted_equivalence(capsys):
    specs = [
        chain_spec(bonus=0.9),
        make_random_tabular(3, 2, 3, 0.3, np.random.default_rng(1)),
        make_random_tabular(4, 2, 4, 0.25, np.random.default_rng(2)),
        make_random_tabular(6, 2, 3, 0.2, np.random.default_rng(3)),
        make_random_tabular(4, 3, 3, 0.25, np.random.default_rng(4)),
        make_random_tabular(5, 3, 2, 0.2, np.random.default_rng(5)),
        make_gridworld(2, 2, [(1, 0)], (1, 1), 0.2, 2),
    ]
    checked, bad = 0, 0
    for spec in specs:
        assert oracle.num_deterministic_policies(spec) <= 10**6
        rep = oracle.certify_restricted_equivalence(spec, 0, np.random.default_rng(0))
        assert rep.details["exhaustive"]
        checked += rep.num_samples
        bad += rep.worst["counterexamples"]
    ok = bad == 0
    announce(capsys, 2, ok, f"{len(specs)} specs, {checked} deterministic policies enumerated, {bad} counterexamples")
    assert ok


def test_criterion_3_reduction_inequalities(grids, capsys):
    red = grids["reduction"]
    envs = {r["env"] for r in red["runs"]}
    seeds = {r["seed"] for r in red["runs"]}
    assert {r["K"] for r in red["runs"]} == {500} and len(envs) >= 3 and len(seeds) >= 10
    worst, n = 0.0, 0
    for g in grids.values():
        for r in g["runs"]:
            rep = r["verification"]["reduction"]
            n += 1
            assert rep["passed"], (r["env"], r["K"], r["seed"], rep)
            worst = max(worst, rep["max_excess"]["regret_bound"], rep["max_excess"]["resets_bound"])
    ok = worst <= 1e-6 and red["seconds"] <= 300
    announce(capsys, 3, ok, f"{n} runs, every prefix checked, worst excess {worst:.2e}, reduction grid {red['seconds']:.0f}s")
    assert ok


def test_criterion_4_dual_regret_bound(grids, capsys):
    n, slack = 0, np.inf
    for g in grids.values():
        for r in g["runs"]:
            rep = r["verification"]["dual_bound"]
            assert "star" in rep or not r["hyper"]["comparator_in_U"]
            assert rep["passed"], (r["env"], r["seed"], rep)
            n += 1
            slack = min(slack, rep["bound_final"] - max(rep["zero_final"], rep.get("star_final", -np.inf)))
    ok = n > 0
    announce(capsys, 4, ok, f"{n} runs, both comparators, smallest final slack {slack:.3g}")
    assert ok


def test_criterion_5_optimism(grids, capsys):
    opt = grids["optimism"]
    runs = opt["runs"]
    assert len(runs) >= 100 and all(r["env"] == "trap3x3" for r in runs)
    assert all(r["hyper"]["overrides"] == [] and r["hyper"]["C"] == 1.0 and r["hyper"]["p"] == 0.05 for r in runs)
    held = [r["verification"]["optimism"]["passed"] for r in runs]
    frac = float(np.mean(held))
    ok = frac >= 0.95
    t1 = max(r["verification"]["optimism"]["t1"] for r in runs)
    bound = runs[0]["verification"]["optimism"]["bound"]
    announce(capsys, 5, ok, f"bound held in {frac:.0%} of {len(runs)} runs (largest T1 {t1:.3g} vs bound {bound:.4g})")
    assert ok


def test_criterion_6_sublinear_scaling(grids, capsys):
    sc = grids["scaling"]
    (rep,) = cli.scaling_report(sc["dir"])
    ok = (
        not rep["inconclusive"]
        and rep["K"] == [250, 500, 1000, 2000]
        and min(rep["seeds"]) >= 10
        and rep["regret_slope"] < 0.9
        and rep["resets_slope"] < 0.9
        and rep["avg_regret_ratio"] <= 0.6
        and sc["seconds"] <= 1200
    )
    announce(
        capsys, 6, ok,
        f"Regret slope {rep['regret_slope']:.3f}, Resets slope {rep['resets_slope']:.3f}, "
        f"avg-regret ratio {rep['avg_regret_ratio']:.3f}, {sc['seconds']:.0f}s "
        f"(overrides: {sc['runs'][0]['hyper']['overrides']})",
    )
    assert ok


def test_criterion_7_mechanical_invariants(grids, capsys, tmp_path):
    episodes, total = 0, 0
    for g in grids.values():
        assert g["cfg"]["verify"]["invariants"]
        for r in g["runs"]:
            inv = r["verification"]["invariants"]
            episodes += inv["episodes"]
            total += inv["total"]
            assert inv["min_gram_eigenvalue"] >= r["hyper"]["ridge"] - 1e-9
            assert inv["max_softmax_error"] <= 1e-12
    # same-seed determinism: replay one cell of every grid
    identical = True
    for name, g in grids.items():
        cfg = dict(g["cfg"], output_dir=str(tmp_path / name))
        env = g["cfg"]["envs"][0]
        K, seed = g["cfg"]["episodes"][0], g["cfg"]["seeds"][0]
        cell = cli.run_cell(env, K, seed, cfg)
        again = Path(cell["csv"]).read_bytes()
        identical &= again == (g["dir"] / Path(cell["csv"]).name).read_bytes()
    ok = total == 0 and identical
    announce(capsys, 7, ok, f"{episodes} episodes checked, {total} violations, same-seed CSV replay identical: {identical}")
    assert ok


def test_all_grids_exit_cleanly(grids):
    assert {name: g["status"] for name, g in grids.items()} == {name: 0 for name in grids}
