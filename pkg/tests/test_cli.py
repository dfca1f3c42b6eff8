import csv
import json
from pathlib import Path

import numpy as np
import pytest

from resetfree import cli, make_gridworld
from resetfree.errors import ConfigError

from conftest import chain_spec

ROOT = Path(__file__).resolve().parents[1]


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


def base(tmp_path, **kw):
    doc = {"env": {"kind": "preset", "preset": "trap_3x3"}, "episodes": 20, "seeds": [0], "output_dir": str(tmp_path / "out")}
    doc.update(kw)
    return doc


def test_minimal_run(tmp_path, capsys):
    cfg = base(tmp_path, episodes=200)
    assert cli.main(["run", str(write(tmp_path, cfg))]) == 0
    out = tmp_path / "out"
    assert len(list(out.glob("*.csv"))) == 1
    assert len(list(out.glob("*__seed0.json"))) == 1
    assert "all checks passed" in capsys.readouterr().out


def test_overridden_hyperparameters_are_flagged(tmp_path, capsys):
    cfg = base(tmp_path, hyper={"ridge": 0.01, "bonus_scale": 0.5})
    assert cli.main(["run", str(write(tmp_path, cfg))]) == 0
    assert "[overrides: ridge, bonus_scale]" in capsys.readouterr().out
    doc = json.loads((tmp_path / "out" / "grid_summary.json").read_text())
    assert doc["overrides"] == ["bonus_scale", "ridge"]


def test_saddle_certification_is_embedded(tmp_path):
    spec = chain_spec(bonus=0.9)
    cfg = base(tmp_path, env={"kind": "inline", "name": "chain", "spec": spec.to_dict()}, verify={"saddle": True, "equivalence": True})
    assert cli.main(["run", str(write(tmp_path, cfg))]) == 0
    doc = json.loads((tmp_path / "out" / "grid_summary.json").read_text())
    cert = doc["certification"][0]
    assert cert["saddle"]["passed"] and cert["equivalence"]["details"]["exhaustive"]
    assert cert["lambda_hat"][0] == pytest.approx(0.9, abs=1e-10) and cert["lambda_hat"][1] is None


def test_empty_seed_list_is_a_config_error(tmp_path, capsys):
    cfg = base(tmp_path, episodes=1, seeds=[])
    assert cli.main(["run", str(write(tmp_path, cfg))]) == 2
    assert "$.seeds" in capsys.readouterr().err


def test_parse_error_reports_line_and_column(tmp_path, capsys):
    p = write(tmp_path, '{\n  "episodes": 3,\n  "seeds": [0,]\n}')
    assert cli.main(["run", str(p)]) == 2
    assert "line 3, column" in capsys.readouterr().err


@pytest.mark.parametrize(
    "patch, where",
    [
        ({"hyper": {"p": 1.5}}, "$.hyper.p"),
        ({"hyper": {"B": 0}}, "$.hyper.B"),
        ({"episodes": 0}, "$.episodes"),
        ({"bogus": 1}, "$"),
    ],
)
def test_schema_errors_name_the_field(tmp_path, patch, where):
    with pytest.raises(ConfigError, match=rf"at \{where}"):
        cli.load_config(json.dumps(base(tmp_path, **patch)))


def test_infeasible_environment_is_a_config_error(tmp_path, capsys):
    env = {"kind": "gridworld", "width": 2, "height": 2, "traps": [[1, 0], [0, 1], [1, 1]], "goal": [0, 0], "slip": 1.0, "horizon": 2}
    assert cli.main(["run", str(write(tmp_path, base(tmp_path, env=env)))]) == 2
    assert "infeasible" in capsys.readouterr().err


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV_VAR, str(tmp_path / "elsewhere"))
    assert cli.main(["run", str(write(tmp_path, base(tmp_path)))]) == 0
    assert list((tmp_path / "elsewhere").glob("*.csv")) and not (tmp_path / "out").exists()


def test_verification_failure_exit_code(tmp_path, monkeypatch):
    from resetfree import harness

    real = harness.verify_reduction

    def broken(*a, **k):
        rep = real(*a, **k)
        rep["passed"] = False
        return rep

    monkeypatch.setattr(cli, "verify_reduction", broken)
    assert cli.main(["run", str(write(tmp_path, base(tmp_path)))]) == 1


def test_same_config_gives_identical_csv(tmp_path):
    a = base(tmp_path, output_dir=str(tmp_path / "a"), seeds=[3, 4])
    b = base(tmp_path, output_dir=str(tmp_path / "b"), seeds=[3, 4], workers=2)
    assert cli.main(["run", str(write(tmp_path, a, "a.json"))]) == 0
    assert cli.main(["run", str(write(tmp_path, b, "b.json"))]) == 0
    for f in (tmp_path / "a").glob("*.csv"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_summary_matches_csv_recomputation(tmp_path):
    cfg = base(tmp_path, episodes=[15, 30], seeds=[0, 1, 2])
    assert cli.main(["run", str(write(tmp_path, cfg))]) == 0
    out = tmp_path / "out"
    doc = json.loads((out / "grid_summary.json").read_text())
    for row in doc["grid"]:
        regrets, resets = [], []
        for s in range(3):
            rows = list(csv.DictReader(open(out / f"{row['env']}__K{row['K']}__seed{s}.csv")))
            assert len(rows) == row["K"]
            regrets.append(float(rows[-1]["regret"]))
            resets.append(float(rows[-1]["resets_expected"]))
        assert row["regret_mean"] == pytest.approx(np.mean(regrets), abs=1e-12)
        assert row["resets_mean"] == pytest.approx(np.mean(resets), abs=1e-12)
        assert row["regret_stderr"] == pytest.approx(np.std(regrets, ddof=1) / np.sqrt(3), abs=1e-12)


def test_loglog_fit_synthetic():
    Ks = [250, 500, 1000, 2000]
    slope, r2 = cli.loglog_fit(Ks, [3 * np.sqrt(k) for k in Ks])
    assert slope == pytest.approx(0.5, abs=1e-12) and r2 == pytest.approx(1.0)
    assert cli.loglog_fit(Ks, [0.2 * k for k in Ks])[0] == pytest.approx(1.0, abs=1e-12)


def _fake_summaries(d, Ks, seeds, fn):
    d.mkdir(parents=True, exist_ok=True)
    for K in Ks:
        for s in range(seeds):
            doc = {"env": "e", "K": K, "seed": s, "metrics": {"regret": fn(K), "resets_expected": fn(K) / 10}}
            (d / f"e__K{K}__seed{s}.json").write_text(json.dumps(doc))


def test_scaling_report_on_synthetic_grid(tmp_path):
    _fake_summaries(tmp_path / "s", [250, 500, 1000, 2000], 10, lambda K: 2 * np.sqrt(K))
    (rep,) = cli.scaling_report(tmp_path / "s")
    assert not rep["inconclusive"]
    assert rep["regret_slope"] == pytest.approx(0.5) and rep["resets_slope"] == pytest.approx(0.5)
    assert rep["avg_regret_ratio"] == pytest.approx(np.sqrt(250 / 2000))
    assert cli.main(["scale", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "scaling.json").exists()


def test_scaling_report_flags_small_grids(tmp_path):
    _fake_summaries(tmp_path / "s", [250, 500, 1000], 10, lambda K: K)
    assert cli.scaling_report(tmp_path / "s")[0]["inconclusive"]
    _fake_summaries(tmp_path / "t", [1, 2, 3, 4], 3, lambda K: K)
    assert cli.scaling_report(tmp_path / "t")[0]["inconclusive"]


def test_scale_on_missing_directory(tmp_path):
    assert cli.main(["scale", str(tmp_path / "nope")]) == 2


def test_certify_verb(tmp_path, capsys):
    cfg = base(tmp_path, env={"kind": "random_tabular", "num_states": 4, "num_actions": 2, "horizon": 2, "seed": 1})
    assert cli.main(["certify", str(write(tmp_path, cfg))]) == 0
    assert "PASS" in capsys.readouterr().out
    assert json.loads((tmp_path / "out" / "certify.json").read_text())[0]["passed"]


def test_shipped_configs_validate():
    for p in sorted((ROOT / "configs").glob("*.json")):
        cfg = cli.load_config(p)
        for e in cfg["envs"]:
            cli.build_env(e)
