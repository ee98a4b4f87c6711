import csv
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bocamp import cli
from bocamp.harness import (
    ENV_OUT,
    FULL_TRIALS,
    ConfigError,
    ExperimentConfig,
    TrialTask,
    Welford,
    load_schema,
    run_experiment,
    run_trials,
)
from bocamp.model import NoiseModel, Prior, SpectrumSpec
from bocamp.solvers import RunRecord

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = {"M": 128, "N": 256, "iterations": 8}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ------------------------------------------------------------ config


def test_schema_is_valid():
    jsonschema.Draft202012Validator.check_schema(load_schema())


@pytest.mark.parametrize("name", ["se_dynamics.json", "covariance_wave.json", "mse_vs_kappa.json", "single.json", "taps.json"])
def test_shipped_configs_validate(name):
    cfg = ExperimentConfig.from_file(CONFIGS / name)
    assert cfg.sigma2 == pytest.approx(1e-3)
    assert cfg.delta == 0.5


def test_defaults_and_normalisation():
    cfg = ExperimentConfig.from_dict({"kind": "se_dynamics", "snr_db": 20, "theta": -0.5, "delta": 0.25})
    assert cfg.sigma2 == pytest.approx(1e-2)
    assert cfg.theta == [-0.5]
    assert cfg.M == 512 and cfg.N == 2048
    assert cfg.trials == 100 and cfg.seeds[:3] == [0, 1, 2]
    assert cfg.horizon == 201


@pytest.mark.parametrize("bad, field", [
    ({"kind": "nope"}, "kind"),
    ({"kind": "se_dynamics", "rho": 1.5}, "rho"),
    ({"kind": "se_dynamics", "trials": 0}, "trials"),
    ({"kind": "se_dynamics", "colour": "red"}, "<root>"),
    ({"kind": "se_dynamics", "algorithms": ["camp", "lasso"]}, "algorithms.1"),
    ({"kind": "se_dynamics", "M": 4096}, "M"),
    ({"kind": "single_recovery", "M": 1000}, "M"),
    ({"kind": "se_dynamics", "tap_horizon": 50}, "tap_horizon"),
    ({"kind": "se_dynamics", "snr_db": 30, "sigma2": 1e-3}, "snr_db"),
    ({"kind": "se_dynamics", "delta": 0.5, "M": 256}, "delta"),
    ({"kind": "mse_vs_kappa", "spectrum": "row_orthogonal"}, "spectrum"),
])
def test_field_level_errors(bad, field):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(bad)
    assert any(e.startswith(field + ":") for e in exc.value.errors), exc.value.errors


def test_dense_kind_allows_any_size():
    cfg = ExperimentConfig.from_dict({"kind": "single_recovery", "spectrum": "iid_gaussian", "M": 300, "N": 600})
    assert cfg.delta == 0.5


def test_malformed_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{kind: ")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(p)


def test_replace_revalidates():
    cfg = ExperimentConfig("se_dynamics")
    assert cfg.replace(theta=[0.0], out=None).theta == [0.0]
    with pytest.raises(ConfigError):
        cfg.replace(damping=2.0)


# ------------------------------------------------------------ streaming stats


@settings(max_examples=200)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.data())
def test_welford_merge_matches_batch(xs, data):
    k = data.draw(st.integers(0, len(xs)))
    a, b, whole = Welford(), Welford(), Welford()
    for x in xs[:k]:
        a.add(x)
    for x in xs[k:]:
        b.add(x)
    for x in xs:
        whole.add(x)
    m = a.merge(b)
    scale = max(1.0, float(np.max(np.abs(xs))))
    assert m.n == len(xs)
    assert m.mean == pytest.approx(np.mean(xs), abs=1e-9 * scale)
    assert m.variance == pytest.approx(np.var(xs, ddof=1), abs=1e-7 * scale**2)
    assert whole.mean == pytest.approx(m.mean, abs=1e-9 * scale)
    assert m.stderr == pytest.approx(np.std(xs, ddof=1) / np.sqrt(len(xs)), abs=1e-7 * scale)


def test_welford_merge_with_empty():
    a = Welford()
    a.add(2.0)
    assert a.merge(Welford()) == a and Welford().merge(a) == a
    assert Welford().merge(Welford()) == Welford()


def test_pool_matches_serial():
    task = TrialTask(SpectrumSpec("row_orthogonal", 64, 128), Prior(0.1), NoiseModel(1e-3),
                     ("amp", "oamp_vamp"), 5)
    seeds = list(range(60))
    serial = run_trials(task, seeds, workers=1)
    pooled = run_trials(task, seeds, workers=2)
    for algo in task.algorithms:
        assert serial[algo] == pooled[algo]
        assert serial[algo].mse.n == 60


# ------------------------------------------------------------ experiments


def test_tap_check_experiment(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "tap_check", "kappa": 2, "theta": [0.0, -0.7], "tap_horizon": 40,
                                      "out": str(tmp_path)})
    res = run_experiment(cfg)
    rows = read_csv(tmp_path / "tap_check.csv")
    assert rows[0] == ["case", "residual", "tolerance", "passed"]
    assert len(rows) == 5 and all(r[3] == "true" for r in rows[1:])
    assert all(c["residual"] < 1e-8 for c in res.summary["cases"])


def test_tap_check_reports_unconverged_series(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "tap_check", "kappa": 17, "theta": -0.7, "tap_horizon": 40,
                                      "out": str(tmp_path)})
    case = run_experiment(cfg).summary["cases"][-1]
    assert not case["passed"] and "not converged" in case["note"]


def test_se_dynamics_outputs(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "se_dynamics", "kappa": 2, "theta": [0.0, -0.7], "iterations": 10,
                                      "out": str(tmp_path)})
    res = run_experiment(cfg)
    for th in ("theta=0", "theta=-0.7"):
        rows = read_csv(tmp_path / th / "se_dynamics.csv")
        assert rows[0] == ["t", "a_tt", "d_tt"] and len(rows) == 12
        assert float(rows[1][2]) == 1.0
    assert len(res.summary["runs"]) == 2
    assert "dB" in (tmp_path / "summary.txt").read_text()


def test_se_row_orthogonal_ignores_theta(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "se_dynamics", "spectrum": "row_orthogonal", "iterations": 6,
                                      "theta": [0.0, -0.7], "out": str(tmp_path)})
    res = run_experiment(cfg)
    assert (tmp_path / "theta=none" / "se_dynamics.csv").exists()
    assert len(res.summary["runs"]) == 1


def test_covariance_wave_outputs(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "se_covariance_wave", "kappa": 2, "theta": -0.7, "iterations": 6,
                                      "out": str(tmp_path)})
    res = run_experiment(cfg)
    rows = read_csv(tmp_path / "theta=-0.7" / "covariance_wave.csv")
    assert rows[0] == ["t_prime", "t", "d"] and len(rows) == 1 + 7 * 8 // 2
    run = res.summary["runs"][0]
    assert run["ridge_over_d_s"] > 0 and run["last_column_rel_err"] >= 0


def test_single_recovery_outputs(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "single_recovery", "spectrum": "row_orthogonal", **SMALL,
                                      "out": str(tmp_path)})
    res = run_experiment(cfg)
    for algo in ("camp", "amp", "oamp_vamp"):
        rows = read_csv(tmp_path / f"run_{algo}.csv")
        assert rows[0] == ["t", "mse", "se_prediction"] and len(rows) == 10
        rec = RunRecord.from_json((tmp_path / f"run_{algo}.json").read_text())
        assert rec.algo == algo and rec.seed == 0
        assert res.payload[algo] == rec
    camp = read_csv(tmp_path / "run_camp.csv")
    assert np.all(np.isfinite([float(r[2]) for r in camp[1:]]))
    oamp = read_csv(tmp_path / "run_oamp_vamp.csv")
    assert float(oamp[1][2]) == 1.0 and np.isfinite(float(oamp[-1][2]))


def test_single_recovery_iid_gaussian(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "single_recovery", "spectrum": "iid_gaussian", "M": 200, "N": 400,
                                      "theta": 0.0, "iterations": 8, "out": str(tmp_path)})
    res = run_experiment(cfg)
    assert res.summary["runs"]["amp"]["final_mse"] < 0.05


def test_sweep_outputs(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "mse_vs_kappa", **SMALL, "kappa_grid": [1, 5], "trials": 4,
                                      "theta": [0.0, -0.7], "select": "min_residual", "out": str(tmp_path)})
    res = run_experiment(cfg)
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0] == ["kappa", "algo", "mse_mean", "mse_stderr", "se_prediction", "converged"]
    assert len(rows) == 1 + 2 * 3
    sweep = res.payload
    assert np.isnan(sweep.cell(5.0, "amp").se_prediction)
    assert sweep.cell(5.0, "oamp_vamp").se_prediction == sweep.fixed_points[5.0]["d_s"]
    assert sweep.theta[1.0]["chosen"] is None
    assert sweep.theta[5.0]["chosen"] in (0.0, -0.7)
    assert all(c.trials == 4 for c in sweep.cells)
    assert res.manifest["seeds"]["values"] == [0, 1, 2, 3]


def test_reproducible_and_hashed(tmp_path):
    d = {"kind": "mse_vs_kappa", **SMALL, "kappa_grid": [5], "trials": 3, "algorithms": ["amp", "oamp_vamp"],
         "base_seed": 7}
    a = run_experiment(ExperimentConfig.from_dict({**d, "out": str(tmp_path / "a")}))
    b = run_experiment(ExperimentConfig.from_dict({**d, "out": str(tmp_path / "b"), "workers": 2}))
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    assert a.manifest["content_hash"] == b.manifest["content_hash"]
    c = run_experiment(ExperimentConfig.from_dict({**d, "base_seed": 8, "out": str(tmp_path / "c")}))
    assert c.manifest["content_hash"] != a.manifest["content_hash"]
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seeds"]["values"] == [7, 8, 9] and man["seeds"]["rule"] == "base_seed + trial_index"
    assert set(man["files"]) == {"sweep.csv"}


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    res = run_experiment(ExperimentConfig.from_dict({"kind": "tap_check", "kappa": 2, "theta": 0.0,
                                                     "tap_horizon": 40}))
    assert res.out_dir == tmp_path / "env" / "tap_check"
    assert (res.out_dir / "manifest.json").exists()


# ------------------------------------------------------------ CLI


def test_cli_taps_design(capsys):
    assert cli.main(["taps", "--kind", "geometric", "--kappa", "17", "--delta", "0.5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["residual"] < 1e-8 and report["passed"]
    assert len(report["tapset"]["g"]) == 121


def test_cli_taps_writes_file(tmp_path, capsys):
    assert cli.main(["taps", "--kind", "row_orthogonal", "--delta", "0.5", "--horizon", "40",
                     "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "taps.json").read_text())["residual"] < 1e-12


def test_cli_se_with_theta_override(tmp_path, capsys):
    cfgp = tmp_path / "se.json"
    cfgp.write_text(json.dumps({"kind": "se_dynamics", "kappa": 2, "iterations": 5}))
    assert cli.main(["se", "--config", str(cfgp), "--theta", "-0.5", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "theta=-0.5" / "se_dynamics.csv").exists()
    assert "artifacts in" in capsys.readouterr().out


def test_cli_recover_smoke(tmp_path, capsys):
    cfgp = tmp_path / "single.json"
    cfgp.write_text(json.dumps({"kind": "single_recovery", "spectrum": "row_orthogonal", **SMALL}))
    assert cli.main(["recover", "--config", str(cfgp), "--seed", "4", "--out", str(tmp_path / "o")]) == 0
    rec = RunRecord.from_json((tmp_path / "o" / "run_camp.json").read_text())
    assert rec.seed == 4


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "se_dynamics", "rho": 2}')
    assert cli.main(["se", "--config", str(bad)]) == 2
    assert "rho" in capsys.readouterr().err
    wrong = tmp_path / "wrong.json"
    wrong.write_text('{"kind": "tap_check"}')
    assert cli.main(["sweep", "--config", str(wrong)]) == 2
    assert cli.main(["taps", "--kind", "geometric", "--kappa", "0.5"]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["se", "--bogus"])
    assert exc.value.code != 0


def test_cli_full_flag():
    args = cli.build_parser().parse_args(["sweep", "--full"])
    assert cli.load_config(args).trials == FULL_TRIALS
    args = cli.build_parser().parse_args(["sweep", "--full", "--trials", "7"])
    assert cli.load_config(args).trials == 7
