import csv
import dataclasses
import json
import os

import numpy as np
import pytest

from grda_lab.cli import main
from grda_lab.dynamics import uniform_grid
from grda_lab.errors import ConfigError, DivergenceError
from grda_lab.experiments import (METRIC_COLUMNS, ExperimentConfig, Report, build_lr_model, coverage_metric,
                                  emit_report, excess_risk_of_average, make_penalty, make_schedule, record_steps,
                                  report_tables, run_ensemble, run_lr_experiment, run_pca_experiment,
                                  run_rda_bias_check, support_metrics)
from grda_lab.models import LinearModel
from grda_lab.optimizer import NoPenalty, Zero
from grda_lab.sde import Band

SMALL_LR = dict(problem="lr", d=5, support=2, min_active_magnitude=0.5, gamma=1e-2, horizon=2.0, dt=0.1,
                reps=60, band_paths=100, kernel_samples=300, seed=11, trajectory_reps=3)


def _small(**kw):
    return ExperimentConfig.from_dict({**SMALL_LR, **kw})


# ---------------------------------------------------------------- configuration


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys: bogus"):
        ExperimentConfig.from_dict({"bogus": 1})


@pytest.mark.parametrize("field,value", [("gamma", 0.0), ("horizon", -1.0), ("reps", 0), ("alpha", 1.0),
                                         ("algorithm", "adam"), ("problem", "svm"), ("dt", 0.3)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"horizon": 2.0, field: value})


def test_config_json_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(str(arr))


def test_config_round_trip():
    cfg = _small()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_record_steps_exact_on_grid():
    assert record_steps(uniform_grid(1.0, 0.1), 1e-3).tolist() == list(range(0, 1001, 100))


# ---------------------------------------------------------------- metrics


def test_support_metric_spot_check():
    tz, fz = support_metrics(np.array([[[0.0, 0.0, 1.0]]]), np.array([0.0, 1.0, 1.0]))
    assert tz.tolist() == [1.0] and fz.tolist() == [0.5]


def test_coverage_metric_proportion():
    values = np.array([[[0.5, 3.0]], [[1.5, 0.0]]])  # 2 reps, 1 time, 2 coords
    cov = coverage_metric(values, np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]), np.array([True, True]))
    assert cov.tolist() == [0.5]
    cov = coverage_metric(values, np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]), np.array([True, False]))
    assert cov.tolist() == [0.5]


def test_excess_risk_examples():
    model = LinearModel.build(np.eye(3), [1.0, 0.0, -1.0])
    assert excess_risk_of_average(model, model.w_star) == 0.0
    assert excess_risk_of_average(model, model.w_star + [1.0, 0.0, 0.0]) == pytest.approx(0.5)


def test_noiseless_sgd_converges_monotonically():
    model = LinearModel.build(np.diag([1.0, 2.0]), [1.0, -0.5], sigma_eps=0.0)
    grid = uniform_grid(20.0, 0.5)
    ens = run_ensemble("lr", model, Zero(), NoPenalty(), 1e-3, grid, 1, 3, np.zeros(2))
    err = np.abs(ens.values[0] - model.w_star)
    assert np.max(err[-1]) <= 1e-3
    # random designs couple the coordinates, so monotonicity holds for the norm
    assert np.all(np.diff(np.linalg.norm(err, axis=1)) < 0)


def test_excess_risk_of_average_trends_down():
    cfg = _small(algorithm="sgd", horizon=20.0, dt=1.0, reps=100)
    model = build_lr_model(cfg)
    grid = uniform_grid(cfg.horizon, cfg.dt)
    ens = run_ensemble("lr", model, make_schedule(cfg), make_penalty(cfg), cfg.gamma, grid, cfg.reps, cfg.seed,
                       np.zeros(cfg.d))
    risk = ens.risk.mean(axis=0)
    sel = grid >= 5.0
    slope = np.polyfit(grid[sel], risk[sel], 1)[0]
    assert slope <= 0.0


def test_ensemble_divergence_fails_run():
    model = LinearModel.build(np.eye(3), [1.0, 0.0, 0.0])
    with pytest.raises(DivergenceError):
        run_ensemble("lr", model, Zero(), NoPenalty(), 5.0, uniform_grid(100.0, 10.0), 4, 0, np.zeros(3))


# ---------------------------------------------------------------- runners


def test_lr_run_shapes_and_ranges():
    rep = run_lr_experiment(_small())
    G = rep.grid.size
    for name in METRIC_COLUMNS:
        assert rep.metrics[name].shape == (G,)
    cov = rep.metrics["coverage"][1:]
    assert np.all((cov >= 0) & (cov <= 1))
    se = rep.metrics["coverage_se"]
    assert np.allclose(se, np.sqrt(rep.metrics["coverage"] * (1 - rep.metrics["coverage"]) / 60))
    assert rep.trajectories.shape == (3, G, 5)
    assert rep.series["excess_risk_of_average"].shape == (G,)


def test_sgd_run_has_no_zeros():
    rep = run_lr_experiment(_small(algorithm="sgd"))
    assert np.all(rep.metrics["true_zero_prop"][1:] == 0.0)


def test_rda_bias_check_small():
    base = dict(SMALL_LR, horizon=20.0, dt=1.0, reps=50, c0=0.0)
    rep = run_rda_bias_check(ExperimentConfig.from_dict(base))
    assert max(rep.summary["rda_measured_bias"]) <= 0.03
    rep = run_rda_bias_check(ExperimentConfig.from_dict({**base, "c0": 0.1}))
    assert rep.summary["rda_direction_ok"] is True
    assert rep.summary["rda_predicted_bias"] == [0.1, 0.1]


def test_opca_never_exactly_zero_and_aligned():
    cfg = ExperimentConfig.from_dict(dict(problem="pca", d=10, k=1, pca_active=5, algorithm="sgd", gamma=1e-2,
                                          horizon=3.0, dt=0.1, reps=25, band_paths=100, kernel_samples=300,
                                          seed=2, trajectory_reps=25))
    rep = run_pca_experiment(cfg)
    assert np.all(rep.metrics["true_zero_prop"] == 0.0)
    assert np.all(rep.metrics["false_zero_prop"] == 0.0)
    # every repetition is compared against the branch of the mean path
    final = rep.band.mean[-1]
    assert np.all(rep.trajectories[:, -1] @ final > 0)


def test_pca_rejects_rda():
    with pytest.raises(ConfigError):
        run_pca_experiment(ExperimentConfig.from_dict(dict(problem="pca", d=10, algorithm="rda", horizon=1.0)))


# ---------------------------------------------------------------- serialization


def test_empty_report_gives_header_only_csvs():
    rep = Report(config={}, grid=np.zeros(0), metrics={})
    tables = report_tables(rep)
    assert tables["band.csv"] == "t,coord,mean,lower,upper\n"
    assert tables["trajectories.csv"] == "rep,t,coord,w\n"
    assert tables["metrics.csv"] == "t," + ",".join(METRIC_COLUMNS) + "\n"


def test_report_round_trip(tmp_path):
    grid = np.array([0.0, 0.5])
    rng = np.random.default_rng(0)
    mean = rng.normal(size=(2, 3))
    band = Band(grid, mean, mean - 0.1, mean + np.pi)
    metrics = {name: rng.uniform(size=2) for name in METRIC_COLUMNS}
    metrics["avg_bias"][0] = np.nan
    rep = Report(config={"seed": 1}, grid=grid, metrics=metrics, band=band,
                 trajectories=rng.normal(size=(1, 2, 3)), trajectory_ids=np.array([7]),
                 summary={"terminal_coverage": float("nan")})
    paths = emit_report(rep, str(tmp_path / "out"))
    assert sorted(paths) == ["band.csv", "metrics.csv", "report.json", "trajectories.csv"]
    with open(paths["band.csv"], newline="") as fh:
        rows = list(csv.reader(fh))
    assert all(len(r) == 5 for r in rows)
    back = np.array([[float(x) for x in r[2:]] for r in rows[1:]])
    expect = np.column_stack([mean.ravel(), band.lower.ravel(), band.upper.ravel()])
    assert np.allclose(back, expect, rtol=1e-8, atol=0)
    with open(paths["metrics.csv"], newline="") as fh:
        mrows = list(csv.reader(fh))
    assert mrows[1][3] == "nan"
    assert float(mrows[2][1]) == pytest.approx(metrics["coverage"][1], rel=1e-8)
    with open(paths["trajectories.csv"], newline="") as fh:
        trows = list(csv.reader(fh))
    assert trows[1][0] == "7" and len(trows) == 1 + 2 * 3
    with open(paths["report.json"]) as fh:
        payload = json.load(fh)
    assert payload["summary"]["terminal_coverage"] is None
    assert "version" in payload
    with open(paths["band.csv"], "rb") as fh:
        assert b"\r" not in fh.read()


def test_determinism_across_worker_counts(tmp_path):
    outs = []
    for workers in (1, 2):
        cfg = dataclasses.replace(_small(), workers=workers)
        outs.append(report_tables(run_lr_experiment(cfg)))
    assert outs[0] == outs[1]


# ---------------------------------------------------------------- CLI


def _write_config(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL_LR, "out": str(tmp_path / "run"), **kw}))
    return str(path)


def test_cli_success(tmp_path, capsys):
    path = _write_config(tmp_path)
    assert main(["lr-run", "--config", path, "--reps", "25"]) == 0
    printed = capsys.readouterr().out.split()
    assert len(printed) == 4 and all(os.path.exists(p) for p in printed)
    with open(tmp_path / "run" / "report.json") as fh:
        assert json.load(fh)["config"]["reps"] == 25


def test_cli_band_only(tmp_path):
    path = _write_config(tmp_path)
    assert main(["band", "--config", path, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "band.csv").read_text().count("\n") > 1


def test_cli_config_errors(tmp_path):
    assert main(["lr-run", "--config", _write_config(tmp_path, bogus=1)]) == 2
    assert main(["lr-run", "--config", str(tmp_path / "nope.json")]) == 2
    assert main(["lr-run"]) == 2


def test_cli_numeric_failure(tmp_path):
    path = _write_config(tmp_path, algorithm="sgd", gamma=5.0, horizon=100.0, dt=10.0, reps=4)
    assert main(["lr-run", "--config", path]) == 3
