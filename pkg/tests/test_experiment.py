import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from glmd.errors import ConfigError
from glmd.experiment import (
    DEFAULT_CONFIG_PATH,
    ExperimentConfig,
    cell_seed,
    consistency_curve,
    load_config,
    run_experiment,
    run_trial,
)
from glmd.report import read_trials
from glmd.solver import FitOptions

ALL_METHODS = ("average", "aee", "one_step", "csl_one_step", "global")


def _write_config(tmp_path, **values):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(values), encoding="utf-8")
    return str(path)


def test_packaged_config_loads():
    config = load_config()
    assert config.models == ("probit", "logistic", "poisson")
    assert config.rho == 0.75
    assert set(config.methods) == set(ALL_METHODS)
    assert config.n // max(config.p_list) >= max(config.k_list)
    with open(DEFAULT_CONFIG_PATH, encoding="utf-8") as fh:
        assert json.load(fh)["n"] == config.n


def test_overrides_and_fit_section(tmp_path):
    path = _write_config(
        tmp_path, model="poisson", n=1000, p_list=[2], k_list=[2, 4], trials=3,
        fit={"max_iterations": 20}, comment="ignored",
    )
    config = load_config(path, {"trials": 5, "seed": None, "score_tolerance": 1e-6, "k_list": [5]})
    assert config.models == ("poisson",)
    assert config.trials == 5
    assert config.k_list == (5,)
    assert config.base_seed == 0
    assert config.fit == FitOptions(max_iterations=20, score_tolerance=1e-6)
    assert config.to_dict()["seed"] == 0


@pytest.mark.parametrize(
    "values, message",
    [
        ({"models": ["gamma"], "n": 100, "p_list": [2], "k_list": [2], "trials": 1}, "gamma"),
        ({"models": ["probit"], "n": 100, "p_list": [2], "k_list": [2], "trials": 1, "methods": ["median"]}, "median"),
        ({"models": ["probit"], "n": 100, "p_list": [10], "k_list": [20], "trials": 1}, "K="),
        ({"models": ["probit"], "n": 100, "p_list": [2], "k_list": [2], "trials": 0}, "trials"),
        ({"models": ["probit"], "n": 100, "p_list": [2], "k_list": [2], "trials": 1, "rho": 1.5}, "rho"),
        ({"models": ["probit"], "p_list": [2], "k_list": [2], "trials": 1}, "'n'"),
    ],
)
def test_invalid_configs(tmp_path, values, message):
    with pytest.raises(ConfigError, match=message):
        load_config(_write_config(tmp_path, **values))


def test_unreadable_configs(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(broken))


def test_config_rejects_empty_lists():
    with pytest.raises(ConfigError):
        ExperimentConfig(models=("probit",), n=10, p_list=(), k_list=(1,), trials=1)


def test_cell_seed_depends_on_every_coordinate():
    seeds = {cell_seed(7, m, p, k) for m in ("probit", "logistic") for p in (2, 4) for k in (1, 8)}
    assert len(seeds) == 8
    assert cell_seed(7, "probit", 2, 8) == cell_seed(7, "probit", 2, 8)


def test_run_trial_runs_every_method_on_the_same_data():
    records = run_trial("logistic", 600, 3, 3, 0.75, 12345, 0, ALL_METHODS, FitOptions())
    assert [r.method for r in records] == list(ALL_METHODS)
    for r in records:
        assert not r.failed
        assert r.estimate.shape == (3,) and r.variance.shape == (3,)
        assert np.all(r.variance > 0)
    again = run_trial("logistic", 600, 3, 3, 0.75, 12345, 0, ALL_METHODS, FitOptions())
    for a, b in zip(records, again):
        assert_array_equal(a.estimate, b.estimate)


def test_run_trial_records_failures():
    # A single-row shard cannot support a p=3 fit.
    records = run_trial("probit", 4, 3, 4, 0.0, 1, 0, ("aee",), FitOptions())
    assert len(records) == 1
    assert records[0].failed and records[0].estimate is None


def _sweep_config(tmp_path, jobs=1, name="out"):
    return ExperimentConfig(
        models=("probit",), n=400, p_list=(2,), k_list=(2, 4), trials=3, rho=0.5, base_seed=99,
        methods=("one_step", "global"), output_dir=str(tmp_path / name), jobs=jobs,
    )


def test_run_experiment_writes_all_files(tmp_path):
    written = run_experiment(_sweep_config(tmp_path))
    paths = written["probit"]
    records = read_trials(paths["trials"])
    assert len(records) == 2 * 3 * 2
    assert [(r.K, r.method, r.trial) for r in records][:4] == [
        (2, "one_step", 0), (2, "one_step", 1), (2, "one_step", 2), (2, "global", 0)
    ]
    with open(paths["summary"], newline="", encoding="utf-8") as fh:
        summary = list(csv.DictReader(fh))
    assert [(row["K"], row["method"]) for row in summary] == [
        ("2", "one_step"), ("2", "global"), ("4", "one_step"), ("4", "global")
    ]
    for row in summary:
        if row["method"] == "global":
            assert float(row["re_median"]) == 1.0


def test_parallel_sweep_matches_serial(tmp_path):
    serial = run_experiment(_sweep_config(tmp_path, jobs=1, name="serial"))["probit"]
    parallel = run_experiment(_sweep_config(tmp_path, jobs=2, name="parallel"))["probit"]
    with open(serial["trials"], encoding="utf-8") as a, open(parallel["trials"], encoding="utf-8") as b:
        assert a.read() == b.read()


def test_consistency_curve_error_shrinks_with_n():
    points = consistency_curve("logistic", [400, 6400], k=4, p=2, trials=8, seed=5)
    assert [pt.n for pt in points] == [400, 6400]
    assert points[1].mean_error < points[0].mean_error
    assert points[1].scaled_error == pytest.approx(points[1].mean_error * np.sqrt(6400 / 2))


def test_agent_helper_runs_a_sweep(tmp_path):
    from glmd.agent_api import run_simulation

    path = _write_config(tmp_path, models=["poisson"], n=300, p_list=[2], k_list=[3], trials=2,
                         methods=["average", "global"])
    written = run_simulation(path, output_dir=str(tmp_path / "agent"), seed=4)
    assert len(read_trials(written["poisson"]["trials"])) == 4
