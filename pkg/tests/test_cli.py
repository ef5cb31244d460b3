import csv
import json
import os
import socket
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from glmd.casestudy import gen_additive_records, write_records
from glmd.datagen import SimDesign, gen_trial_shards
from glmd.distributed import Method, run_distributed
from glmd.experiment import cell_seed
from glmd.glm_core import PROBIT
from glmd.logger import configure_logging, log_file_name
from glmd.main import EXIT_FAILURE, EXIT_OK, EXIT_TRANSPORT, EXIT_USAGE, main


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "simulate" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["serve", "--k", "0"],
        ["fit", "--model", "gamma", "--k", "2"],
        ["fit", "--k", "2", "--seed", "-1"],
        ["work", "--k", "2", "--worker-id", "2"],
        ["work", "--k", "2", "--worker-id", "-1"],
        ["fit", "--k", "2", "--jobs", "2"],
        ["fit", "--k", "2", "--config", "sweep.json"],
        ["serve", "--k", "2", "--seed", "3"],
        ["report", "--trials-file", "trials.csv", "--jobs", "2"],
        ["casestudy"],
    ],
)
def test_usage_errors_exit_2(argv):
    assert main(argv) == EXIT_USAGE


def test_fit_prints_the_estimate(capsys, tmp_path):
    out_file = tmp_path / "fit.json"
    argv = ["fit", "--model", "logistic", "--n", "400", "--p", "2", "--k", "2", "--method", "one_step",
            "--output", str(out_file)]
    assert main(argv) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["method"] == "one_step"
    assert payload["K"] == 2
    assert len(payload["estimate"]) == 2
    assert payload["rounds_of_communication"] == 2
    assert json.loads(out_file.read_text(encoding="utf-8")) == payload

    # Same seed and trial reproduce the estimate.
    assert main(argv[:-2]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["estimate"] == payload["estimate"]


def test_fit_reads_a_dataset_file(capsys, tmp_path):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((300, 2))
    y = rng.poisson(np.exp(z @ np.array([0.3, -0.2])))
    path = tmp_path / "data.csv"
    np.savetxt(path, np.column_stack([y, z]), delimiter=",")
    assert main(["fit", "--model", "poisson", "--input", str(path), "--k", "3", "--method", "global"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["rounds_of_communication"] == 0
    assert main(["fit", "--input", str(tmp_path / "missing.csv"), "--k", "3"]) == EXIT_USAGE


def _free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_serve_and_work_over_loopback_match_in_process(tmp_path):
    endpoint = f"127.0.0.1:{_free_port()}"
    out_file = tmp_path / "served.json"
    data = ["--n", "2048", "--p", "4", "--k", "2"]
    timeouts = ["--handshake-timeout", "20", "--round-timeout", "20"]
    with ThreadPoolExecutor(max_workers=3) as pool:
        served = pool.submit(main, ["serve", "--k", "2", "--method", "one_step", "--endpoint", endpoint,
                                    "--output", str(out_file), *timeouts])
        workers = [
            pool.submit(main, ["work", "--worker-id", str(w), "--endpoint", endpoint, *data, *timeouts])
            for w in range(2)
        ]
        assert served.result(timeout=60) == EXIT_OK
        assert [w.result(timeout=60) for w in workers] == [EXIT_OK, EXIT_OK]

    shards = gen_trial_shards(SimDesign("probit", 2048, 4, 0.75, cell_seed(0, "probit", 4, 2), 2), 0)
    expected = run_distributed(Method.ONE_STEP, PROBIT, shards)
    payload = json.loads(out_file.read_text(encoding="utf-8"))
    assert payload["estimate"] == [float(v) for v in expected.estimate]
    assert payload["wire_bytes"] == expected.wire_bytes


def test_work_without_a_coordinator_exits_4():
    argv = ["work", "--k", "2", "--worker-id", "0", "--n", "100", "--p", "2",
            "--endpoint", "127.0.0.1:1", "--handshake-timeout", "0.5"]
    assert main(argv) == EXIT_TRANSPORT


def test_simulate_then_report(tmp_path):
    out = tmp_path / "results"
    argv = ["simulate", "--model", "probit", "--n", "400", "--p", "2", "--k", "2", "--trials", "2",
            "--method", "one_step", "--method", "global", "--output", str(out), "--seed", "7"]
    assert main(argv) == EXIT_OK
    names = sorted(os.listdir(out))
    assert names == ["metrics_probit.csv", "summary_probit.csv", "trials_probit.csv"]

    with open(out / "metrics_probit.csv", encoding="utf-8") as fh:
        before = fh.read()
    os.remove(out / "metrics_probit.csv")
    assert main(["report", "--trials-file", str(out / "trials_probit.csv")]) == EXIT_OK
    with open(out / "metrics_probit.csv", encoding="utf-8") as fh:
        assert fh.read() == before


def test_simulate_rejects_an_infeasible_sweep(tmp_path):
    argv = ["simulate", "--model", "probit", "--n", "10", "--p", "4", "--k", "8", "--trials", "1",
            "--output", str(tmp_path)]
    assert main(argv) == EXIT_USAGE


def test_casestudy_on_synthetic_records(tmp_path):
    argv = ["casestudy", "--synthetic", "2000", "--k", "2", "--output", str(tmp_path)]
    assert main(argv) == EXIT_OK
    with open(tmp_path / "casestudy.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["global", "one_step"]


def test_casestudy_bad_input_is_a_general_failure(tmp_path):
    labels, features, _ = gen_additive_records(20, seed=1)
    path = write_records(str(tmp_path / "records.csv"), labels, features)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("1.0,2.0\n")
    assert main(["casestudy", "--input", path, "--k", "2", "--output", str(tmp_path)]) == EXIT_FAILURE


def test_missing_casestudy_input_is_a_plain_failure(tmp_path):
    argv = ["casestudy", "--input", str(tmp_path / "absent.csv"), "--k", "2", "--output", str(tmp_path)]
    assert main(argv) == EXIT_FAILURE


def test_each_command_logs_to_its_own_file(tmp_path, monkeypatch):
    logs = tmp_path / "logs"
    monkeypatch.setenv("GLMD_LOG_DIR", str(logs))
    try:
        assert main(["fit", "--input", str(tmp_path / "missing.csv"), "--k", "3"]) == EXIT_USAGE
        assert "cannot read dataset" in (logs / "glmd-fit.log").read_text(encoding="utf-8")
        argv = ["work", "--k", "2", "--worker-id", "1", "--n", "100", "--p", "2",
                "--endpoint", "127.0.0.1:1", "--handshake-timeout", "0.2"]
        assert main(argv) == EXIT_TRANSPORT
        assert "Worker 1" in (logs / "glmd-work-1.log").read_text(encoding="utf-8")
    finally:
        monkeypatch.undo()
        configure_logging()


def test_log_file_names():
    assert log_file_name() == "glmd.log"
    assert log_file_name("serve") == "glmd-serve.log"
    assert log_file_name("work 3/x") == "glmd-work-3-x.log"
