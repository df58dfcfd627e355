import json
import logging

import pandas as pd
import pytest

from src.cli import EXIT_CONFIG, EXIT_FORMAT, EXIT_IO, EXIT_NON_CONVERGED, EXIT_OK, main
from src.graph.store import BipartiteGraph
from src.tests.conftest import edge_text, lockstep_rows

DETECT_FLAGS = ["--n", "10", "--m", "5", "--rho", "0.8", "--dt", "100", "--kappa", "4",
                "--mode", "promotion", "--seeds", "1", "--rng-seed", "7", "--threads", "1"]


@pytest.fixture
def lockstep_graph(tmp_path):
    source = tmp_path / "lockstep.csv"
    source.write_text(edge_text(lockstep_rows(10, 5)), encoding="utf-8")
    out = tmp_path / "graph"
    assert main(["preprocess", str(source), str(out), "--quiet"]) == EXIT_OK
    return out


def quiet_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_preprocess_then_up_to_date(tmp_path, tiny_csv, capsys):
    out = tmp_path / "graph"
    assert main(["preprocess", str(tiny_csv), str(out), "--quiet"]) == EXIT_OK
    summary = quiet_json(capsys)
    assert summary["stats"]["num_users"] == 2
    assert summary["stats"]["num_products"] == 2
    assert summary["stats"]["num_edges"] == 3
    assert not summary["up_to_date"]

    assert main(["preprocess", str(tiny_csv), str(out), "--quiet"]) == EXIT_OK
    assert quiet_json(capsys)["up_to_date"]

    assert main(["preprocess", str(tiny_csv), str(out)]) == EXIT_OK
    assert "up to date" in capsys.readouterr().out


def test_preprocess_rebuilds_when_parameters_change(tmp_path, capsys):
    source = tmp_path / "edges.csv"
    source.write_text(edge_text(lockstep_rows(20, 10)), encoding="utf-8")
    out = tmp_path / "graph"
    large = ["preprocess", str(source), str(out), "--block-size", "256", "--quiet"]

    assert main([*large, "--memory-budget", "1000000"]) == EXIT_OK
    assert not quiet_json(capsys)["up_to_date"]
    assert BipartiteGraph.open(out).num_shards == 1

    assert main([*large, "--memory-budget", "1024"]) == EXIT_OK
    assert not quiet_json(capsys)["up_to_date"]
    graph = BipartiteGraph.open(out)
    assert graph.num_shards > 1
    assert graph.memory_budget == 1024

    assert main([*large, "--memory-budget", "1024"]) == EXIT_OK
    assert quiet_json(capsys)["up_to_date"]

    assert main([*large, "--memory-budget", "1024", "--header"]) == EXIT_OK
    assert not quiet_json(capsys)["up_to_date"]
    assert BipartiteGraph.open(out).ingest_params["header"] is True


def test_preprocess_rejects_malformed_input(tmp_path):
    source = tmp_path / "bad.csv"
    source.write_text("u1,p1,100,5\nu2,p1,x,5\nu3,p2,1,999\n", encoding="utf-8")
    assert main(["preprocess", str(source), str(tmp_path / "g")]) == EXIT_FORMAT


def test_preprocess_missing_input(tmp_path):
    assert main(["preprocess", str(tmp_path / "none.csv"), str(tmp_path / "g")]) == EXIT_IO


def test_detect_is_byte_identical(tmp_path, lockstep_graph):
    out = tmp_path / "report.json"
    runs = []
    for _ in range(3):
        assert main(["detect", str(lockstep_graph), "--out", str(out), "--quiet", *DETECT_FLAGS]) == EXIT_OK
        runs.append(out.read_bytes())
    assert runs[0] == runs[1] == runs[2]
    report = json.loads(runs[0])
    assert len(report["locksteps"]) == 1
    assert report["meta"]["config"]["command"] == "detect"
    assert report["meta"]["config"]["seeds"] == 1
    assert (tmp_path / "report.timing.json").exists()


def test_detect_warns_on_low_rho(tmp_path, lockstep_graph, caplog):
    flags = list(DETECT_FLAGS)
    flags[flags.index("--rho") + 1] = "0.5"
    with caplog.at_level(logging.WARNING):
        code = main(["detect", str(lockstep_graph), "--out", str(tmp_path / "r.json"), *flags])
    assert code == EXIT_OK
    assert "below recommended" in caplog.text


def test_detect_iteration_cap_exit_code(tmp_path, lockstep_graph):
    out = tmp_path / "r.json"
    code = main(["detect", str(lockstep_graph), "--out", str(out), "--max-iters", "1", *DETECT_FLAGS])
    assert code == EXIT_NON_CONVERGED
    assert json.loads(out.read_text())["meta"]["non_converged"]


def test_detect_missing_graph(tmp_path):
    assert main(["detect", str(tmp_path / "nowhere"), *DETECT_FLAGS]) == EXIT_IO


def test_detect_invalid_parameters(tmp_path, lockstep_graph):
    flags = list(DETECT_FLAGS)
    flags[flags.index("--rho") + 1] = "0"
    assert main(["detect", str(lockstep_graph), "--out", str(tmp_path / "r.json"), *flags]) == EXIT_CONFIG


def test_config_file_with_flag_override(tmp_path, lockstep_graph):
    config = tmp_path / "orfel.ini"
    config.write_text(
        "[detect]\nn = 10\nm = 4\nrho = 0.8\ndt = 100\nkappa = 4\nmode = promotion\nseeds = 1\nrng_seed = 7\n",
        encoding="utf-8",
    )
    out = tmp_path / "r.json"
    code = main(["detect", str(lockstep_graph), "--config", str(config), "--m", "5", "--out", str(out)])
    assert code == EXIT_OK
    meta = json.loads(out.read_text())["meta"]
    assert meta["params"]["m"] == 5
    assert meta["params"]["delta_t"] == 100
    assert meta["config"]["rng_seed"] == 7


def test_gen_inject_eval(tmp_path, capsys):
    host = tmp_path / "host.csv"
    attacked = tmp_path / "attacked.csv"
    truth = tmp_path / "truth.json"
    assert main(["gen", "--users", "60", "--products", "60", "--edges", "600",
                 "--t-max", "10000000", "--out", str(host), "--quiet"]) == EXIT_OK
    assert len(host.read_text().splitlines()) == 600
    assert main(["inject", "--input", str(host), "--out", str(attacked), "--truth", str(truth),
                 "--attacks", "2", "--attack-users", "12", "--attack-products", "6", "--dt", "40",
                 "--quiet"]) == EXIT_OK
    assert len(attacked.read_text().splitlines()) == 600 + 2 * 72
    assert main(["preprocess", str(attacked), str(tmp_path / "g"), "--quiet"]) == EXIT_OK

    reports = []
    for mode in ("defamation", "promotion"):
        report = tmp_path / f"{mode}.json"
        assert main(["detect", str(tmp_path / "g"), "--out", str(report), "--mode", mode,
                     "--n", "8", "--m", "4", "--dt", "100", "--seeds", "300", "--quiet"]) == EXIT_OK
        reports += ["--report", str(report)]
    capsys.readouterr()

    assert main(["eval", *reports, "--truth", str(truth), "--quiet"]) == EXIT_OK
    summary = quiet_json(capsys)
    assert summary["total"] == 2
    assert 0.0 <= summary["recall"] <= 1.0


def test_eval_empty_report(tmp_path, capsys):
    host = tmp_path / "host.csv"
    truth = tmp_path / "truth.json"
    main(["gen", "--users", "20", "--products", "20", "--edges", "100", "--out", str(host), "--quiet"])
    main(["inject", "--input", str(host), "--out", str(tmp_path / "a.csv"), "--truth", str(truth),
          "--attacks", "2", "--attack-users", "3", "--attack-products", "2", "--quiet"])
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"meta": {"params": {"m": 5}}, "locksteps": []}))
    capsys.readouterr()
    assert main(["eval", "--report", str(empty), "--truth", str(truth), "--quiet"]) == EXIT_OK
    assert quiet_json(capsys)["recall"] == 0.0


def test_bench_edges_suite(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    code = main(["bench", "--suite", "edges", "--edges", "200,400", "--out", str(out),
                 "--work-dir", str(tmp_path / "work"), "--quiet"])
    assert code == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame["edges"]) == [200, 400]
    assert {"wall_clock", "seeks", "block_reads"} <= set(frame.columns)
    summary = json.loads(out.with_suffix(".json").read_text())
    assert {"slope", "intercept", "r_squared"} <= set(summary["fit"])
