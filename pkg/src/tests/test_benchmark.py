import pytest

from src.attacks.generator import generate_bipartite, inject_attacks, split_attacks
from src.benchmark_runner import (
    analyze_results,
    attack_size_sweep,
    edge_sweep,
    fit_linear,
    run_detection_batch,
    seed_sweep,
)
from src.errors import ConfigurationError
from src.graph.store import preprocess
from src.model.params import DetectionParams, Mode
from src.tests.conftest import lockstep_rows


def test_fit_linear_perfect_line():
    fit = fit_linear([1, 2, 3, 4], [3, 5, 7, 9])
    assert fit["slope"] == pytest.approx(2.0)
    assert fit["intercept"] == pytest.approx(1.0)
    assert fit["r_squared"] == pytest.approx(1.0)


def test_fit_linear_needs_two_points():
    with pytest.raises(ConfigurationError):
        fit_linear([5], [1])
    with pytest.raises(ConfigurationError):
        fit_linear([5, 5], [1, 2])


def test_analyze_results():
    results = [
        {"run": 0, "wall_clock": 1.0, "iterations": 2, "converged": True},
        {"run": 1, "wall_clock": 3.0, "iterations": 4, "converged": False},
    ]
    analysis = analyze_results(results)
    assert analysis["number_of_runs"] == 2
    assert analysis["average_wall_clock"] == 2.0
    assert analysis["std_wall_clock"] == 1.0
    assert analysis["average_iterations"] == 3.0
    assert "average_converged" not in analysis
    assert not analysis["all_converged"]
    assert analyze_results([]) == {"number_of_runs": 0}


def test_detection_batch_with_recall(tmp_path):
    host = generate_bipartite(60, 60, 600, timestamp_range=(0, 10**7), rng_seed=6)
    buffer, truth = inject_attacks(host, split_attacks(2, 12, 6, 40, list(Mode)), rng_seed=6)
    graph = preprocess(buffer, tmp_path / "g")
    params = [
        DetectionParams(n=8, m=4, rho=0.8, delta_t=100, kappa=kappa, mode=mode, n_seeds=300)
        for mode, kappa in ((Mode.DEFAMATION, 2), (Mode.PROMOTION, 4))
    ]
    results = run_detection_batch(graph, params, n_runs=2, truth=truth)
    assert [r["run"] for r in results] == [0, 1]
    assert results[0]["recall"] == 1.0
    assert all(0.0 <= r["recall"] <= 1.0 for r in results)
    assert all(r["converged"] for r in results)
    assert 0.5 <= analyze_results(results)["average_recall"] <= 1.0


def test_detection_batch_prints_progress(build_graph, promotion_params, capsys):
    _, graph = build_graph(lockstep_rows(10, 5))
    results = run_detection_batch(graph, promotion_params, n_runs=2, verbose=True)
    assert len(results) == 2
    assert all(r["locksteps"] == 1 for r in results)
    out = capsys.readouterr().out
    assert "Run 2:" in out
    assert "Locksteps reported: 1" in out


def test_edge_sweep_rows(tmp_path):
    frame = edge_sweep([100, 200, 400], tmp_path, n_seeds=20)
    assert list(frame["edges"]) == [100, 200, 400]
    assert frame["converged"].all()
    assert (frame["seeks"] <= frame["seek_bound"]).all()


def test_seed_sweep_rows(build_graph, promotion_params):
    _, graph = build_graph(lockstep_rows(10, 5))
    frame = seed_sweep(graph, [1, 4, 8], params=promotion_params)
    assert list(frame["seeds"]) == [1, 4, 8]
    assert list(frame["locksteps"]) == [1, 1, 1]


def test_attack_size_sweep_rows(tmp_path):
    host = generate_bipartite(60, 60, 600, timestamp_range=(0, 10**7), rng_seed=2)
    params = DetectionParams(n=4, m=2, rho=0.8, delta_t=100, kappa=4, mode=Mode.PROMOTION, n_seeds=200)
    frame = attack_size_sweep(host, [(6, 3), (12, 6)], params, tmp_path, n_attacks=2, delta_t=40, n_runs=1)
    assert list(frame["attack_users"]) == [6, 12]
    assert frame["recall_mean"].between(0.0, 1.0).all()
    assert list(frame["runs"]) == [1, 1]
