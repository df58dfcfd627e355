import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from src.attacks.generator import DEFAULT_KAPPA, generate_bipartite, inject_attacks, split_attacks
from src.attacks.recall import evaluate_recall
from src.config import DEFAULT_MAX_ITERATIONS, DEFAULT_MEMORY_BUDGET
from src.errors import ConfigurationError
from src.graph.store import preprocess
from src.model.detector import run
from src.model.params import DetectionParams, Mode

logger = logging.getLogger(__name__)

# users and products per edge of the largest synthetic dataset shape
USERS_PER_EDGE = 0.02
PRODUCTS_PER_EDGE = 0.08


def run_detection_batch(
    graph,
    params,
    n_runs=4,
    threads=1,
    max_iterations=DEFAULT_MAX_ITERATIONS,
    truth=None,
    verbose=False,
):
    """Repeat detection with consecutive rng seeds and collect per-run metrics.

    `params` is one DetectionParams or a list of them (e.g. one per mode);
    every entry runs in each repetition and recall, when `truth` is given,
    is computed over all of that repetition's reports.
    """
    param_list = list(params) if isinstance(params, (list, tuple)) else [params]
    results = []

    if verbose:
        print(f"\nRunning {n_runs} detection runs on {graph.num_edges} edges:")
        print("=" * 50)

    for i in range(n_runs):
        reports = [
            run(graph, replace(p, rng_seed=p.rng_seed + i), threads=threads, max_iterations=max_iterations)
            for p in param_list
        ]
        metrics = _run_metrics(reports)
        metrics["run"] = i
        if truth is not None:
            metrics["recall"] = evaluate_recall(reports, truth).recall
        results.append(metrics)

        if verbose:
            print(f"\nRun {i + 1}:")
            print("-" * 30)
            print(f"Wall clock: {metrics['wall_clock']:.3f}s")
            print(f"Iterations: {metrics['iterations']}")
            print(f"Locksteps reported: {metrics['locksteps']}")
            print(f"Max seeks per iteration: {metrics['seeks']}")
            print(f"Max block reads per iteration: {metrics['block_reads']}")
            if "recall" in metrics:
                print(f"Recall: {metrics['recall']:.2%}")

    return results


def analyze_results(results):
    """Means and standard deviations of every numeric per-run metric."""
    analysis = {"number_of_runs": len(results)}
    if not results:
        return analysis
    for key, value in results[0].items():
        if key == "run" or isinstance(value, bool) or not isinstance(value, (int, float)):
            continue
        values = [r[key] for r in results]
        analysis[f"average_{key}"] = float(np.mean(values))
        analysis[f"std_{key}"] = float(np.std(values))
    analysis["all_converged"] = all(r["converged"] for r in results)
    return analysis


def fit_linear(x, y):
    """Least-squares line through (x, y) with its coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.all(x == x[0]):
        raise ConfigurationError("a linear fit needs at least two distinct x values")
    fit = stats.linregress(x, y)
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "r_squared": float(fit.rvalue**2)}


def edge_sweep(
    edge_counts,
    work_dir,
    n_seeds=100,
    params=None,
    rng_seed=0,
    memory_budget=DEFAULT_MEMORY_BUDGET,
    threads=1,
    verbose=False,
):
    """Detection wall clock and I/O on generated graphs of growing size."""
    params = params or _sweep_params(n_seeds, rng_seed)
    params = replace(params, n_seeds=n_seeds)
    rows = []
    for edges in edge_counts:
        graph = _generated_graph(edges, Path(work_dir) / f"edges_{edges}", rng_seed, memory_budget)
        report = run(graph, params, threads=threads)
        row = {"edges": edges, **_run_metrics([report])}
        rows.append(row)
        if verbose:
            print(f"{edges} edges: {row['wall_clock']:.3f}s, {row['iterations']} iterations")
    return pd.DataFrame(rows)


def seed_sweep(graph, seed_counts, params=None, rng_seed=0, threads=1, verbose=False):
    """Detection wall clock and I/O on one graph for growing seed counts."""
    params = params or _sweep_params(seed_counts[0], rng_seed)
    rows = []
    for seeds in seed_counts:
        report = run(graph, replace(params, n_seeds=seeds), threads=threads)
        row = {"seeds": seeds, **_run_metrics([report])}
        rows.append(row)
        if verbose:
            print(f"{seeds} seeds: {row['wall_clock']:.3f}s, {row['iterations']} iterations")
    return pd.DataFrame(rows)


def attack_size_sweep(
    host,
    sizes,
    params,
    work_dir,
    n_attacks=20,
    delta_t=None,
    n_runs=4,
    rng_seed=0,
    memory_budget=DEFAULT_MEMORY_BUDGET,
    verbose=False,
):
    """Recall at fixed detection parameters as injected attacks grow.

    `host` is an EdgeBuffer; `sizes` lists (users, products) attack shapes.
    Attacks are split evenly between the two modes.
    """
    delta_t = delta_t or params.delta_t
    rows = []
    for users, products in sizes:
        specs = split_attacks(n_attacks, users, products, delta_t, list(Mode))
        buffer, truth = inject_attacks(host, specs, rng_seed)
        graph = preprocess(buffer, Path(work_dir) / f"attack_{users}x{products}", memory_budget)
        results = run_detection_batch(graph, _per_mode(params), n_runs=n_runs, truth=truth, verbose=verbose)
        recalls = [r["recall"] for r in results]
        rows.append(
            {
                "attack_users": users,
                "attack_products": products,
                "recall_mean": float(np.mean(recalls)),
                "recall_std": float(np.std(recalls)),
                "runs": n_runs,
            }
        )
    return pd.DataFrame(rows)


def seed_recall_sweep(
    host,
    seed_counts,
    params,
    work_dir,
    attack_size=(500, 250),
    n_attacks=20,
    n_runs=4,
    rng_seed=0,
    memory_budget=DEFAULT_MEMORY_BUDGET,
    verbose=False,
):
    """Recall over mixed-mode attacks as the number of seeds grows."""
    users, products = attack_size
    specs = split_attacks(n_attacks, users, products, params.delta_t, list(Mode))
    buffer, truth = inject_attacks(host, specs, rng_seed)
    graph = preprocess(buffer, Path(work_dir) / "seed_recall", memory_budget)
    rows = []
    for seeds in seed_counts:
        results = run_detection_batch(
            graph, _per_mode(replace(params, n_seeds=seeds)), n_runs=n_runs, truth=truth, verbose=verbose
        )
        recalls = [r["recall"] for r in results]
        rows.append(
            {
                "seeds": seeds,
                "recall_mean": float(np.mean(recalls)),
                "recall_std": float(np.std(recalls)),
                "wall_clock_mean": float(np.mean([r["wall_clock"] for r in results])),
                "runs": n_runs,
            }
        )
    return pd.DataFrame(rows)


def _run_metrics(reports):
    per_iteration = [c for r in reports for c in r.meta["io"]["per_iteration"]]
    bounds = reports[0].meta["io"]["bounds"]
    return {
        "wall_clock": sum(r.wall_clock for r in reports),
        "iterations": max(r.meta["iterations"] for r in reports),
        "locksteps": sum(len(r.locksteps) for r in reports),
        "seeks": max((c["seeks"] for c in per_iteration), default=0),
        "block_reads": max((c["block_reads"] for c in per_iteration), default=0),
        "seek_bound": bounds["seeks"],
        "block_read_bound": bounds["block_reads"],
        "num_shards": reports[0].meta["num_shards"],
        "converged": all(r.meta["converged"] for r in reports),
    }


def _sweep_params(n_seeds, rng_seed):
    return DetectionParams(
        n=10, m=5, rho=0.8, delta_t=86_400, kappa=DEFAULT_KAPPA[Mode.PROMOTION],
        mode=Mode.PROMOTION, n_seeds=n_seeds, rng_seed=rng_seed,
    )


def _per_mode(params):
    # one run per mode, each at its mode's default kappa
    return [replace(params, mode=mode, kappa=DEFAULT_KAPPA[mode]) for mode in Mode]


def _generated_graph(edges, out_dir, rng_seed, memory_budget):
    buffer = generate_bipartite(
        max(1, round(edges * USERS_PER_EDGE)),
        max(1, round(edges * PRODUCTS_PER_EDGE)),
        edges,
        rng_seed=rng_seed,
        replace=True,
    )
    logger.info("preprocessing %d-edge sweep graph into %s", edges, out_dir)
    return preprocess(buffer, out_dir, memory_budget)
