"""Command-line entry point: gen, inject, preprocess, detect, eval and bench.

Exit codes: 0 success, 1 unexpected error, 2 I/O error, 3 malformed input
or shard, 4 detection stopped at the iteration cap (report still written),
5 invalid configuration.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from src.attacks.generator import (
    DEFAULT_KAPPA,
    AttackGroundTruth,
    generate_bipartite,
    inject_attacks,
    split_attacks,
)
from src.attacks.recall import DEFAULT_COVERAGE, evaluate_recall
from src.benchmark_runner import (
    PRODUCTS_PER_EDGE,
    USERS_PER_EDGE,
    attack_size_sweep,
    edge_sweep,
    fit_linear,
    seed_recall_sweep,
    seed_sweep,
)
from src.config import (
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_MEMORY_BUDGET,
    RECOMMENDED_MIN_RHO,
    RunConfig,
    block_size_from_env,
    configure_logging,
    load_config_file,
)
from src.errors import ConfigurationError, FormatError, IngestError, OrfelError
from src.graph.ingest import EdgeSchema, ingest, write_edges
from src.graph.store import MANIFEST_NAME, BipartiteGraph, file_hash, preprocess
from src.model.detector import DetectionReport, run, suggest_seeds
from src.model.params import DetectionParams, Mode

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_IO = 2
EXIT_FORMAT = 3
EXIT_NON_CONVERGED = 4
EXIT_CONFIG = 5

DEFAULT_DELTA_T = 86_400

DEFAULTS = {
    "preprocess": {
        "input": None,
        "out": None,
        "columns": "0,1,2,3",
        "separator": ",",
        "header": False,
        "memory_budget": DEFAULT_MEMORY_BUDGET,
        "block_size": None,
        "force": False,
    },
    "detect": {
        "graph": None,
        "out": "report.json",
        "n": 10,
        "m": 5,
        "rho": RECOMMENDED_MIN_RHO,
        "dt": DEFAULT_DELTA_T,
        "kappa": None,
        "mode": Mode.PROMOTION.value,
        "seeds": None,
        "rng_seed": 0,
        "threads": 1,
        "max_iters": DEFAULT_MAX_ITERATIONS,
        "users_per_seed": 3,
    },
    "gen": {
        "out": None,
        "users": 2000,
        "products": 8000,
        "edges": 100_000,
        "t_min": 0,
        "t_max": 1_000_000_000,
        "rng_seed": 0,
        "replace": False,
    },
    "inject": {
        "input": None,
        "out": None,
        "truth": None,
        "separator": ",",
        "attacks": 20,
        "attack_users": 50,
        "attack_products": 25,
        "dt": DEFAULT_DELTA_T,
        "mode": None,
        "kappa_defamation": DEFAULT_KAPPA[Mode.DEFAMATION],
        "kappa_promotion": DEFAULT_KAPPA[Mode.PROMOTION],
        "rng_seed": 0,
    },
    "eval": {
        "report": None,
        "truth": None,
        "coverage": DEFAULT_COVERAGE,
        "out": None,
    },
    "bench": {
        "suite": "edges",
        "out": "bench.csv",
        "work_dir": "bench_work",
        "edges": "1000000,2000000,4000000,8000000",
        "seeds": "100,200,500,1000,2000,5000",
        "graph": None,
        "n": 10,
        "m": 5,
        "rho": RECOMMENDED_MIN_RHO,
        "dt": DEFAULT_DELTA_T,
        "runs": 4,
        "attacks": 20,
        "attack_sizes": "50x25,100x50,250x125,500x250",
        "attack_size": "500x250",
        "host_edges": 1_000_000,
        "rng_seed": 0,
        "memory_budget": DEFAULT_MEMORY_BUDGET,
        "threads": 1,
    },
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with one section per command")
    common.add_argument("-v", "--verbose", action="count", default=0, help="debug logging")
    common.add_argument("--quiet", action="store_true", help="warnings only; stdout is JSON")

    parser = argparse.ArgumentParser(
        prog="orfel", description="Out-of-core lockstep detection on recommendation graphs"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("preprocess", parents=[common], help="ingest an edge list into shards")
    p.add_argument("input", nargs="?", help="edge-list text file")
    p.add_argument("out", nargs="?", help="output graph directory")
    p.add_argument("--columns", help="user,product,timestamp,rating column indices")
    p.add_argument("--separator")
    p.add_argument("--header", action="store_true", default=None, help="skip the first line")
    p.add_argument("--memory-budget", type=int, help="bytes per shard, header included")
    p.add_argument("--block-size", type=int, help="bytes per block read")
    p.add_argument("--force", action="store_true", default=None, help="rebuild even if up to date")
    p.set_defaults(handler=cmd_preprocess)

    p = commands.add_parser("detect", parents=[common], help="run lockstep detection")
    p.add_argument("graph", nargs="?", help="preprocessed graph directory")
    p.add_argument("--out", help="report path")
    p.add_argument("--n", type=int, help="minimum users per lockstep")
    p.add_argument("--m", type=int, help="products per lockstep")
    p.add_argument("--rho", type=float, help="tolerance fraction")
    p.add_argument("--dt", type=int, help="time window half-width in seconds")
    p.add_argument("--kappa", type=int, help="weight threshold (default 2 or 4 by mode)")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--seeds", type=int, help="seed count (default 1000 * log10(edges))")
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--users-per-seed", type=int)
    p.set_defaults(handler=cmd_detect)

    p = commands.add_parser("gen", parents=[common], help="generate a random bipartite graph")
    p.add_argument("--out", help="edge-list path")
    p.add_argument("--users", type=int)
    p.add_argument("--products", type=int)
    p.add_argument("--edges", type=int)
    p.add_argument("--t-min", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--replace", action="store_true", default=None, help="allow repeated pairs")
    p.set_defaults(handler=cmd_gen)

    p = commands.add_parser("inject", parents=[common], help="inject lockstep attacks")
    p.add_argument("--input", help="host edge-list path")
    p.add_argument("--out", help="output edge-list path")
    p.add_argument("--truth", help="ground-truth JSON path")
    p.add_argument("--separator")
    p.add_argument("--attacks", type=int, help="attack count, split evenly over modes")
    p.add_argument("--attack-users", type=int)
    p.add_argument("--attack-products", type=int)
    p.add_argument("--dt", type=int)
    p.add_argument("--mode", choices=[m.value for m in Mode], help="inject one mode only")
    p.add_argument("--kappa-defamation", type=int)
    p.add_argument("--kappa-promotion", type=int)
    p.add_argument("--rng-seed", type=int)
    p.set_defaults(handler=cmd_inject)

    p = commands.add_parser("eval", parents=[common], help="score reports against ground truth")
    p.add_argument("--report", action="append", help="detection report (repeatable)")
    p.add_argument("--truth", help="ground-truth JSON path")
    p.add_argument("--coverage", type=float)
    p.add_argument("--out", help="recall JSON path")
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("bench", parents=[common], help="scaling and recall sweeps")
    p.add_argument("--suite", choices=["edges", "seeds", "attack-size", "seed-recall"])
    p.add_argument("--out", help="CSV path; a JSON summary is written next to it")
    p.add_argument("--work-dir")
    p.add_argument("--edges", help="comma-separated edge counts")
    p.add_argument("--seeds", help="comma-separated seed counts")
    p.add_argument("--graph", help="preprocessed graph for the seeds suite")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--dt", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--attacks", type=int)
    p.add_argument("--attack-sizes", help="comma-separated USERSxPRODUCTS shapes")
    p.add_argument("--attack-size", help="USERSxPRODUCTS shape for seed-recall")
    p.add_argument("--host-edges", type=int)
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--memory-budget", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        config = _resolve(args)
        return args.handler(args, config)
    except ConfigurationError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (IngestError, FormatError) as exc:
        logger.error("%s", exc)
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_FORMAT
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except OrfelError as exc:
        logger.error("%s", exc)
        return EXIT_UNEXPECTED
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_UNEXPECTED


def cmd_preprocess(args, config):
    _require(config, "input", "out")
    source = Path(config["input"])
    out_dir = Path(config["out"])
    started = time.perf_counter()
    source_hash = file_hash(source)
    block_size = config["block_size"] or block_size_from_env()
    ingest_params = {key: config[key] for key in ("columns", "separator", "header")}

    manifest = out_dir / MANIFEST_NAME
    if manifest.exists() and not config["force"]:
        existing = BipartiteGraph.open(out_dir)
        if existing.built_from(source_hash, config["memory_budget"], block_size, ingest_params):
            logger.info("%s is up to date with %s", out_dir, source)
            _emit(args, {"manifest": str(manifest), "up_to_date": True}, [f"{out_dir} is up to date"])
            return EXIT_OK
        logger.info("%s was built from other input or parameters; rebuilding", out_dir)

    schema = EdgeSchema.from_columns(config["columns"], config["separator"], config["header"])
    buffer = ingest(source, schema)
    graph = preprocess(
        buffer,
        out_dir,
        memory_budget=config["memory_budget"],
        block_size=block_size,
        source_hash=source_hash,
        ingest_params=ingest_params,
    )
    stats = graph.stats()
    elapsed = time.perf_counter() - started
    summary = {
        "manifest": str(manifest),
        "up_to_date": False,
        "ingest": buffer.summary(),
        "stats": stats.as_dict(),
        "num_shards": graph.num_shards,
        "num_blocks": graph.num_blocks,
        "io": graph.counters.as_dict(),
        "wall_clock": elapsed,
        "config": config.as_metadata(),
    }
    _emit(
        args,
        summary,
        [
            f"Preprocessed {graph.num_edges} edges ({graph.num_users} users, "
            f"{graph.num_products} products) into {out_dir}",
            f"Shards: {len(graph.shards)} product-major, {len(graph.mirror_shards)} user-major",
            f"Wall clock: {elapsed:.3f}s",
            f"I/O: {graph.counters.seeks} seeks, {graph.counters.block_reads} block reads",
        ],
    )
    return EXIT_OK


def cmd_detect(args, config):
    _require(config, "graph")
    graph = BipartiteGraph.open(config["graph"])
    mode = Mode(config["mode"])
    kappa = config["kappa"] if config["kappa"] is not None else DEFAULT_KAPPA[mode]
    seeds = config["seeds"]
    if seeds is None:
        if graph.num_edges < 10:
            logger.warning("graph has %d edges; seed count clamped to the 10-edge heuristic", graph.num_edges)
        seeds = suggest_seeds(max(graph.num_edges, 10))
    if config["rho"] < RECOMMENDED_MIN_RHO:
        logger.warning("rho %.2f is below recommended %.1f", config["rho"], RECOMMENDED_MIN_RHO)

    params = DetectionParams(
        n=config["n"],
        m=config["m"],
        rho=config["rho"],
        delta_t=config["dt"],
        kappa=kappa,
        mode=mode,
        n_seeds=seeds,
        rng_seed=config["rng_seed"],
        initial_users_per_seed=config["users_per_seed"],
    )
    config = replace(config, values={**config.values, "kappa": kappa, "seeds": seeds})
    report = run(
        graph,
        params,
        threads=config["threads"],
        max_iterations=config["max_iters"],
        config=config.as_metadata(),
    )
    out = report.write(config["out"])
    summary = {
        "report": str(out),
        "locksteps": len(report.locksteps),
        "iterations": report.meta["iterations"],
        "converged": report.meta["converged"],
        "wall_clock": report.wall_clock,
    }
    _emit(
        args,
        summary,
        [
            f"Detected {len(report.locksteps)} locksteps in {report.meta['iterations']} iterations",
            f"Wall clock: {report.wall_clock:.3f}s",
            f"Report: {out}",
        ],
    )
    return EXIT_NON_CONVERGED if report.non_converged else EXIT_OK


def cmd_gen(args, config):
    _require(config, "out")
    buffer = generate_bipartite(
        config["users"],
        config["products"],
        config["edges"],
        timestamp_range=(config["t_min"], config["t_max"]),
        rng_seed=config["rng_seed"],
        replace=config["replace"],
    )
    out = write_edges(buffer, config["out"])
    _emit(
        args,
        {"edges_file": str(out), "edges": buffer.num_edges, "config": config.as_metadata()},
        [f"Wrote {buffer.num_edges} edges to {out}"],
    )
    return EXIT_OK


def cmd_inject(args, config):
    _require(config, "input", "out", "truth")
    host = ingest(config["input"], EdgeSchema(separator=config["separator"]))
    modes = [Mode(config["mode"])] if config["mode"] else list(Mode)
    kappas = {Mode.DEFAMATION: config["kappa_defamation"], Mode.PROMOTION: config["kappa_promotion"]}
    specs = split_attacks(
        config["attacks"],
        config["attack_users"],
        config["attack_products"],
        config["dt"],
        modes,
        kappas,
    )
    buffer, truth = inject_attacks(host, specs, config["rng_seed"])
    truth.meta["config"] = config.as_metadata()
    out = write_edges(buffer, config["out"], config["separator"])
    truth_path = truth.write(config["truth"])
    _emit(
        args,
        {"edges_file": str(out), "truth": str(truth_path), "attacks": len(truth)},
        [f"Injected {len(truth)} attacks into {out}", f"Ground truth: {truth_path}"],
    )
    return EXIT_OK


def cmd_eval(args, config):
    _require(config, "report", "truth")
    paths = config["report"]
    if isinstance(paths, str):
        paths = [p.strip() for p in paths.split(",") if p.strip()]
    reports = [DetectionReport.read(path) for path in paths]
    truth = AttackGroundTruth.read(config["truth"])
    result = evaluate_recall(reports, truth, config["coverage"])
    summary = {**result.as_dict(), "config": config.as_metadata()}
    if config["out"]:
        Path(config["out"]).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(
        args,
        {k: summary[k] for k in ("caught", "total", "recall")},
        [result.table(), f"Recall: {result.caught}/{result.total} = {result.recall:.2%}"],
    )
    return EXIT_OK


def cmd_bench(args, config):
    suite = config["suite"]
    out = Path(config["out"])
    work_dir = Path(config["work_dir"])
    verbose = not args.quiet
    params = DetectionParams(
        n=config["n"],
        m=config["m"],
        rho=config["rho"],
        delta_t=config["dt"],
        kappa=DEFAULT_KAPPA[Mode.PROMOTION],
        mode=Mode.PROMOTION,
        n_seeds=100,
        rng_seed=config["rng_seed"],
    )
    summary = {"suite": suite, "config": config.as_metadata()}

    if suite == "edges":
        frame = edge_sweep(
            _int_list(config["edges"]),
            work_dir,
            n_seeds=100,
            params=params,
            rng_seed=config["rng_seed"],
            memory_budget=config["memory_budget"],
            threads=config["threads"],
            verbose=verbose,
        )
        summary["fit"] = fit_linear(frame["edges"], frame["wall_clock"])
    elif suite == "seeds":
        graph = _bench_graph(config, work_dir)
        frame = seed_sweep(
            graph, _int_list(config["seeds"]), params, threads=config["threads"], verbose=verbose
        )
        summary["fit"] = fit_linear(frame["seeds"], frame["wall_clock"])
        summary["runtime_ratio"] = float(frame["wall_clock"].iloc[-1] / frame["wall_clock"].iloc[0])
        summary["seed_ratio"] = float(frame["seeds"].iloc[-1] / frame["seeds"].iloc[0])
    elif suite == "attack-size":
        frame = attack_size_sweep(
            _bench_host(config),
            _shape_list(config["attack_sizes"]),
            params,
            work_dir,
            n_attacks=config["attacks"],
            n_runs=config["runs"],
            rng_seed=config["rng_seed"],
            memory_budget=config["memory_budget"],
            verbose=verbose,
        )
    elif suite == "seed-recall":
        frame = seed_recall_sweep(
            _bench_host(config),
            _int_list(config["seeds"]),
            params,
            work_dir,
            attack_size=_shape_list(config["attack_size"])[0],
            n_attacks=config["attacks"],
            n_runs=config["runs"],
            rng_seed=config["rng_seed"],
            memory_budget=config["memory_budget"],
            verbose=verbose,
        )
    else:
        raise ConfigurationError(f"unknown bench suite {suite!r}")

    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, lineterminator="\n")
    summary["rows"] = frame.to_dict(orient="records")
    summary_path = out.with_suffix(".json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(
        args,
        {"csv": str(out), "summary": str(summary_path), **({"fit": summary["fit"]} if "fit" in summary else {})},
        [frame.to_string(index=False), f"CSV: {out}", f"Summary: {summary_path}"],
    )
    return EXIT_OK


def _resolve(args):
    file_values = {}
    if args.config is not None:
        file_values = load_config_file(args.config).get(args.command, {})
    defaults = DEFAULTS[args.command]
    flags = {key: getattr(args, key, None) for key in defaults}
    return RunConfig.resolve(args.command, flags, file_values, defaults)


def _require(config, *keys):
    missing = [key for key in keys if config.get(key) in (None, "", [])]
    if missing:
        raise ConfigurationError(f"{config.command} needs {', '.join(missing)}")


def _emit(args, summary, lines):
    if args.quiet:
        print(json.dumps(summary, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _int_list(value):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(v) for v in str(value).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"expected comma-separated integers, got {value!r}") from exc


def _shape_list(value):
    shapes = []
    for item in str(value).split(","):
        try:
            users, products = (int(v) for v in item.strip().lower().split("x"))
        except ValueError as exc:
            raise ConfigurationError(f"attack shape {item!r} is not USERSxPRODUCTS") from exc
        shapes.append((users, products))
    return shapes


def _bench_host(config):
    edges = config["host_edges"]
    return generate_bipartite(
        max(1, round(edges * USERS_PER_EDGE)),
        max(1, round(edges * PRODUCTS_PER_EDGE)),
        edges,
        rng_seed=config["rng_seed"],
        replace=True,
    )


def _bench_graph(config, work_dir):
    if config["graph"]:
        return BipartiteGraph.open(config["graph"])
    return preprocess(_bench_host(config), work_dir / "seed_sweep", config["memory_budget"])


if __name__ == "__main__":
    sys.exit(main())
