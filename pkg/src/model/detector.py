import json
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from mesa import Model
from mesa.datacollection import DataCollector
from mesa.time import BaseScheduler

from src.agents.lockstep import Lockstep
from src.config import DEFAULT_MAX_ITERATIONS
from src.errors import ConfigurationError
from src.graph.store import PRODUCTS, USERS, adjacency_groups
from src.model.lockstep_core import lambda_mask, objective
from src.model.params import Phase

logger = logging.getLogger(__name__)


def suggest_seeds(num_edges):
    """Seed count heuristic: round(1000 * log10(edges))."""
    if num_edges < 10:
        raise ConfigurationError(f"seed heuristic needs at least 10 edges, got {num_edges}")
    return round(1000 * math.log10(num_edges))


@dataclass
class DetectedLockstep:
    users: list
    products: list
    centers: dict
    mode: str
    score: int
    iteration_converged: int
    seeds: list = field(default_factory=list)


@dataclass
class DetectionReport:
    """Detected locksteps, with original ids, and the run metadata."""

    locksteps: list
    meta: dict
    wall_clock: float = 0.0

    @property
    def non_converged(self):
        return bool(self.meta.get("non_converged"))

    @property
    def params(self):
        return self.meta.get("params", {})

    def to_dict(self):
        return {"meta": self.meta, "locksteps": [asdict(entry) for entry in self.locksteps]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        """Write the report and a <stem>.timing.json sidecar with wall-clock time."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        timing = {"wall_clock": self.wall_clock, "report": path.name}
        timing_path(path).write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data):
        return cls(
            locksteps=[DetectedLockstep(**entry) for entry in data.get("locksteps", [])],
            meta=data.get("meta", {}),
        )

    @classmethod
    def read(cls, path):
        path = Path(path)
        report = cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        sidecar = timing_path(path)
        if sidecar.exists():
            report.wall_clock = json.loads(sidecar.read_text(encoding="utf-8"))["wall_clock"]
        return report


def timing_path(report_path):
    report_path = Path(report_path)
    return report_path.with_name(f"{report_path.stem}.timing.json")


class LockstepDetector(Model):
    """Seed-driven lockstep search over an on-disk bipartite graph.

    Each iteration scans the product side (growing or swapping products),
    then the user side (admitting users within 2 * delta_t), then runs every
    live seed's end-of-iteration step through the scheduler. The run ends
    when every seed is dead or the iteration cap is reached.
    """

    def __init__(self, graph, params, threads=1, max_iterations=DEFAULT_MAX_ITERATIONS):
        super().__init__()
        self.reset_randomizer(params.rng_seed)
        if threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {threads}")
        self.graph = graph
        self.params = params
        self.threads = threads
        self.max_iterations = max_iterations
        self.iteration = 0
        self.phase = Phase.PRODUCTS
        self.converged = False
        self.io_history = []
        self._executor = None

        self.schedule = BaseScheduler(self)
        self.datacollector = DataCollector(
            model_reporters={
                "Objective": lambda m: m.objective(),
                "Live_Seeds": lambda m: m.live_seed_count,
                "Users": lambda m: sum(len(c.users) for c in m.locksteps),
                "Products": lambda m: sum(len(c.products) for c in m.locksteps),
                "Seeks": lambda m: m.io_history[-1].seeks if m.io_history else 0,
                "Block_Reads": lambda m: m.io_history[-1].block_reads if m.io_history else 0,
            }
        )

        before = graph.counters.snapshot()
        self.locksteps = self.seed_init()
        self.seed_io = graph.counters.since(before)
        self.running = bool(self.locksteps)
        self.converged = not self.locksteps
        self.datacollector.collect(self)

    @property
    def live_seed_count(self):
        return sum(1 for c in self.locksteps if c.alive)

    def objective(self):
        return objective(self.locksteps, self.params)

    def objective_history(self):
        return list(self.datacollector.model_vars["Objective"])

    def seed_init(self):
        """One single-product lockstep per seed, with a few of its recommenders."""
        params = self.params
        counts = np.zeros(self.graph.num_products, dtype=np.int64)
        for _, records in self.graph.iter_shards(PRODUCTS):
            passing = records[lambda_mask(records["weight"], params.kappa, params.mode)]
            counts += np.bincount(passing["product"], minlength=len(counts))
        pool = np.flatnonzero(counts).tolist()
        if not pool:
            logger.warning("no product has a recommendation passing the %s threshold", params.mode.value)
            return []

        if params.n_seeds <= len(pool):
            chosen = self.random.sample(pool, params.n_seeds)
        else:
            chosen = self.random.choices(pool, k=params.n_seeds)

        wanted = set(chosen)
        recommendations = {}
        for _, records in self.graph.iter_shards(PRODUCTS):
            passing = records[lambda_mask(records["weight"], params.kappa, params.mode)]
            for product, adjacency in adjacency_groups(passing, PRODUCTS):
                if product in wanted:
                    by_user = defaultdict(list)
                    for edge in zip(
                        adjacency["user"].tolist(),
                        adjacency["timestamp"].tolist(),
                        adjacency["weight"].tolist(),
                    ):
                        by_user[edge[0]].append(edge)
                    recommendations[product] = by_user

        locksteps = []
        for seed_id, product in enumerate(chosen):
            by_user = recommendations[product]
            recommenders = sorted(by_user)
            picked = self.random.sample(
                recommenders, min(params.initial_users_per_seed, len(recommenders))
            )
            edges = [edge for user in picked for edge in by_user[user]]
            lockstep = Lockstep(seed_id, self, product, edges)
            self.schedule.add(lockstep)
            locksteps.append(lockstep)
        logger.info("initialised %d seeds over %d candidate products", len(locksteps), len(pool))
        return locksteps

    def step(self):
        """One iteration: product scan, user scan, end-of-iteration."""
        self.iteration += 1
        before = self.graph.counters.snapshot()
        live = [c for c in self.locksteps if c.alive]
        for lockstep in live:
            lockstep.begin_iteration()

        self.phase = Phase.PRODUCTS
        self._scan_phase(PRODUCTS, live)
        self.phase = Phase.USERS
        self._scan_phase(USERS, live)
        self.phase = Phase.END_ITERATION
        self.schedule.step()

        self.io_history.append(self.graph.counters.since(before))
        self.datacollector.collect(self)
        live_count = self.live_seed_count
        logger.info(
            "iteration %d: %d live seeds, objective %d",
            self.iteration,
            live_count,
            self.datacollector.model_vars["Objective"][-1],
        )
        if not live_count:
            self.converged = True
            self.running = False
        elif self.iteration >= self.max_iterations:
            self.running = False

    def run_model(self):
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                self._executor = executor
                try:
                    super().run_model()
                finally:
                    self._executor = None
        else:
            super().run_model()
        if not self.converged:
            logger.warning(
                "stopped at the iteration cap (%d) with %d live seeds",
                self.max_iterations,
                self.live_seed_count,
            )

    def _scan_phase(self, side, live):
        if not live:
            return
        index = defaultdict(list)
        if side == PRODUCTS:
            for lockstep in live:
                for user in lockstep.users:
                    index[user].append(lockstep)
            neighbour, visit = "user", Lockstep.update_products
        else:
            for lockstep in live:
                for product in lockstep.products:
                    index[product].append(lockstep)
            neighbour, visit = "product", Lockstep.update_users

        params = self.params
        for _, records in self.graph.iter_shards(side):
            # edges failing the weight threshold never reach a lockstep
            passing = records[lambda_mask(records["weight"], params.kappa, params.mode)]
            groups = list(adjacency_groups(passing, side))
            if self.threads == 1:
                self._visit(groups, index, neighbour, visit, None)
            elif self._executor is not None:
                futures = [
                    self._executor.submit(self._visit, groups, index, neighbour, visit, worker)
                    for worker in range(self.threads)
                ]
                for future in futures:
                    future.result()
            else:
                for worker in range(self.threads):
                    self._visit(groups, index, neighbour, visit, worker)

    def _visit(self, groups, index, neighbour, visit, worker):
        # a lockstep belongs to worker unique_id % threads for the whole phase
        for vertex, adjacency in groups:
            candidates = {}
            for key in adjacency[neighbour].tolist():
                for lockstep in index.get(key, ()):
                    if worker is None or lockstep.unique_id % self.threads == worker:
                        candidates[lockstep.unique_id] = lockstep
            for unique_id in sorted(candidates):
                visit(candidates[unique_id], vertex, adjacency)

    def report(self, config=None):
        params = self.params
        user_ids = self.graph.user_ids()
        product_ids = self.graph.product_ids()
        detected = []
        seen = {}
        for lockstep in self.locksteps:
            if len(lockstep.users) < params.n or len(lockstep.products) < params.m:
                continue
            key = (frozenset(lockstep.users), frozenset(lockstep.products))
            if key in seen:
                seen[key].seeds.append(lockstep.unique_id)
                continue
            products = sorted(lockstep.products)
            entry = DetectedLockstep(
                users=[user_ids[u] for u in sorted(lockstep.users)],
                products=[product_ids[p] for p in products],
                centers={product_ids[p]: int(round(lockstep.time_centers[p])) for p in products},
                mode=params.mode.value,
                score=lockstep.score(),
                iteration_converged=lockstep.iteration_of_last_change,
                seeds=[lockstep.unique_id],
            )
            seen[key] = entry
            detected.append(entry)

        max_seeks, max_reads = self.graph.io_bounds()
        meta = {
            "params": params.as_dict(),
            "dataset_id": self.graph.dataset_id,
            "num_users": self.graph.num_users,
            "num_products": self.graph.num_products,
            "num_edges": self.graph.num_edges,
            "num_shards": self.graph.num_shards,
            "num_blocks": self.graph.num_blocks,
            "seeds": len(self.locksteps),
            "seeds_dead": len(self.locksteps) - self.live_seed_count,
            "iterations": self.iteration,
            "max_iterations": self.max_iterations,
            "converged": self.converged,
            "non_converged": not self.converged,
            "threads": self.threads,
            "objective": self.objective_history(),
            "io": {
                "seed_init": self.seed_io.as_dict(),
                "per_iteration": [c.as_dict() for c in self.io_history],
                "bounds": {"seeks": max_seeks, "block_reads": max_reads},
            },
        }
        if config is not None:
            meta["config"] = config
        return DetectionReport(locksteps=detected, meta=meta)


def run(graph, params, threads=1, max_iterations=DEFAULT_MAX_ITERATIONS, config=None):
    """Run the detector to convergence (or the cap) and build its report."""
    started = time.perf_counter()
    model = LockstepDetector(graph, params, threads=threads, max_iterations=max_iterations)
    model.run_model()
    report = model.report(config=config)
    report.wall_clock = time.perf_counter() - started
    return report
