from collections import defaultdict
from dataclasses import dataclass

from mesa import Agent

from src.model.lockstep_core import (
    best_window,
    lambda_mask,
    lambda_weight,
    mean_time,
    phi_within_window,
    q_score,
    required_coverage,
)


@dataclass(frozen=True)
class _IterationStart:
    users: frozenset
    products: tuple
    member_edges: dict
    time_centers: dict
    score: int


class Lockstep(Agent):
    """One seed growing toward a local maximum of the objective.

    Credited recommendations are kept per product as (user, timestamp, weight)
    triples; the product's time center is the mean timestamp of its credited
    recommendations.
    """

    def __init__(self, unique_id, model, product, seed_edges):
        super().__init__(unique_id, model)
        seed_edges = {_edge(u, t, w) for u, t, w in seed_edges}
        self.users = {user for user, _, _ in seed_edges}
        self.products = [product]
        self.member_edges = {product: seed_edges}
        self.time_centers = {product: mean_time(seed_edges)}
        self.alive = True
        self.iteration_of_last_change = 0
        self._start = None

    @property
    def params(self):
        return self.model.params

    def credited_users(self, product):
        return {user for user, _, _ in self.member_edges.get(product, ())}

    def user_edges(self):
        """Credited edges per user as (product, timestamp, weight)."""
        edges = defaultdict(list)
        for product in self.products:
            for user, timestamp, weight in self.member_edges[product]:
                edges[user].append((product, timestamp, weight))
        return edges

    def score(self, params=None):
        params = params or self.params
        edges = self.user_edges()
        return sum(q_score(edges.get(user, ()), self, params) for user in self.users)

    def begin_iteration(self):
        self._start = _IterationStart(
            users=frozenset(self.users),
            products=tuple(self.products),
            member_edges={p: set(edges) for p, edges in self.member_edges.items()},
            time_centers=dict(self.time_centers),
            score=self.score(),
        )

    def update_products(self, product, adjacency):
        """Add, or swap in, a product recommended in-window by enough members."""
        if product in self.member_edges:
            return
        params = self.params
        adjacency = adjacency[lambda_mask(adjacency["weight"], params.kappa, params.mode)]
        recomms = [
            _edge(u, t, w)
            for u, t, w in zip(
                adjacency["user"].tolist(),
                adjacency["timestamp"].tolist(),
                adjacency["weight"].tolist(),
            )
            if u in self.users
        ]
        if not recomms:
            return
        center = mean_time(recomms)
        recomms = {e for e in recomms if phi_within_window(center, e[1], params.delta_t)}
        if not recomms:
            return
        recommenders = {user for user, _, _ in recomms}

        if len(self.products) < params.m:
            if len(recommenders) >= required_coverage(params.rho, len(self.users)):
                self._add_product(product, recomms)
            return

        swap = self._swap_candidate(recommenders)
        if swap is not None:
            self._remove_product(swap)
            self._add_product(product, recomms)

    def update_users(self, user, adjacency):
        """Credit a user whose edges reach enough products within 2 * delta_t."""
        params = self.params
        reach = 2 * params.delta_t
        recomms = []
        covered = set()
        for product, timestamp, weight in zip(
            adjacency["product"].tolist(),
            adjacency["timestamp"].tolist(),
            adjacency["weight"].tolist(),
        ):
            center = self.time_centers.get(product)
            if center is None:
                continue
            if lambda_weight(weight, params.kappa, params.mode) and phi_within_window(
                center, timestamp, reach
            ):
                recomms.append((product, _edge(user, timestamp, weight)))
                covered.add(product)
        if not covered or len(covered) < required_coverage(params.rho, len(self.products)):
            return
        self.users.add(user)
        for product, edge in recomms:
            self.member_edges[product].add(edge)

    def step(self):
        if self.alive:
            self.end_iteration()

    def end_iteration(self):
        """Tighten every product to its best window, then settle and judge liveness."""
        params = self.params
        for product in list(self.products):
            self.member_edges[product] = best_window(self.member_edges[product], params.delta_t)
        self._settle()

        start = self._start
        if start is None:
            return
        if self.score() < start.score:
            self._restore(start)
            self.alive = False
        elif frozenset(self.users) == start.users and set(self.products) == set(start.products):
            self.alive = False
        else:
            self.iteration_of_last_change = self.model.iteration

    def _settle(self):
        # Trim to each product's mean window and drop under-covered users
        # until neither step changes anything.
        delta_t = self.params.delta_t
        changed = True
        while changed:
            changed = False
            for product in list(self.products):
                edges = self.member_edges[product]
                while edges:
                    center = mean_time(edges)
                    inside = {e for e in edges if phi_within_window(center, e[1], delta_t)}
                    if len(inside) == len(edges):
                        break
                    edges = inside
                    changed = True
                if edges:
                    self.member_edges[product] = edges
                    self.time_centers[product] = mean_time(edges)
                else:
                    self._remove_product(product)
                    changed = True

            need = required_coverage(self.params.rho, len(self.products))
            coverage = defaultdict(int)
            for product in self.products:
                for user in self.credited_users(product):
                    coverage[user] += 1
            losers = {user for user in self.users if coverage[user] < need}
            if losers:
                self.users -= losers
                for product in self.products:
                    self.member_edges[product] = {
                        e for e in self.member_edges[product] if e[0] not in losers
                    }
                changed = True

    def _swap_candidate(self, recommenders):
        best = None
        for product in self.products:
            credited = self.credited_users(product)
            if credited < recommenders:
                key = (len(credited), product)
                if best is None or key < best:
                    best = key
        return best[1] if best else None

    def _add_product(self, product, recomms):
        self.products.append(product)
        self.member_edges[product] = set(recomms)
        self.time_centers[product] = mean_time(recomms)

    def _remove_product(self, product):
        self.products.remove(product)
        del self.member_edges[product]
        del self.time_centers[product]

    def _restore(self, start):
        self.users = set(start.users)
        self.products = list(start.products)
        self.member_edges = {p: set(edges) for p, edges in start.member_edges.items()}
        self.time_centers = dict(start.time_centers)


def _edge(user, timestamp, weight):
    return (int(user), int(timestamp), int(weight))
