"""Validity test, weight and time predicates, and the objective of a lockstep.

A lockstep is a set of users U and products P such that every user recommends
at least ceil(rho * |P|) of the products, each recommendation passing the
mode's weight threshold and falling within delta_t of a per-product time
center.
"""

import math
from collections import defaultdict

import numpy as np

from src.errors import OracleGuardError
from src.model.params import Mode

ORACLE_MAX_CELLS = 10_000


def lambda_weight(weight, kappa, mode):
    """True when a recommendation weight fits the mode; kappa is inclusive."""
    if Mode(mode) is Mode.PROMOTION:
        return weight >= kappa
    return weight <= kappa


def lambda_mask(weights, kappa, mode):
    weights = np.asarray(weights)
    if Mode(mode) is Mode.PROMOTION:
        return weights >= kappa
    return weights <= kappa


def phi_within_window(t_center, t, delta_t):
    return abs(t_center - t) <= delta_t


def required_coverage(rho, size):
    """ceil(rho * size), immune to float noise such as 0.7 * 10."""
    return max(0, math.ceil(rho * size - 1e-9))


def q_score(user_edges, lockstep, params):
    """Per-user score: products covered in-window with a passing weight.

    `user_edges` are (product, timestamp, weight) triples. Returns the count of
    distinct lockstep products covered, or 0 when that count is below
    ceil(rho * |P|).
    """
    products = set(lockstep.products)
    if not products:
        return 0
    covered = set()
    for product, timestamp, weight in user_edges:
        if product not in products or product in covered:
            continue
        center = lockstep.time_centers.get(product)
        if center is None:
            continue
        if phi_within_window(center, timestamp, params.delta_t) and lambda_weight(
            weight, params.kappa, params.mode
        ):
            covered.add(product)
    sigma = len(covered)
    return sigma if sigma >= required_coverage(params.rho, len(products)) else 0


def objective(locksteps, params):
    """Sum of q over every member user of every lockstep."""
    return sum(lockstep.score(params) for lockstep in locksteps)


def verify_definition(users, products, edges, params):
    """Exact check that (users, products) is a temporally-coherent near bipartite core.

    `edges` yields objects with user, product, timestamp and weight; edges outside
    users x products are ignored. Time centers are searched exhaustively over
    the windows anchored at each product's passing timestamps, with dominated
    windows pruned.
    """
    users = set(users)
    products = sorted(set(products))
    if len(users) * len(products) > ORACLE_MAX_CELLS:
        raise OracleGuardError(
            f"{len(users)} users x {len(products)} products exceeds {ORACLE_MAX_CELLS} cells"
        )
    if len(products) < params.m or len(users) < params.n:
        return False
    passing = defaultdict(list)
    product_set = set(products)
    for edge in edges:
        if edge.user in users and edge.product in product_set:
            if lambda_weight(edge.weight, params.kappa, params.mode):
                passing[edge.product].append((edge.timestamp, edge.user))

    need = required_coverage(params.rho, len(products))
    options = [_window_options(passing[p], params.delta_t) for p in products]

    reachable = defaultdict(int)
    for choice in options:
        for user in set().union(*choice):
            reachable[user] += 1
    if any(reachable[u] < need for u in users):
        return False

    # products with the fewest options first keeps the search shallow
    order = sorted(range(len(products)), key=lambda i: len(options[i]))
    options = [options[i] for i in order]
    remaining = [defaultdict(int) for _ in range(len(options) + 1)]
    for depth in range(len(options) - 1, -1, -1):
        remaining[depth] = defaultdict(int, remaining[depth + 1])
        for user in set().union(*options[depth]):
            remaining[depth][user] += 1

    coverage = defaultdict(int)

    def search(depth):
        if any(coverage[u] + remaining[depth][u] < need for u in users):
            return False
        if depth == len(options):
            return True
        for covered in options[depth]:
            for user in covered:
                coverage[user] += 1
            found = search(depth + 1)
            for user in covered:
                coverage[user] -= 1
            if found:
                return True
        return False

    return search(0)


def _window_options(stamped_users, delta_t):
    """Maximal user sets coverable by one [c - delta_t, c + delta_t] window."""
    if not stamped_users:
        return [frozenset()]
    stamped_users = sorted(stamped_users)
    windows = set()
    end = 0
    for start in range(len(stamped_users)):
        limit = stamped_users[start][0] + 2 * delta_t
        end = max(end, start)
        while end < len(stamped_users) and stamped_users[end][0] <= limit:
            end += 1
        windows.add(frozenset(user for _, user in stamped_users[start:end]))
    windows = sorted(windows, key=lambda s: (-len(s), sorted(s)))
    maximal = []
    for candidate in windows:
        if not any(candidate <= kept for kept in maximal):
            maximal.append(candidate)
    return maximal


def mean_time(edges):
    """Arithmetic mean of the timestamps of (user, timestamp, weight) edges."""
    edges = list(edges)
    return math.fsum(timestamp for _, timestamp, _ in edges) / len(edges)


def best_window(edges, delta_t):
    """Largest subset of edges spanning at most 2 * delta_t; earliest wins ties."""
    ordered = sorted(edges, key=lambda e: (e[1], e[0], e[2]))
    best_start = best_end = end = 0
    for start in range(len(ordered)):
        end = max(end, start)
        while end < len(ordered) and ordered[end][1] - ordered[start][1] <= 2 * delta_t:
            end += 1
        if end - start > best_end - best_start:
            best_start, best_end = start, end
    return set(ordered[best_start:best_end])
