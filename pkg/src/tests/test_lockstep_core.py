import itertools
import math
import random
from types import SimpleNamespace

import numpy as np
import pytest

from src.agents.lockstep import Lockstep
from src.errors import ConfigurationError, OracleGuardError
from src.model.lockstep_core import (
    best_window,
    lambda_mask,
    lambda_weight,
    mean_time,
    objective,
    phi_within_window,
    q_score,
    required_coverage,
    verify_definition,
)
from src.model.params import DetectionParams, Mode
from src.tests.conftest import Recommendation, make_records


def params(**overrides):
    values = dict(n=1, m=1, rho=0.8, delta_t=100, kappa=4, mode=Mode.PROMOTION, n_seeds=1)
    values.update(overrides)
    return DetectionParams(**values)


def full_lockstep_edges(users, products, delta_t, base=10_000, weight=5):
    return [
        Recommendation(u, p, base + 1_000 * p + (u % (delta_t + 1)), weight)
        for p in range(products)
        for u in range(users)
    ]


def brute_force_core(users, products, edges, p):
    """Direct transcription: some choice of per-product centers gives every user enough in-window, passing edges."""
    if len(users) < p.n or len(products) < p.m:
        return False
    need = math.ceil(p.rho * len(products))
    per_product = {j: [e for e in edges if e.product == j and e.user in users] for j in products}
    candidates = [sorted({e.timestamp + p.delta_t for e in per_product[j]}) or [0] for j in products]
    for centers in itertools.product(*candidates):
        satisfied = True
        for u in users:
            covered = 0
            for j, center in zip(products, centers):
                if any(
                    e.user == u
                    and abs(e.timestamp - center) <= p.delta_t
                    and (e.weight >= p.kappa if p.mode is Mode.PROMOTION else e.weight <= p.kappa)
                    for e in per_product[j]
                ):
                    covered += 1
            if covered < need:
                satisfied = False
                break
        if satisfied:
            return True
    return False


def test_lambda_boundaries():
    assert lambda_weight(2, 3, Mode.DEFAMATION)
    assert lambda_weight(5, 4, Mode.PROMOTION)
    assert lambda_weight(3, 3, Mode.DEFAMATION)
    assert lambda_weight(3, 3, Mode.PROMOTION)
    assert not lambda_weight(4, 3, Mode.DEFAMATION)
    assert not lambda_weight(2, 3, Mode.PROMOTION)


def test_lambda_modes_cover_every_weight():
    for kappa in (1, 3, 128, 255):
        for weight in range(1, 256):
            assert lambda_weight(weight, kappa, "defamation") or lambda_weight(weight, kappa, "promotion")


def test_lambda_mask_matches_scalar():
    weights = np.arange(1, 6, dtype=np.uint8)
    assert lambda_mask(weights, 4, Mode.PROMOTION).tolist() == [False, False, False, True, True]
    assert lambda_mask(weights, 2, Mode.DEFAMATION).tolist() == [True, True, False, False, False]


def test_phi_window_inclusive_and_symmetric():
    assert phi_within_window(1000, 1100, 100)
    assert not phi_within_window(1000, 1101, 100)
    rng = random.Random(5)
    for _ in range(100):
        a, b = rng.randrange(10_000), rng.randrange(10_000)
        assert phi_within_window(a, b, 300) == phi_within_window(b, a, 300)


def test_required_coverage_ceiling():
    assert required_coverage(0.7, 10) == 7
    assert required_coverage(0.8, 5) == 4
    assert required_coverage(0.8, 1) == 1
    assert required_coverage(1.0, 3) == 3


def test_q_score_examples():
    lockstep = SimpleNamespace(products=list(range(5)), time_centers={j: 1000 for j in range(5)})
    p = params(m=5)
    assert q_score([(j, 1000, 5) for j in range(5)], lockstep, p) == 5
    assert q_score([(j, 1000, 5) for j in range(3)], lockstep, p) == 0
    one_fails = [(0, 1000, 5), (1, 1000, 5), (2, 1000, 5), (3, 1000, 1)]
    assert q_score(one_fails, lockstep, p) == 0


def test_q_score_is_zero_or_above_threshold():
    lockstep = SimpleNamespace(products=list(range(5)), time_centers={j: 1000 for j in range(5)})
    p = params(m=5)
    rng = random.Random(11)
    for _ in range(200):
        edges = [(j, 1000 + rng.randrange(-300, 300), rng.randint(1, 5)) for j in range(5) if rng.random() < 0.8]
        score = q_score(edges, lockstep, p)
        assert score == 0 or score >= required_coverage(p.rho, 5)


def test_objective_of_full_lockstep(host_model):
    p = params(n=10, m=5)
    host = host_model(p)
    seed = [(u, 10_000 + u, 5) for u in range(10)]
    lockstep = Lockstep(0, host, 0, seed)
    for product in range(1, 5):
        lockstep.update_products(product, make_records([(u, product, 10_000 + u, 5) for u in range(10)]))
    assert len(lockstep.products) == 5
    assert objective([lockstep], p) == 50
    assert objective([], p) == 0


def test_verify_definition_accepts_full_lockstep():
    edges = full_lockstep_edges(10, 5, 100)
    p = params(n=10, m=5, rho=1.0)
    assert verify_definition(range(10), range(5), edges, p)


def test_verify_definition_rejects_shifted_users():
    edges = full_lockstep_edges(10, 5, 100)
    shifted = [
        Recommendation(e.user, e.product, e.timestamp + 300, e.weight) if e.product == 0 and e.user < 3 else e
        for e in edges
    ]
    p = params(n=10, m=5, rho=1.0)
    assert not verify_definition(range(10), range(5), shifted, p)


def test_verify_definition_requires_n_users():
    edges = full_lockstep_edges(9, 5, 100)
    assert not verify_definition(range(9), range(5), edges, params(n=10, m=5))


def test_verify_definition_rejects_failing_weights():
    edges = full_lockstep_edges(10, 5, 100, weight=1)
    assert not verify_definition(range(10), range(5), edges, params(n=10, m=5))


def test_verify_definition_guard():
    with pytest.raises(OracleGuardError):
        verify_definition(range(101), range(100), [], params())


def test_oracle_agrees_with_brute_force():
    rng = random.Random(2024)
    for _ in range(200):
        num_users, num_products = rng.randint(1, 6), rng.randint(1, 4)
        edges = []
        for u in range(num_users):
            for j in range(num_products):
                if rng.random() < 0.6:
                    for _ in range(1 if rng.random() < 0.8 else 2):
                        edges.append(Recommendation(u, j, rng.randrange(0, 400), rng.randint(1, 5)))
        users = set(rng.sample(range(num_users), rng.randint(1, num_users)))
        products = set(rng.sample(range(num_products), rng.randint(1, num_products)))
        p = params(
            n=rng.randint(1, len(users)),
            m=rng.randint(1, len(products)),
            rho=rng.choice([0.5, 0.75, 1.0]),
            delta_t=50,
            kappa=rng.randint(1, 5),
            mode=rng.choice(list(Mode)),
        )
        expected = brute_force_core(sorted(users), sorted(products), edges, p)
        assert verify_definition(users, products, edges, p) == expected


def test_best_window_examples():
    edges = {(u, t, 5) for u, t in enumerate([0, 10, 20, 5000])}
    assert {t for _, t, _ in best_window(edges, 100)} == {0, 10, 20}
    assert {t for _, t, _ in best_window({(0, 0, 5), (1, 300, 5)}, 100)} == {0}
    assert best_window(set(), 100) == set()


def test_mean_time():
    assert mean_time([(0, 100, 5), (1, 110, 5)]) == 105


def test_params_validation():
    with pytest.raises(ConfigurationError):
        params(rho=0)
    with pytest.raises(ConfigurationError):
        params(delta_t=0)
    with pytest.raises(ConfigurationError):
        params(mode="sideways")
    assert params(mode="defamation").mode is Mode.DEFAMATION
