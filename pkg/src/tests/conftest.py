import io
from dataclasses import dataclass

import numpy as np
import pytest
from mesa import Model

from src.graph.ingest import ingest
from src.graph.records import RECORD_DTYPE
from src.graph.store import preprocess
from src.model.params import DetectionParams, Mode

TINY_CSV = "u1,p1,100,5\nu2,p1,110,5\nu1,p2,100,1\n"


@dataclass(frozen=True)
class Recommendation:
    user: int
    product: int
    timestamp: int
    weight: int


def make_records(rows):
    """Record array from (user, product, timestamp, weight) tuples."""
    rows = list(rows)
    records = np.empty(len(rows), dtype=RECORD_DTYPE)
    for i, row in enumerate(rows):
        records[i] = row
    return records


def iter_recommendations(records):
    for record in records:
        yield Recommendation(
            int(record["user"]), int(record["product"]), int(record["timestamp"]), int(record["weight"])
        )


class HostModel(Model):
    """Bare model holding what a Lockstep agent reads from its model."""

    def __init__(self, params):
        super().__init__()
        self.params = params
        self.iteration = 0


def edge_text(rows):
    return "".join(f"{u},{p},{t},{w}\n" for u, p, t, w in rows)


def lockstep_rows(users, products, base=10_000, spacing=1_000, rating=5, user_prefix="a", product_prefix="q"):
    """A full lockstep: every user rates every product close to that product's base time."""
    return [
        (f"{user_prefix}{u}", f"{product_prefix}{p}", base + spacing * p + u, rating)
        for p in range(products)
        for u in range(users)
    ]


@pytest.fixture
def tiny_csv(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text(TINY_CSV, encoding="utf-8")
    return path


@pytest.fixture
def build_graph(tmp_path):
    """Ingest (user, product, timestamp, rating) rows and preprocess them."""

    def _build(rows, name="graph", **kwargs):
        buffer = ingest(io.StringIO(edge_text(rows)))
        return buffer, preprocess(buffer, tmp_path / name, **kwargs)

    return _build


@pytest.fixture
def promotion_params():
    return DetectionParams(n=10, m=5, rho=0.8, delta_t=100, kappa=4, mode=Mode.PROMOTION, n_seeds=1)


@pytest.fixture
def host_model():
    def _host(params):
        return HostModel(params)

    return _host
