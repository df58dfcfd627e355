import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from src.errors import ConfigurationError
from src.graph.ingest import EdgeBuffer
from src.graph.records import RECORD_DTYPE
from src.model.params import Mode

logger = logging.getLogger(__name__)

DEFAULT_MAX_RATING = 5
DEFAULT_KAPPA = {Mode.DEFAMATION: 2, Mode.PROMOTION: 4}


@dataclass(frozen=True)
class AttackSpec:
    """Dimensions of an injected lockstep attack and how many to inject."""

    n_users: int
    n_products: int
    delta_t: int
    mode: Mode
    kappa: int
    count: int = 1
    max_rating: int = DEFAULT_MAX_RATING

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigurationError(f"unknown mode {self.mode!r}") from None
        if self.n_users < 1 or self.n_products < 1:
            raise ConfigurationError(
                f"an attack needs at least one user and one product, got "
                f"{self.n_users} x {self.n_products}"
            )
        if self.delta_t <= 0:
            raise ConfigurationError(f"delta_t must be positive, got {self.delta_t}")
        if self.count < 0:
            raise ConfigurationError(f"count must be >= 0, got {self.count}")
        if not 1 <= self.kappa <= self.max_rating:
            raise ConfigurationError(f"kappa {self.kappa} outside 1..{self.max_rating}")

    def rating_range(self):
        """Inclusive rating range that passes the weight threshold of the mode."""
        if self.mode is Mode.PROMOTION:
            return self.kappa, self.max_rating
        return 1, self.kappa

    def as_dict(self):
        values = asdict(self)
        values["mode"] = self.mode.value
        return values


@dataclass
class InjectedAttack:
    users: list
    products: list
    centers: dict
    mode: str
    kappa: int
    delta_t: int
    edges: int


@dataclass
class AttackGroundTruth:
    attacks: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.attacks)

    def to_dict(self):
        return {"meta": self.meta, "attacks": [asdict(a) for a in self.attacks]}

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data):
        return cls([InjectedAttack(**a) for a in data.get("attacks", [])], data.get("meta", {}))

    @classmethod
    def read(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_bipartite(
    n_users,
    n_products,
    n_edges,
    timestamp_range=(0, 10**9),
    rng_seed=0,
    replace=False,
    max_rating=DEFAULT_MAX_RATING,
):
    """Random bipartite graph with n_edges uniformly placed edges.

    Users are named u0.., products p0..; timestamps are uniform in the
    inclusive range and ratings uniform in 1..max_rating. Without `replace`
    every (user, product) pair occurs at most once.
    """
    lo, hi = timestamp_range
    if n_users < 1 or n_products < 1:
        raise ConfigurationError(f"need at least one user and one product, got {n_users} x {n_products}")
    if n_edges < 0:
        raise ConfigurationError(f"edge count must be >= 0, got {n_edges}")
    if lo < 0 or hi < lo:
        raise ConfigurationError(f"invalid timestamp range {timestamp_range}")
    pairs = n_users * n_products
    if not replace and n_edges > pairs:
        raise ConfigurationError(
            f"{n_edges} distinct edges do not fit in {n_users} x {n_products} pairs"
        )

    rng = np.random.default_rng(rng_seed)
    if replace:
        flat = rng.integers(0, pairs, size=n_edges)
    else:
        flat = rng.choice(pairs, size=n_edges, replace=False)

    records = np.empty(n_edges, dtype=RECORD_DTYPE)
    records["user"] = flat // n_products
    records["product"] = flat % n_products
    records["timestamp"] = rng.integers(lo, hi, size=n_edges, endpoint=True)
    records["weight"] = rng.integers(1, max_rating, size=n_edges, endpoint=True)
    logger.info("generated %d edges over %d users x %d products", n_edges, n_users, n_products)
    return EdgeBuffer(
        records=records,
        user_ids=[f"u{i}" for i in range(n_users)],
        product_ids=[f"p{i}" for i in range(n_products)],
        lines=n_edges,
    )


def inject_lockstep(buffer, spec, rng_seed=0):
    """Append spec.count lockstep attacks to a graph; returns (buffer', truth)."""
    return inject_attacks(buffer, [spec], rng_seed)


def inject_attacks(buffer, specs, rng_seed=0):
    """Append every attack of every spec with one random stream.

    Each attack picks distinct existing users and products; every product
    gets a base timestamp from the host graph's observed range and one
    rating that passes the spec's weight threshold, and each chosen user
    recommends it at base + uniform[-delta_t, +delta_t]. The host
    records are kept unchanged at the front of the output.
    """
    rng = np.random.default_rng(rng_seed)
    lo, hi = _timestamp_range(buffer.records)
    chunks = [buffer.records]
    attacks = []
    for spec in specs:
        if spec.n_users > buffer.num_users or spec.n_products > buffer.num_products:
            raise ConfigurationError(
                f"attack of {spec.n_users} x {spec.n_products} does not fit a graph of "
                f"{buffer.num_users} users x {buffer.num_products} products"
            )
        low_rating, high_rating = spec.rating_range()
        for _ in range(spec.count):
            users = np.sort(rng.choice(buffer.num_users, size=spec.n_users, replace=False))
            products = np.sort(rng.choice(buffer.num_products, size=spec.n_products, replace=False))
            bases = rng.integers(
                max(lo, spec.delta_t), max(hi, spec.delta_t), size=spec.n_products, endpoint=True
            )
            ratings = rng.integers(low_rating, high_rating, size=spec.n_products, endpoint=True)
            offsets = rng.integers(
                -spec.delta_t, spec.delta_t, size=(spec.n_products, spec.n_users), endpoint=True
            )

            injected = np.empty(spec.n_products * spec.n_users, dtype=RECORD_DTYPE)
            injected["product"] = np.repeat(products, spec.n_users)
            injected["user"] = np.tile(users, spec.n_products)
            injected["timestamp"] = (bases[:, None] + offsets).ravel()
            injected["weight"] = np.repeat(ratings, spec.n_users)
            chunks.append(injected)

            attacks.append(
                InjectedAttack(
                    users=[buffer.user_ids[u] for u in users.tolist()],
                    products=[buffer.product_ids[p] for p in products.tolist()],
                    centers={
                        buffer.product_ids[p]: int(b) for p, b in zip(products.tolist(), bases.tolist())
                    },
                    mode=spec.mode.value,
                    kappa=spec.kappa,
                    delta_t=spec.delta_t,
                    edges=len(injected),
                )
            )

    injected_edges = sum(a.edges for a in attacks)
    logger.info("injected %d attacks with %d edges", len(attacks), injected_edges)
    out = EdgeBuffer(
        records=np.concatenate(chunks),
        user_ids=list(buffer.user_ids),
        product_ids=list(buffer.product_ids),
        lines=buffer.lines + injected_edges,
        rejected=buffer.rejected,
        duplicates=buffer.duplicates,
    )
    truth = AttackGroundTruth(
        attacks=attacks,
        meta={"rng_seed": rng_seed, "specs": [s.as_dict() for s in specs], "host_edges": buffer.num_edges},
    )
    return out, truth


def split_attacks(total, n_users, n_products, delta_t, modes, kappas=None):
    """Spread `total` attacks as evenly as possible over the given modes."""
    kappas = kappas or {}
    modes = [Mode(m) for m in modes]
    specs = []
    for index, mode in enumerate(modes):
        count = total // len(modes) + (1 if index < total % len(modes) else 0)
        specs.append(
            AttackSpec(
                n_users=n_users,
                n_products=n_products,
                delta_t=delta_t,
                mode=mode,
                kappa=kappas.get(mode, DEFAULT_KAPPA[mode]),
                count=count,
            )
        )
    return specs


def _timestamp_range(records):
    if not len(records):
        return 0, 0
    return int(records["timestamp"].min()), int(records["timestamp"].max())
