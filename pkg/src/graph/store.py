import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from src.config import DEFAULT_MEMORY_BUDGET, block_size_from_env
from src.errors import ConfigurationError, FormatError, ScanError
from src.graph.records import RECORD_DTYPE, RECORD_SIZE

logger = logging.getLogger(__name__)

MAGIC = b"ORFL"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHQ")
MANIFEST_NAME = "manifest.json"
USER_IDS_NAME = "user_ids.txt"
PRODUCT_IDS_NAME = "product_ids.txt"

PRODUCTS = "products"
USERS = "users"
_SIDE_KEYS = {PRODUCTS: "product", USERS: "user"}
_SIDE_PREFIX = {PRODUCTS: "shard", USERS: "mirror"}


@dataclass
class IOCounters:
    """Storage-layer instrumentation shared by every scan of a graph."""

    seeks: int = 0
    block_reads: int = 0
    bytes_read: int = 0

    def snapshot(self):
        return IOCounters(self.seeks, self.block_reads, self.bytes_read)

    def since(self, earlier):
        return IOCounters(
            self.seeks - earlier.seeks,
            self.block_reads - earlier.block_reads,
            self.bytes_read - earlier.bytes_read,
        )

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ShardInfo:
    """One shard file: a contiguous vertex range of one sort order."""

    file: str
    first: int
    last: int
    offset: int
    count: int

    @property
    def nbytes(self):
        return self.count * RECORD_SIZE


@dataclass(frozen=True)
class GraphStats:
    num_users: int
    num_products: int
    num_edges: int
    user_degree: dict
    product_degree: dict

    def as_dict(self):
        return asdict(self)


@dataclass
class BipartiteGraph:
    """Immutable on-disk graph: product-major shards plus a user-major mirror."""

    root: Path
    num_users: int
    num_products: int
    num_edges: int
    shards: list
    mirror_shards: list
    dataset_id: str
    block_size: int
    memory_budget: int
    source_hash: str = None
    ingest_params: dict = None
    counters: IOCounters = field(default_factory=IOCounters)
    _user_ids: list = field(default=None, init=False, repr=False)
    _product_ids: list = field(default=None, init=False, repr=False)

    @classmethod
    def open(cls, root):
        root = Path(root)
        manifest_path = root / MANIFEST_NAME
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest {manifest_path} is not valid JSON") from exc
        if manifest.get("format_version") != FORMAT_VERSION:
            raise FormatError(
                f"manifest {manifest_path} has format version "
                f"{manifest.get('format_version')}, expected {FORMAT_VERSION}"
            )
        return cls(
            root=root,
            num_users=manifest["num_users"],
            num_products=manifest["num_products"],
            num_edges=manifest["num_edges"],
            shards=[ShardInfo(**s) for s in manifest["shards"]],
            mirror_shards=[ShardInfo(**s) for s in manifest["mirror_shards"]],
            dataset_id=manifest["dataset_id"],
            block_size=manifest["block_size"],
            memory_budget=manifest["memory_budget"],
            source_hash=manifest.get("source_hash"),
            ingest_params=manifest.get("ingest_params"),
        )

    def built_from(self, source_hash, memory_budget, block_size, ingest_params=None):
        """True when this graph was preprocessed from the same source with the same parameters."""
        return (
            self.source_hash == source_hash
            and self.memory_budget == memory_budget
            and self.block_size == block_size
            and self.ingest_params == ingest_params
        )

    @property
    def dataset_bytes(self):
        return self.num_edges * RECORD_SIZE

    @property
    def num_blocks(self):
        """B: blocks needed to read one sort order of the dataset."""
        return math.ceil(self.dataset_bytes / self.block_size)

    @property
    def num_shards(self):
        """P: shard count of the larger of the two sort orders."""
        return max(len(self.shards), len(self.mirror_shards))

    def io_bounds(self):
        """Per-iteration (seeks, block reads) allowed by the cost model."""
        shards = self.num_shards
        return max(shards * shards, 2 * shards), 2 * self.num_blocks

    def user_ids(self):
        if self._user_ids is None:
            self._user_ids = _read_ids(self.root / USER_IDS_NAME)
        return self._user_ids

    def product_ids(self):
        if self._product_ids is None:
            self._product_ids = _read_ids(self.root / PRODUCT_IDS_NAME)
        return self._product_ids

    def shards_for(self, side):
        if side == PRODUCTS:
            return self.shards
        if side == USERS:
            return self.mirror_shards
        raise ValueError(f"unknown scan side {side!r}")

    def iter_shards(self, side, first=None, last=None):
        """Yield (ShardInfo, records) for every shard of one sort order.

        `first`/`last` restrict the scan to shards overlapping a contiguous
        vertex range, for callers that partition scans across workers.
        """
        shards = [
            s
            for s in self.shards_for(side)
            if (first is None or s.last >= first) and (last is None or s.first <= last)
        ]
        reader = _BlockReader(self.root, self.block_size, self.counters)
        yield from reader.read(shards)

    def scan_products(self, visitor, first=None, last=None):
        """Invoke visitor(product, adjacency) once per product with edges."""
        self._scan(PRODUCTS, visitor, first, last)

    def scan_users(self, visitor, first=None, last=None):
        """Invoke visitor(user, adjacency) once per user with edges."""
        self._scan(USERS, visitor, first, last)

    def _scan(self, side, visitor, first, last):
        for _, records in self.iter_shards(side, first, last):
            for vertex, adjacency in adjacency_groups(records, side):
                if first is not None and vertex < first:
                    continue
                if last is not None and vertex > last:
                    break
                try:
                    visitor(vertex, adjacency)
                except Exception as exc:
                    raise ScanError(f"visitor failed on {_SIDE_KEYS[side]} {vertex}") from exc

    def stats(self):
        return graph_stats(self)


class _BlockReader:
    """Reads shard payloads as one logical stream of fixed-size blocks."""

    def __init__(self, root, block_size, counters):
        self.root = Path(root)
        self.block_size = block_size
        self.counters = counters
        self._left_in_block = 0

    def read(self, shards):
        for shard in shards:
            path = self.root / shard.file
            with open(path, "rb") as handle:
                self.counters.seeks += 1
                _check_header(handle.read(HEADER.size), shard, path)
                chunks = []
                need = shard.nbytes
                while need:
                    if not self._left_in_block:
                        self.counters.block_reads += 1
                        self._left_in_block = self.block_size
                    take = min(need, self._left_in_block)
                    data = handle.read(take)
                    if len(data) != take:
                        raise FormatError(f"shard {path} is truncated")
                    chunks.append(data)
                    need -= take
                    self._left_in_block -= take
                    self.counters.bytes_read += take
            yield shard, np.frombuffer(b"".join(chunks), dtype=RECORD_DTYPE)


def adjacency_groups(records, side):
    """Split sorted shard records into (vertex, adjacency) runs."""
    if not len(records):
        return
    keys = records[_SIDE_KEYS[side]]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(keys)) + 1))
    ends = np.concatenate((starts[1:], [len(records)]))
    for start, end in zip(starts.tolist(), ends.tolist()):
        yield int(keys[start]), records[start:end]


def preprocess(
    buffer,
    out_dir,
    memory_budget=DEFAULT_MEMORY_BUDGET,
    block_size=None,
    source_hash=None,
    ingest_params=None,
):
    """Sort an EdgeBuffer into shard files under out_dir and write the manifest.

    Product-major shards are sorted by (product, user, timestamp, weight); the
    user-major mirror by (user, product, timestamp, weight). Shards break only
    at vertex boundaries and never exceed memory_budget bytes including the
    header. Output is a pure function of the input records and parameters.
    `source_hash` and `ingest_params` are recorded in the manifest so a rerun
    can tell whether the build is still current.
    """
    block_size = block_size or block_size_from_env()
    if memory_budget < 2 * block_size:
        raise ConfigurationError(
            f"memory budget {memory_budget} must be at least twice the block size {block_size}"
        )
    if memory_budget < HEADER.size + RECORD_SIZE:
        raise ConfigurationError(f"memory budget {memory_budget} cannot hold one shard")
    if not buffer.num_edges:
        raise ConfigurationError("cannot preprocess a graph with no edges")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stale in list(out_dir.glob("shard_*.bin")) + list(out_dir.glob("mirror_*.bin")):
        stale.unlink()

    records = buffer.records
    capacity = (memory_budget - HEADER.size) // RECORD_SIZE
    digest = hashlib.sha256()
    sides = {}
    for side, primary, secondary in ((PRODUCTS, "product", "user"), (USERS, "user", "product")):
        order = np.lexsort((records["weight"], records["timestamp"], records[secondary], records[primary]))
        ordered = records[order]
        sides[side] = _write_side(ordered, side, capacity, out_dir, digest)

    minimum = math.ceil(buffer.num_edges * RECORD_SIZE / memory_budget)
    if len(sides[PRODUCTS]) > minimum:
        logger.info(
            "vertex boundaries forced %d product shards (lower bound %d)",
            len(sides[PRODUCTS]),
            minimum,
        )

    _write_ids(out_dir / USER_IDS_NAME, buffer.user_ids)
    _write_ids(out_dir / PRODUCT_IDS_NAME, buffer.product_ids)

    manifest = {
        "format_version": FORMAT_VERSION,
        "num_users": buffer.num_users,
        "num_products": buffer.num_products,
        "num_edges": buffer.num_edges,
        "record_size": RECORD_SIZE,
        "block_size": block_size,
        "memory_budget": memory_budget,
        "dataset_id": digest.hexdigest(),
        "source_hash": source_hash,
        "ingest_params": ingest_params,
        "shards": [asdict(s) for s in sides[PRODUCTS]],
        "mirror_shards": [asdict(s) for s in sides[USERS]],
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(
        "preprocessed %d edges into %d product shards and %d mirror shards",
        buffer.num_edges,
        len(sides[PRODUCTS]),
        len(sides[USERS]),
    )
    return BipartiteGraph.open(out_dir)


def _write_side(ordered, side, capacity, out_dir, digest):
    keys = ordered[_SIDE_KEYS[side]]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(keys)) + 1))
    ends = np.concatenate((starts[1:], [len(ordered)]))

    shards = []
    shard_start = 0
    for start, end in zip(starts.tolist(), ends.tolist()):
        if end - start > capacity:
            raise ConfigurationError(
                f"{_SIDE_KEYS[side]} {int(keys[start])} has {end - start} edges, "
                f"more than one shard holds ({capacity})"
            )
        if end - shard_start > capacity:
            shards.append(_write_shard(ordered, shard_start, start, side, len(shards), out_dir, digest))
            shard_start = start
    shards.append(_write_shard(ordered, shard_start, len(ordered), side, len(shards), out_dir, digest))
    return shards


def _write_shard(ordered, start, end, side, index, out_dir, digest):
    chunk = ordered[start:end]
    name = f"{_SIDE_PREFIX[side]}_{index:04d}.bin"
    header = HEADER.pack(MAGIC, FORMAT_VERSION, len(chunk))
    payload = chunk.tobytes()
    with open(out_dir / name, "wb") as handle:
        handle.write(header)
        handle.write(payload)
    digest.update(header)
    digest.update(payload)
    keys = chunk[_SIDE_KEYS[side]]
    return ShardInfo(
        file=name,
        first=int(keys[0]),
        last=int(keys[-1]),
        offset=start * RECORD_SIZE,
        count=len(chunk),
    )


def _check_header(raw, shard, path):
    if len(raw) != HEADER.size:
        raise FormatError(f"shard {path} has no header")
    magic, version, count = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"shard {path} has bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"shard {path} has format version {version}")
    if count != shard.count:
        raise FormatError(f"shard {path} holds {count} records, manifest says {shard.count}")


def _write_ids(path, ids):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for identifier in ids:
            handle.write(f"{identifier}\n")


def _read_ids(path):
    with open(path, encoding="utf-8", newline="\n") as handle:
        return [line.rstrip("\n") for line in handle]


def _degree_summary(degrees):
    nonzero = degrees[degrees > 0]
    if not len(nonzero):
        return {"vertices": 0, "min": 0, "max": 0, "mean": 0.0, "median": 0.0}
    return {
        "vertices": int(len(nonzero)),
        "min": int(nonzero.min()),
        "max": int(nonzero.max()),
        "mean": float(nonzero.mean()),
        "median": float(np.median(nonzero)),
    }


def graph_stats(graph):
    """Exact counts plus degree summaries, computed by scanning both sides."""
    product_degree = np.zeros(graph.num_products, dtype=np.int64)
    user_degree = np.zeros(graph.num_users, dtype=np.int64)

    def count_product(product, adjacency):
        product_degree[product] = len(adjacency)

    def count_user(user, adjacency):
        user_degree[user] = len(adjacency)

    graph.scan_products(count_product)
    graph.scan_users(count_user)
    return GraphStats(
        num_users=graph.num_users,
        num_products=graph.num_products,
        num_edges=graph.num_edges,
        user_degree=_degree_summary(user_degree),
        product_degree=_degree_summary(product_degree),
    )


def file_hash(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()
