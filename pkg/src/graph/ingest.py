import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from src.errors import IngestError
from src.graph.records import RECORD_DTYPE, empty_records

logger = logging.getLogger(__name__)

MAX_REJECTED_FRACTION = 0.10
MAX_RATING = 255


@dataclass(frozen=True)
class EdgeSchema:
    """Column positions and separator of an edge-list text file."""

    user: int = 0
    product: int = 1
    timestamp: int = 2
    rating: int = 3
    separator: str = ","
    header: bool = False

    @classmethod
    def from_columns(cls, columns, separator=",", header=False):
        """Build a schema from a "user,product,timestamp,rating" index string."""
        try:
            user, product, timestamp, rating = (int(c) for c in str(columns).split(","))
        except ValueError as exc:
            raise IngestError(f"column mapping {columns!r} needs four integers") from exc
        return cls(user, product, timestamp, rating, separator, header)

    @property
    def positions(self):
        return [self.user, self.product, self.timestamp, self.rating]


@dataclass
class EdgeBuffer:
    """Densely renumbered edges plus the id dictionaries of both sides."""

    records: np.ndarray
    user_ids: list = field(default_factory=list)
    product_ids: list = field(default_factory=list)
    lines: int = 0
    rejected: int = 0
    duplicates: int = 0

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_products(self):
        return len(self.product_ids)

    @property
    def num_edges(self):
        return len(self.records)

    def summary(self):
        return {
            "users": self.num_users,
            "products": self.num_products,
            "edges": self.num_edges,
            "lines": self.lines,
            "rejected": self.rejected,
            "duplicates": self.duplicates,
        }


def ingest(source, schema=None, max_rejected_fraction=MAX_REJECTED_FRACTION):
    """Parse an edge list into an EdgeBuffer.

    `source` is a path or a text stream. String ids are renumbered to 0-based
    ordinals per side in order of first appearance. Lines that are malformed
    or carry a rating outside 1..255 are rejected and counted; exact duplicate
    lines are dropped and counted; re-reviews of the same (user, product) pair
    with a different timestamp or rating are kept as separate records.
    """
    schema = schema or EdgeSchema()
    bad_lines = []

    def on_bad_line(fields):
        bad_lines.append(fields)
        return None

    try:
        frame = pd.read_csv(
            _source_argument(source),
            encoding="utf-8",
            sep=schema.separator,
            header=None,
            skiprows=1 if schema.header else 0,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            engine="python",
            on_bad_lines=on_bad_line,
        )
    except pd.errors.EmptyDataError:
        logger.warning("edge list %s is empty", _describe(source))
        return EdgeBuffer(empty_records())
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read edge list {_describe(source)}: {exc}") from exc

    if frame.shape[1] <= max(schema.positions):
        raise IngestError(
            f"edge list has {frame.shape[1]} columns, schema needs column {max(schema.positions)}"
        )

    columns = frame.iloc[:, schema.positions].copy()
    columns.columns = ["user", "product", "timestamp", "rating"]
    users = columns["user"].str.strip()
    products = columns["product"].str.strip()
    timestamps = pd.to_numeric(columns["timestamp"].str.strip(), errors="coerce")
    ratings = pd.to_numeric(columns["rating"].str.strip(), errors="coerce")

    valid = (
        users.notna()
        & (users != "")
        & products.notna()
        & (products != "")
        & timestamps.notna()
        & (timestamps >= 0)
        & ratings.notna()
        & (ratings >= 1)
        & (ratings <= MAX_RATING)
        & (ratings == np.floor(ratings))
    )

    lines = len(frame) + len(bad_lines)
    rejected = int((~valid).sum()) + len(bad_lines)
    if lines and rejected / lines > max_rejected_fraction:
        raise IngestError(
            f"{rejected} of {lines} lines rejected in {_describe(source)} "
            f"(limit {max_rejected_fraction:.0%})"
        )
    if rejected:
        logger.warning("rejected %d of %d malformed lines", rejected, lines)

    kept = pd.DataFrame(
        {
            "user": users[valid],
            "product": products[valid],
            "timestamp": _whole_seconds(timestamps[valid]),
            "weight": ratings[valid].astype(np.uint8),
        }
    )
    before = len(kept)
    kept = kept.drop_duplicates(ignore_index=True)
    duplicates = before - len(kept)
    if duplicates:
        logger.info("dropped %d exact duplicate lines", duplicates)

    user_codes, user_ids = pd.factorize(kept["user"], sort=False)
    product_codes, product_ids = pd.factorize(kept["product"], sort=False)

    records = np.empty(len(kept), dtype=RECORD_DTYPE)
    records["user"] = user_codes
    records["product"] = product_codes
    records["timestamp"] = kept["timestamp"].to_numpy()
    records["weight"] = kept["weight"].to_numpy()

    if not len(records):
        logger.warning("edge list %s holds no usable edges", _describe(source))

    return EdgeBuffer(
        records=records,
        user_ids=[str(u) for u in user_ids],
        product_ids=[str(p) for p in product_ids],
        lines=lines,
        rejected=rejected,
        duplicates=duplicates,
    )


def write_edges(buffer, path, separator=","):
    """Write an EdgeBuffer back out in the edge-list text format."""
    records = buffer.records
    user_ids = np.asarray(buffer.user_ids, dtype=object)
    product_ids = np.asarray(buffer.product_ids, dtype=object)
    frame = pd.DataFrame(
        {
            "user": user_ids[records["user"]],
            "product": product_ids[records["product"]],
            "timestamp": records["timestamp"],
            "rating": records["weight"].astype(int),
        }
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep=separator, header=False, index=False, lineterminator="\n")
    return path


def _source_argument(source):
    if isinstance(source, (str, Path)):
        return str(source)
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        return source
    raise IngestError(f"unsupported edge list source {source!r}")


def _describe(source):
    return str(source) if isinstance(source, (str, Path)) else "<stream>"


def _whole_seconds(timestamps):
    # sub-second precision is truncated
    if timestamps.dtype.kind == "f":
        timestamps = np.floor(timestamps)
    return timestamps.astype(np.uint64)
