"""Parsing, filtering, time-binning, and splitting of rating and trust data.

Raw dumps are delimiter-separated text files described by a small
:class:`TableFormat`. Timestamps are integer days since 1970-01-01
throughout. Binning assigns a record with timestamp tau to bin
``#{cutoffs <= tau}``, so ``len(cutoffs) + 1`` bins cover the whole line.
Trust graphs are cumulative: an edge enters at its creation bin and persists
in every later bin.

The canonical on-disk dataset is a directory of sorted text files
(ratings_bin_<t>.tsv, trust_bin_<t>.tsv, users.map, items.map, meta.txt),
written deterministically so that two runs over the same inputs diff clean.
"""

from __future__ import annotations

import datetime
import logging
import math
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .domain import RatingsTimeline, TrustTimeline

logger = logging.getLogger(__name__)

_EPOCH = datetime.date(1970, 1, 1)

_RATING_COLUMNS = ("user", "item", "value", "date")
_TRUST_COLUMNS = ("user_a", "user_b", "date")


class DataFormatError(ValueError):
    """Raised when an input file cannot be used as data."""


@dataclass(frozen=True)
class TableFormat:
    """Shape of a delimiter-separated input file.

    ``columns`` names each field position; ``None`` selects the default
    order for the parser at hand. ``date_format`` is "iso" for ISO dates,
    "days" for integer days since the epoch, or any strptime pattern.
    """

    delimiter: str = "\t"
    columns: Optional[tuple[str, ...]] = None
    date_format: str = "iso"


@dataclass(frozen=True)
class RawRating:
    user_id: str
    item_id: str
    value: float
    timestamp: int


@dataclass(frozen=True)
class RawTrustEdge:
    user_a: str
    user_b: str
    timestamp: int


def _parse_date(token: str, date_format: str) -> int:
    if date_format == "days":
        return int(token)
    if date_format == "iso":
        day = datetime.date.fromisoformat(token.strip())
    else:
        day = datetime.datetime.strptime(token.strip(), date_format).date()
    return (day - _EPOCH).days


def _parse_table(path, fmt: TableFormat, default_columns, required):
    columns = fmt.columns if fmt.columns is not None else default_columns
    missing = set(required) - set(columns)
    if missing:
        raise DataFormatError(f"format columns {columns} lack required fields {sorted(missing)}")
    index = {name: columns.index(name) for name in required}
    rows = []
    malformed = 0
    first_bad: list[int] = []
    total = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            total += 1
            fields = line.split(fmt.delimiter)
            if len(fields) != len(columns):
                malformed += 1
                if len(first_bad) < 5:
                    first_bad.append(line_no)
                continue
            rows.append(tuple(fields[index[name]] for name in required))
    return rows, malformed, first_bad, total


def _finish_parse(path, parsed, convert):
    rows, malformed, first_bad, total = parsed
    records = []
    for raw in rows:
        try:
            records.append(convert(raw))
        except (ValueError, OverflowError):
            malformed += 1
    if total and malformed > total / 2:
        raise DataFormatError(
            f"{path}: {malformed} of {total} rows are malformed "
            f"(first bad lines: {first_bad or 'value errors'})"
        )
    if malformed:
        logger.warning("%s: skipped %d malformed rows of %d", path, malformed, total)
    return records


def parse_ratings(path, fmt: TableFormat = TableFormat()) -> list[RawRating]:
    """Read ratings (user, item, value, date) from a delimited text file.

    Well-formed rows come back in file order. Malformed rows are counted
    and logged; more than half malformed raises :class:`DataFormatError`.
    """
    parsed = _parse_table(path, fmt, _RATING_COLUMNS, _RATING_COLUMNS)

    def convert(raw):
        user, item, value, date = raw
        v = float(value)
        if not math.isfinite(v):
            raise ValueError("non-finite rating")
        return RawRating(user, item, v, _parse_date(date, fmt.date_format))

    return _finish_parse(path, parsed, convert)


def parse_trust(path, fmt: TableFormat = TableFormat()) -> list[RawTrustEdge]:
    """Read trust edges (user_a, user_b, date) from a delimited text file.

    Undirected duplicates collapse to one edge keeping the earliest date;
    self-loops are dropped. Malformed handling matches :func:`parse_ratings`.
    """
    parsed = _parse_table(path, fmt, _TRUST_COLUMNS, _TRUST_COLUMNS)

    def convert(raw):
        a, b, date = raw
        return RawTrustEdge(a, b, _parse_date(date, fmt.date_format))

    records = _finish_parse(path, parsed, convert)
    earliest: dict[tuple[str, str], RawTrustEdge] = {}
    self_loops = 0
    for edge in records:
        if edge.user_a == edge.user_b:
            self_loops += 1
            continue
        key = (edge.user_a, edge.user_b) if edge.user_a < edge.user_b else (edge.user_b, edge.user_a)
        kept = earliest.get(key)
        if kept is None or edge.timestamp < kept.timestamp:
            earliest[key] = RawTrustEdge(key[0], key[1], edge.timestamp)
    if self_loops:
        logger.warning("%s: dropped %d self-loop edges", path, self_loops)
    return list(earliest.values())


def filter_min_ratings(ratings: Sequence[RawRating], threshold: int) -> list[RawRating]:
    """Keep only users with strictly more than ``threshold`` ratings."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    counts = Counter(r.user_id for r in ratings)
    return [r for r in ratings if counts[r.user_id] > threshold]


def bin_timelines(
    ratings: Sequence[RawRating],
    edges: Sequence[RawTrustEdge],
    cutoffs: Sequence[int],
) -> tuple[RatingsTimeline, TrustTimeline, dict[str, int], dict[str, int]]:
    """Bin ratings and trust edges into ``len(cutoffs) + 1`` time bins.

    Users and items are mapped to dense indices in lexicographic id order.
    Within a bin, duplicate (user, item) pairs keep the latest rating.
    Trust graphs are cumulative with binary weights; edges touching users
    outside the (post-filter) rating universe are dropped.

    Returns
    -------
    (RatingsTimeline, TrustTimeline, user_map, item_map)
    """
    cutoffs = [int(c) for c in cutoffs]
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ValueError(f"cutoffs must be strictly increasing, got {cutoffs}")
    if not ratings:
        raise DataFormatError("no ratings left after filtering")
    N = len(cutoffs) + 1

    user_ids = sorted({r.user_id for r in ratings})
    item_ids = sorted({r.item_id for r in ratings})
    user_map = {uid: i for i, uid in enumerate(user_ids)}
    item_map = {iid: j for j, iid in enumerate(item_ids)}
    m, n = len(user_ids), len(item_ids)

    # Latest rating wins within a bin; later file order breaks timestamp ties.
    latest: list[dict[tuple[int, int], tuple[int, int, float]]] = [{} for _ in range(N)]
    for order, r in enumerate(ratings):
        t = bisect_right(cutoffs, r.timestamp)
        key = (user_map[r.user_id], item_map[r.item_id])
        kept = latest[t].get(key)
        if kept is None or (r.timestamp, order) > (kept[0], kept[1]):
            latest[t][key] = (r.timestamp, order, r.value)
    bins = []
    for t in range(N):
        entries = sorted(latest[t].items())
        users = np.array([u for (u, _), _ in entries], dtype=np.int64)
        items = np.array([i for (_, i), _ in entries], dtype=np.int64)
        values = np.array([rec[2] for _, rec in entries], dtype=np.float64)
        bins.append((users, items, values))
    timeline = RatingsTimeline(m, n, bins)

    created: list[list[tuple[int, int]]] = [[] for _ in range(N)]
    dropped = 0
    for e in edges:
        a = user_map.get(e.user_a)
        b = user_map.get(e.user_b)
        if a is None or b is None:
            dropped += 1
            continue
        created[bisect_right(cutoffs, e.timestamp)].append((a, b))
    if dropped:
        logger.warning("dropped %d trust edges with endpoints outside the user universe", dropped)
    graphs = []
    cumulative: list[tuple[int, int]] = []
    for t in range(N):
        cumulative = cumulative + created[t]
        if cumulative:
            arr = np.asarray(cumulative, dtype=np.int64)
            rows = np.concatenate([arr[:, 0], arr[:, 1]])
            cols = np.concatenate([arr[:, 1], arr[:, 0]])
            W = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(m, m))
        else:
            W = sp.csr_matrix((m, m))
        graphs.append(W)
    trust = TrustTimeline(m, graphs)
    return timeline, trust, user_map, item_map


@dataclass(frozen=True)
class SplitTimeline:
    """A per-bin train/test partition of one ratings timeline."""

    train: RatingsTimeline
    test: RatingsTimeline
    seed: int

    def __post_init__(self) -> None:
        a, b = self.train, self.test
        if (a.m, a.n, a.N) != (b.m, b.n, b.N):
            raise ValueError("train and test halves disagree on (m, n, N)")


def split_train_test(timeline: RatingsTimeline, fraction: float, seed: int) -> SplitTimeline:
    """Split every bin into train/test uniformly at random.

    The training half of bin t gets ``ceil(fraction * p_t)`` observations.
    The same (timeline, fraction, seed) always produces the same split; a
    single generator is consumed in bin order.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train_bins = []
    test_bins = []
    for t in range(timeline.N):
        users, items, values = timeline.bin(t)
        p = users.size
        if p == 0:
            logger.warning("bin %d is empty; both halves will be empty", t)
            empty = (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
            train_bins.append(empty)
            test_bins.append(empty)
            continue
        perm = rng.permutation(p)
        n_train = math.ceil(fraction * p)
        tr = np.sort(perm[:n_train])
        te = np.sort(perm[n_train:])
        train_bins.append((users[tr], items[tr], values[tr]))
        test_bins.append((users[te], items[te], values[te]))
    train = RatingsTimeline(timeline.m, timeline.n, train_bins)
    test = RatingsTimeline(timeline.m, timeline.n, test_bins)
    return SplitTimeline(train=train, test=test, seed=seed)


def merge_split(split: SplitTimeline) -> RatingsTimeline:
    """Recombine a split into one timeline with canonical bin order."""
    bins = []
    for t in range(split.train.N):
        u = np.concatenate([split.train.users[t], split.test.users[t]])
        i = np.concatenate([split.train.items[t], split.test.items[t]])
        v = np.concatenate([split.train.values[t], split.test.values[t]])
        order = np.lexsort((i, u))
        bins.append((u[order], i[order], v[order]))
    return RatingsTimeline(split.train.m, split.train.n, bins)


# Canonical dataset directory ------------------------------------------------

def save_dataset(
    directory,
    ratings: RatingsTimeline,
    trust: TrustTimeline,
    user_map: dict[str, int],
    item_map: dict[str, int],
) -> None:
    """Write the canonical binned dataset directory.

    Layout: ratings_bin_<t>.tsv (user, item, value on dense indices, sorted),
    trust_bin_<t>.tsv (cumulative edges a < b, sorted), users.map and
    items.map (id to index), meta.txt (m, n, N, per-bin counts).
    """
    if ratings.N != trust.N or ratings.m != trust.m:
        raise ValueError("ratings and trust timelines disagree on (m, N)")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, mapping in (("users.map", user_map), ("items.map", item_map)):
        with open(directory / name, "w", encoding="utf-8") as fh:
            for key, idx in sorted(mapping.items(), key=lambda kv: kv[1]):
                fh.write(f"{key}\t{idx}\n")
    for t in range(ratings.N):
        users, items, values = ratings.bin(t)
        order = np.lexsort((items, users))
        with open(directory / f"ratings_bin_{t}.tsv", "w") as fh:
            for idx in order:
                fh.write(f"{users[idx]}\t{items[idx]}\t{values[idx]:.17g}\n")
        rows, cols = trust.edges(t)
        edge_order = np.lexsort((cols, rows))
        with open(directory / f"trust_bin_{t}.tsv", "w") as fh:
            for idx in edge_order:
                fh.write(f"{rows[idx]}\t{cols[idx]}\n")
    with open(directory / "meta.txt", "w") as fh:
        fh.write(f"m={ratings.m}\n")
        fh.write(f"n={ratings.n}\n")
        fh.write(f"N={ratings.N}\n")
        fh.write("p=" + ",".join(str(c) for c in ratings.counts) + "\n")


def load_dataset(directory) -> tuple[RatingsTimeline, TrustTimeline, dict[str, int], dict[str, int]]:
    """Read a dataset directory written by :func:`save_dataset`."""
    directory = Path(directory)
    meta_path = directory / "meta.txt"
    if not meta_path.exists():
        raise DataFormatError(f"{directory} has no meta.txt; not a dataset directory")
    meta: dict[str, str] = {}
    for line in meta_path.read_text().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    try:
        m, n, N = int(meta["m"]), int(meta["n"]), int(meta["N"])
        counts = [int(c) for c in meta["p"].split(",")] if meta.get("p") else []
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{meta_path}: bad metadata ({exc})")

    def read_map(name):
        mapping: dict[str, int] = {}
        with open(directory / name, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                key, _, idx = line.rpartition("\t")
                mapping[key] = int(idx)
        return mapping

    user_map = read_map("users.map")
    item_map = read_map("items.map")

    bins = []
    for t in range(N):
        path = directory / f"ratings_bin_{t}.tsv"
        if path.stat().st_size:
            data = np.loadtxt(path, delimiter="\t", ndmin=2)
        else:
            data = np.empty((0, 3))
        bins.append((data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2]))
        if counts and data.shape[0] != counts[t]:
            raise DataFormatError(f"{path}: has {data.shape[0]} rows, meta.txt says {counts[t]}")
    ratings = RatingsTimeline(m, n, bins)

    graphs = []
    for t in range(N):
        path = directory / f"trust_bin_{t}.tsv"
        if path.stat().st_size:
            pairs = np.loadtxt(path, delimiter="\t", dtype=np.int64, ndmin=2)
            rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
            cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
            W = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(m, m))
        else:
            W = sp.csr_matrix((m, m))
        graphs.append(W)
    trust = TrustTimeline(m, graphs)
    return ratings, trust, user_map, item_map
