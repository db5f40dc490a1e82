"""Continuous-time dynamic graph data: event logs, splits, neighborhoods, generators."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


class IngestError(ValueError):
    """Malformed or empty event file."""


@dataclass(frozen=True)
class EdgeEvent:
    src: int
    dst: int
    t: float
    features: np.ndarray
    label: int | None
    seq: int


class EventLog:
    """Chronologically sorted interaction records over a dense node id space.

    Arrays are stored column-wise. Slicing returns a view sharing the same
    columns, so chronological splits cost nothing.
    """

    def __init__(self, src, dst, t, features=None, labels=None, seq=None,
                 num_nodes: int | None = None, num_sources: int | None = None,
                 check: bool = True):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.float64)
        n = len(self.src)
        if features is None:
            features = np.zeros((n, 0))
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            features = features.reshape(n, -1) if n else features.reshape(0, 0)
        self.features = features
        self.labels = (np.full(n, -1, dtype=np.int64) if labels is None
                       else np.asarray(labels, dtype=np.int64))
        self.seq = np.arange(n, dtype=np.int64) if seq is None else np.asarray(seq, dtype=np.int64)
        if num_nodes is None:
            num_nodes = int(max(self.src.max(initial=-1), self.dst.max(initial=-1)) + 1)
        self.num_nodes = int(num_nodes)
        self.num_sources = num_sources
        if check:
            self.validate()

    @classmethod
    def from_unsorted(cls, src, dst, t, features=None, labels=None, **kw) -> "EventLog":
        """Sort by (t, original position) and number ``seq`` by original position."""
        t = np.asarray(t, dtype=np.float64)
        order = np.lexsort((np.arange(len(t)), t))
        take = lambda a: None if a is None else np.asarray(a)[order]  # noqa: E731
        return cls(take(np.asarray(src)), take(np.asarray(dst)), t[order], take(features),
                   take(labels), seq=order, **kw)

    def validate(self) -> None:
        n = len(self.src)
        if not (len(self.dst) == len(self.t) == len(self.labels) == len(self.seq) == n
                and self.features.shape[0] == n):
            raise ValueError("EventLog columns have different lengths")
        if n and (self.t < 0).any():
            raise ValueError("EventLog timestamps must be non-negative")
        if n > 1:
            dt = np.diff(self.t)
            bad = (dt < 0) | ((dt == 0) & (np.diff(self.seq) <= 0))
            if bad.any():
                raise ValueError(f"EventLog not sorted at position {int(np.argmax(bad)) + 1}")
        if n and max(self.src.max(), self.dst.max()) >= self.num_nodes:
            raise ValueError("EventLog references a node id >= num_nodes")
        if n and min(self.src.min(), self.dst.min()) < 0:
            raise ValueError("EventLog references a negative node id")

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.src)

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            label = int(self.labels[key])
            return EdgeEvent(int(self.src[key]), int(self.dst[key]), float(self.t[key]),
                             self.features[key], None if label < 0 else label, int(self.seq[key]))
        if isinstance(key, slice):
            return self._subset(key)
        key = np.asarray(key)
        if key.dtype == bool:
            key = np.flatnonzero(key)
        return self._subset(np.sort(key))

    def __iter__(self) -> Iterator[EdgeEvent]:
        for i in range(len(self)):
            yield self[i]

    def _subset(self, key) -> "EventLog":
        return EventLog(self.src[key], self.dst[key], self.t[key], self.features[key],
                        self.labels[key], self.seq[key], num_nodes=self.num_nodes,
                        num_sources=self.num_sources, check=False)

    def nodes(self) -> np.ndarray:
        return np.union1d(self.src, self.dst)

    def batches(self, size: int) -> Iterator["EventLog"]:
        for start in range(0, len(self), size):
            yield self[start:start + size]

    def has_labels(self) -> bool:
        return bool((self.labels >= 0).any())


def concat_logs(logs: Iterable[EventLog]) -> EventLog:
    logs = list(logs)
    first = logs[0]
    return EventLog(np.concatenate([g.src for g in logs]), np.concatenate([g.dst for g in logs]),
                    np.concatenate([g.t for g in logs]), np.concatenate([g.features for g in logs]),
                    np.concatenate([g.labels for g in logs]), np.concatenate([g.seq for g in logs]),
                    num_nodes=first.num_nodes, num_sources=first.num_sources)


# ------------------------------------------------------------------ ingestion

def ingest_csv(path) -> EventLog:
    """Read ``user_id,item_id,timestamp,state_label,f0,...`` rows.

    Users map to ``[0, #users)`` and items to ``[#users, #users + #items)``,
    each in ascending raw-id order. The header line is skipped unread.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) is None:
            raise IngestError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if width is None:
                width = len(row)
                if width < 4:
                    raise IngestError(f"{path}: line {lineno}: expected at least 4 columns, got {width}")
            elif len(row) != width:
                raise IngestError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
            try:
                user, item = int(row[0]), int(row[1])
                ts = float(row[2])
                label = int(float(row[3]))
                feats = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise IngestError(f"{path}: line {lineno}: non-numeric value ({exc})") from None
            if label not in (0, 1):
                raise IngestError(f"{path}: line {lineno}: state_label must be 0 or 1, got {row[3]}")
            if ts < 0 or not math.isfinite(ts):
                raise IngestError(f"{path}: line {lineno}: bad timestamp {row[2]}")
            rows.append((user, item, ts, label, feats))
    if not rows:
        raise IngestError(f"{path}: no events after header")

    users = np.array([r[0] for r in rows])
    items = np.array([r[1] for r in rows])
    uniq_users, user_idx = np.unique(users, return_inverse=True)
    uniq_items, item_idx = np.unique(items, return_inverse=True)
    return EventLog.from_unsorted(
        user_idx, item_idx + len(uniq_users), [r[2] for r in rows],
        np.array([r[4] for r in rows], dtype=np.float64).reshape(len(rows), width - 4),
        [r[3] for r in rows], num_nodes=len(uniq_users) + len(uniq_items),
        num_sources=len(uniq_users))


def write_csv(log: EventLog, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "item_id", "timestamp", "state_label"]
                   + [f"f{i}" for i in range(log.feat_dim)])
        for e in log:
            w.writerow([e.src, e.dst, repr(e.t), 0 if e.label is None else e.label]
                       + [repr(float(v)) for v in e.features])


# ------------------------------------------------------------------ splitting

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    inductive_mask_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.train_fraction < 0 or self.val_fraction < 0 \
                or self.train_fraction + self.val_fraction > 1 + 1e-12:
            raise ValueError("split fractions must be non-negative and sum to at most 1")
        if not 0 <= self.inductive_mask_fraction < 1:
            raise ValueError("inductive_mask_fraction must lie in [0, 1)")


def _floor_frac(frac: float, n: int) -> int:
    return int(math.floor(frac * n + 1e-9))


def chronological_split(log: EventLog, spec: SplitSpec = SplitSpec()) -> tuple[EventLog, EventLog, EventLog]:
    n = len(log)
    if n < 3:
        raise ValueError(f"chronological_split needs at least 3 events, got {n}")
    n_train = _floor_frac(spec.train_fraction, n)
    n_val = _floor_frac(spec.val_fraction, n)
    return log[:n_train], log[n_train:n_train + n_val], log[n_train + n_val:]


def mask_inductive_nodes(train: EventLog, fraction: float, seed: int,
                         candidates: Iterable[int] = ()) -> tuple[EventLog, frozenset[int]]:
    """Hide a seeded sample of ``candidates`` (nodes of val and test) from training.

    The sample size is ``round(fraction * len(candidates))``; every train event
    touching a sampled node is dropped.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    pool = np.unique(np.fromiter(candidates, dtype=np.int64))
    k = int(round(fraction * len(pool)))
    if k == 0:
        return train, frozenset()
    rng = np.random.default_rng(seed)
    unseen = np.sort(rng.choice(pool, size=k, replace=False))
    touched = np.isin(train.src, unseen) | np.isin(train.dst, unseen)
    return train[~touched], frozenset(int(u) for u in unseen)


@dataclass
class DataSplits:
    full: EventLog
    train: EventLog
    val: EventLog
    test: EventLog
    unseen: frozenset[int]

    @property
    def eval_log(self) -> EventLog:
        return concat_logs([self.val, self.test])


def prepare_splits(log: EventLog, spec: SplitSpec = SplitSpec()) -> DataSplits:
    train, val, test = chronological_split(log, spec)
    candidates = np.union1d(val.nodes(), test.nodes())
    train_masked, unseen = mask_inductive_nodes(train, spec.inductive_mask_fraction, spec.seed,
                                                candidates)
    return DataSplits(log, train_masked, val, test, unseen)


# ------------------------------------------------------------- neighborhoods

class TemporalNeighborhoodStore:
    """Per-node time-sorted adjacency in CSR layout.

    Both endpoints of every event record it (a self-loop is recorded once).
    ``event_index`` refers to positions in the log the store was built from.
    """

    def __init__(self, log: EventLog):
        self.log = log
        n = len(log)
        idx = np.arange(n)
        loop = log.src == log.dst
        owner = np.concatenate([log.src, log.dst[~loop]])
        other = np.concatenate([log.dst, log.src[~loop]])
        eidx = np.concatenate([idx, idx[~loop]])
        order = np.lexsort((eidx, owner))  # per owner, log order == (t, seq) order
        self.neighbor = other[order]
        self.event_index = eidx[order]
        self.times = log.t[self.event_index]
        counts = np.bincount(owner, minlength=log.num_nodes)
        self.indptr = np.concatenate([[0], np.cumsum(counts)])
        self.num_nodes = log.num_nodes

    def history(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not 0 <= i < self.num_nodes:
            empty = np.zeros(0, dtype=np.int64)
            return empty, np.zeros(0), empty
        a, b = self.indptr[i], self.indptr[i + 1]
        return self.neighbor[a:b], self.times[a:b], self.event_index[a:b]

    def neighbors_before(self, i: int, t: float, limit: int | None = None) -> list[tuple[int, float, int]]:
        """The ``limit`` latest (neighbor, time, event_index) with time < t, newest first."""
        if limit is not None and limit < 1:
            raise ValueError("limit must be >= 1")
        nbr, ts, ev = self.history(i)
        stop = int(np.searchsorted(ts, t, side="left"))
        start = 0 if limit is None else max(0, stop - limit)
        return [(int(nbr[k]), float(ts[k]), int(ev[k])) for k in range(stop - 1, start - 1, -1)]

    def recent_batch(self, nodes: np.ndarray, times: np.ndarray, limit: int):
        """Padded arrays ``[len(nodes), limit]`` of the newest strict-past neighbors.

        Returns (neighbor, time, event_index, mask); column 0 is the newest.
        """
        q = len(nodes)
        nbr = np.zeros((q, limit), dtype=np.int64)
        ts = np.zeros((q, limit))
        ev = np.zeros((q, limit), dtype=np.int64)
        mask = np.zeros((q, limit), dtype=bool)
        for r in range(q):
            i = int(nodes[r])
            if not 0 <= i < self.num_nodes:
                continue
            a, b = self.indptr[i], self.indptr[i + 1]
            stop = a + int(np.searchsorted(self.times[a:b], times[r], side="left"))
            start = max(a, stop - limit)
            k = stop - start
            if k:
                sl = slice(stop - 1, start - 1 if start > 0 else None, -1)
                nbr[r, :k] = self.neighbor[sl]
                ts[r, :k] = self.times[sl]
                ev[r, :k] = self.event_index[sl]
                mask[r, :k] = True
        return nbr, ts, ev, mask


def neighbors_before(store: TemporalNeighborhoodStore, i: int, t: float,
                     limit: int | None = None) -> list[tuple[int, float, int]]:
    return store.neighbors_before(i, t, limit)


# ------------------------------------------------------------------ sampling

def sample_negatives(batch_size: int, n_neg: int, candidate_pool, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws with replacement; a draw may equal the true destination."""
    pool = np.asarray(sorted(candidate_pool), dtype=np.int64)
    if len(pool) == 0:
        raise ValueError("negative candidate pool is empty")
    return pool[rng.integers(0, len(pool), size=(batch_size, n_neg))]


# ---------------------------------------------------------------- generators

@dataclass(frozen=True)
class SyntheticSpec:
    generator: str = "recurrent_bipartite"
    sources: int = 50
    targets: int = 100
    events: int = 2000
    period: int = 2
    jitter: float = 0.25
    label_threshold: int = 36
    seed: int = 0

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "SyntheticSpec":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in kinds:
                raise KeyError(f"unknown synthetic spec key {key!r}")
            kind = kinds[key]
            values[key] = raw if kind == "str" else (float(raw) if kind == "float" else int(raw))
        return cls(**values)

    def as_dict(self) -> dict:
        return asdict(self)


def gen_symmetric_cycle() -> EventLog:
    """Four nodes on a cycle where swapping 0<->2 and 1<->3 is an automorphism."""
    return EventLog.from_unsorted([0, 2, 2, 0], [1, 1, 3, 3], [1.0, 2.0, 1.0, 2.0], num_nodes=4)


def gen_recurrent_bipartite(spec: SyntheticSpec = SyntheticSpec()) -> EventLog:
    """Sources cycling through private target sets at unit time steps.

    Source ``s`` owns targets ``sources + s*period ... + period - 1`` and at
    step ``k`` hits the ``(offset_s + k) mod period``-th of them, at time
    ``k + 1 + jitter``. Labels mark events whose source has already made
    more than ``label_threshold`` interactions.
    """
    if spec.sources < 1 or spec.targets < 1 or spec.sources * spec.targets < 2:
        raise ValueError("need sources >= 1, targets >= 1 and sources*targets >= 2")
    if spec.period < 1 or spec.sources * spec.period > spec.targets:
        raise ValueError(f"{spec.sources} sources x period {spec.period} exceed {spec.targets} targets")
    if spec.events < 1 or not 0 <= spec.jitter < 1:
        raise ValueError("events must be >= 1 and jitter in [0, 1)")
    rng = np.random.default_rng(spec.seed)
    offset = rng.integers(0, spec.period, size=spec.sources)
    steps = -(-spec.events // spec.sources)
    k = np.repeat(np.arange(steps), spec.sources)[:spec.events]
    s = np.tile(np.arange(spec.sources), steps)[:spec.events]
    dst = spec.sources + s * spec.period + (offset[s] + k) % spec.period
    t = k + 1.0 + rng.uniform(0.0, spec.jitter, size=spec.events)
    count = k + 1  # this source's interactions so far, including this one
    labels = (count > spec.label_threshold).astype(np.int64)
    return EventLog.from_unsorted(s, dst, t, None, labels, num_nodes=spec.sources + spec.targets,
                                  num_sources=spec.sources)


def generate(spec: SyntheticSpec) -> EventLog:
    if spec.generator == "recurrent_bipartite":
        return gen_recurrent_bipartite(spec)
    if spec.generator == "symmetric_cycle":
        return gen_symmetric_cycle()
    raise ValueError(f"unknown generator {spec.generator!r}")
