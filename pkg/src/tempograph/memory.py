"""Node-state memory: raw-event buffering, message construction and GRU updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .nn import ParameterSet, gru_cell, init_gru

SNAPSHOT_VERSION = 1


# ------------------------------------------------------------ time encoding

def init_time_encoder(params: ParameterSet, prefix: str, dim: int) -> None:
    # geometric frequency ladder, zero phase
    params.add(f"{prefix}.w", 1.0 / 10 ** np.linspace(0, 9, dim))
    params.add_zeros(f"{prefix}.b", (dim,))


def time_encode(params: ParameterSet, prefix: str, dt) -> Tensor:
    """``cos(dt * w + b)`` for a vector (or any-shape array) of time gaps."""
    dt = np.asarray(dt, dtype=np.float64)[..., None]
    return ad.cos(ad.add(ad.mul(dt, params[f"{prefix}.w"]), params[f"{prefix}.b"]))


def compute_message(params: ParameterSet, s_i, s_j, dt, e_ij, time_prefix: str = "mem.time") -> Tensor:
    """``[s_i | s_j | phi(dt) | e_ij]`` row-wise."""
    dt = np.asarray(dt, dtype=np.float64)
    if (dt < 0).any():
        raise ValueError(f"negative time gap {dt.min()} reached memory (out-of-order event)")
    return ad.concat([s_i, s_j, time_encode(params, time_prefix, dt), e_ij], axis=-1)


# ------------------------------------------------------------------- stores

class MemoryStore:
    def __init__(self, num_nodes: int, dim: int):
        self.dim = dim
        self.states = np.zeros((num_nodes, dim))
        self.last_update = np.zeros(num_nodes)

    @property
    def num_nodes(self) -> int:
        return len(self.states)

    def reset(self) -> None:
        self.states[:] = 0.0
        self.last_update[:] = 0.0

    def nbytes(self) -> int:
        return self.states.nbytes + self.last_update.nbytes


@dataclass
class PendingEvents:
    """Flat, chronologically ordered raw events awaiting a flush."""
    node: np.ndarray
    other: np.ndarray
    t: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.node)

    def latest_per_node(self) -> tuple[np.ndarray, np.ndarray]:
        """(unique nodes ascending, index of each node's newest entry)."""
        rev = len(self.node) - 1 - np.arange(len(self.node))
        nodes, first_in_rev = np.unique(self.node[::-1], return_index=True)
        return nodes, rev[first_in_rev]


class RawMessageBuffer:
    """Per-node raw events not yet folded into memory or trajectory state."""

    def __init__(self, feat_dim: int):
        self.feat_dim = feat_dim
        self._chunks: list[PendingEvents] = []

    def __len__(self) -> int:
        return int(sum(len(c) for c in self._chunks))

    def is_empty(self) -> bool:
        return len(self) == 0

    def add(self, src, dst, t, features) -> None:
        """Buffer events for both endpoints; a self-loop is buffered once."""
        src, dst = np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)
        t = np.asarray(t, dtype=np.float64)
        features = np.asarray(features, dtype=np.float64).reshape(len(src), self.feat_dim)
        node = np.stack([src, dst], axis=1).reshape(-1)
        other = np.stack([dst, src], axis=1).reshape(-1)
        keep = np.ones(len(node), dtype=bool)
        keep[1::2] = src != dst
        self._chunks.append(PendingEvents(node[keep], other[keep], np.repeat(t, 2)[keep],
                                          np.repeat(features, 2, axis=0)[keep]))

    def peek(self) -> PendingEvents:
        if not self._chunks:
            return PendingEvents(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0),
                                 np.zeros((0, self.feat_dim)))
        if len(self._chunks) > 1:
            c = self._chunks
            self._chunks = [PendingEvents(np.concatenate([x.node for x in c]),
                                          np.concatenate([x.other for x in c]),
                                          np.concatenate([x.t for x in c]),
                                          np.concatenate([x.features for x in c]))]
        return self._chunks[0]

    def drain(self, nodes=None) -> PendingEvents:
        """Remove and return pending events (all, or only those of ``nodes``)."""
        pending = self.peek()
        if nodes is None:
            self._chunks = []
            return pending
        take = np.isin(pending.node, np.asarray(list(nodes), dtype=np.int64))
        sub = lambda m: PendingEvents(pending.node[m], pending.other[m],  # noqa: E731
                                      pending.t[m], pending.features[m])
        rest = sub(~take)
        self._chunks = [rest] if len(rest) else []
        return sub(take)

    def earliest(self) -> float:
        pending = self.peek()
        return float(pending.t.min()) if len(pending) else float("inf")

    def clear(self) -> None:
        self._chunks = []


# ------------------------------------------------------------------ updates

def init_memory_params(params: ParameterSet, mem_dim: int, time_dim: int, feat_dim: int) -> None:
    init_time_encoder(params, "mem.time", time_dim)
    init_gru(params, "mem.gru", 2 * mem_dim + time_dim + feat_dim, mem_dim)


def update_from_pending(memory: MemoryStore, pending: PendingEvents, params: ParameterSet,
                        aggregator: str = "last") -> tuple[np.ndarray, Tensor | None]:
    """Fold pending events into memory; returns (nodes, new state rows).

    All messages read the pre-flush states. The returned rows stay on the
    active tape, the stored copies are plain arrays.
    """
    if len(pending) == 0:
        return np.zeros(0, dtype=np.int64), None
    if aggregator == "last":
        nodes, pick = pending.latest_per_node()
        s_i = memory.states[nodes]
        msg = compute_message(params, s_i, memory.states[pending.other[pick]],
                              pending.t[pick] - memory.last_update[nodes], pending.features[pick])
        new_time = pending.t[pick]
    elif aggregator == "mean":
        nodes, slot = np.unique(pending.node, return_inverse=True)
        counts = np.bincount(slot, minlength=len(nodes)).astype(np.float64)
        raw = compute_message(params, memory.states[pending.node], memory.states[pending.other],
                              pending.t - memory.last_update[pending.node], pending.features)
        msg = ad.mul(ad.scatter_add_rows(raw, slot, len(nodes)), (1.0 / counts)[:, None])
        s_i = memory.states[nodes]
        new_time = np.zeros(len(nodes))
        np.maximum.at(new_time, slot, pending.t)
    else:
        raise ValueError(f"unknown memory aggregator {aggregator!r}")
    new_rows = gru_cell(params, "mem.gru", msg, s_i)
    memory.states[nodes] = new_rows.data
    memory.last_update[nodes] = np.maximum(memory.last_update[nodes], new_time)
    return nodes, new_rows


def flush_and_update(memory: MemoryStore, buffer: RawMessageBuffer, params: ParameterSet,
                     nodes=None, now: float | None = None, aggregator: str = "last"):
    """Drain the buffer (optionally only ``nodes``) into memory."""
    if now is not None and buffer.peek().t.max(initial=-np.inf) > now:
        raise ValueError(f"buffered events after now={now}")
    return update_from_pending(memory, buffer.drain(nodes), params, aggregator)


def reset(memory: MemoryStore, buffer: RawMessageBuffer) -> None:
    memory.reset()
    buffer.clear()


def snapshot(memory: MemoryStore, buffer: RawMessageBuffer, extra: dict | None = None) -> bytes:
    pending = buffer.peek()
    section = {"states": memory.states, "last_update": memory.last_update,
               "pending_node": pending.node, "pending_other": pending.other,
               "pending_t": pending.t, "pending_features": pending.features,
               "version": np.array([SNAPSHOT_VERSION], dtype=np.int64)}
    sections = {"memory": section}
    if extra:
        sections.update(extra)
    return checkpoint.dumps(sections, manifest="memory-snapshot")


def restore(blob: bytes, memory: MemoryStore, buffer: RawMessageBuffer) -> dict:
    """Load a snapshot into ``memory``/``buffer``; returns any extra sections."""
    sections, _ = checkpoint.loads(blob)
    sec = sections.get("memory")
    if sec is None or int(sec["version"][0]) != SNAPSHOT_VERSION:
        found = None if sec is None else int(sec["version"][0])
        raise checkpoint.CheckpointError(
            f"memory snapshot version {found} != supported {SNAPSHOT_VERSION}")
    memory.states = sec["states"].copy()
    memory.last_update = sec["last_update"].copy()
    buffer.clear()
    if len(sec["pending_node"]):
        buffer._chunks = [PendingEvents(sec["pending_node"], sec["pending_other"],
                                        sec["pending_t"],
                                        sec["pending_features"].reshape(len(sec["pending_node"]), buffer.feat_dim))]
    return {k: v for k, v in sections.items() if k != "memory"}
