"""Trajectory encoding: learnable extendable node IDs and exponential messages.

A node's temporal positional feature is ``TP_i = ID_i + v'_i`` where
``ID_i`` is its projected lookup row (re-evaluated with the current
parameters on every read) and ``v'_i`` is its stored aggregated trajectory
encoding. Neighbors exchange ``alpha * TP_j * exp(-beta * dt)`` messages, so
every hop a message travels multiplies in one more power of ``alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .memory import PendingEvents
from .nn import ParameterSet, init_mlp, mlp_forward

MODES = ("exp", "raw_id", "off")


@dataclass(frozen=True)
class TeParams:
    alpha: float = 2.0
    beta: float = 0.1
    mode: str = "exp"
    clamp: float = 1e4

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"trajectory mode must be one of {MODES}")


class MissingRowError(KeyError):
    pass


class IdTable:
    """Growable lookup matrix ``M`` plus the MLP projecting rows to ID vectors.

    Rows are assigned to nodes on first sight, in ascending node order within
    a call. Each row is drawn from its own seeded stream, so its initial
    value depends only on the seed and the row number.
    """

    def __init__(self, params: ParameterSet, num_nodes: int, dim: int, seed: int = 0,
                 prefix: str = "traj"):
        self.params = params
        self.dim = dim
        self.seed = seed
        self.prefix = prefix
        self.bound = float(np.sqrt(6.0 / (2 * dim)))
        self.row_of = np.full(num_nodes, -1, dtype=np.int64)
        self.extensions: list[dict] = []
        params.add(f"{prefix}.M", np.zeros((0, dim)))
        init_mlp(params, f"{prefix}.idproj", self.layer_dims)

    @property
    def layer_dims(self) -> list[int]:
        return [self.dim, 2 * self.dim, self.dim]

    @property
    def matrix(self) -> Tensor:
        return self.params[f"{self.prefix}.M"]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def _fresh_rows(self, start: int, stop: int) -> np.ndarray:
        return np.stack([np.random.default_rng([self.seed, 104729, r]).uniform(-self.bound, self.bound, self.dim)
                         for r in range(start, stop)]) if stop > start else np.zeros((0, self.dim))

    def has(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        return (nodes < len(self.row_of)) & (self.row_of[np.minimum(nodes, len(self.row_of) - 1)] >= 0)

    def assign(self, nodes, t: float | None = None) -> np.ndarray:
        """Give every node in ``nodes`` a row, extending the table as needed.

        Returns the nodes that were newly assigned.
        """
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        if len(nodes) and nodes.max() >= len(self.row_of):
            grow = nodes.max() + 1 - len(self.row_of)
            self.row_of = np.concatenate([self.row_of, np.full(grow, -1, dtype=np.int64)])
        new = nodes[self.row_of[nodes] < 0]
        if len(new):
            start = self.rows
            extend_table(self, start + len(new))
            self.row_of[new] = np.arange(start, start + len(new))
            for node in new:
                self.extensions.append({"node": int(node), "t": t, "rows": int(self.row_of[node]) + 1})
        return new

    def state(self) -> dict[str, np.ndarray]:
        return {"row_of": self.row_of}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.row_of = np.array(state["row_of"], dtype=np.int64)


def extend_table(table: IdTable, new_count: int) -> None:
    """Append freshly initialized rows up to ``new_count``; never touches old rows."""
    current = table.rows
    if new_count < current:
        raise ValueError(f"cannot shrink ID table from {current} to {new_count} rows")
    if new_count > current:
        table.params.append_rows(f"{table.prefix}.M", table._fresh_rows(current, new_count))


def id_vector(table: IdTable, nodes) -> Tensor:
    """``MLP(M[row(i)])`` for each node; differentiable into rows and MLP."""
    nodes = np.asarray(nodes, dtype=np.int64)
    scalar = nodes.ndim == 0
    nodes = np.atleast_1d(nodes)
    known = table.has(nodes)
    if not known.all():
        missing = nodes[~known][:5].tolist()
        raise MissingRowError(f"nodes {missing} have no ID row; call extend_table/assign first")
    uniq, inverse = np.unique(nodes, return_inverse=True)
    rows = ad.take_rows(table.matrix, table.row_of[uniq])
    out = mlp_forward(table.params, f"{table.prefix}.idproj", rows, table.layer_dims, "relu")
    if len(uniq) != len(nodes) or not np.array_equal(uniq, nodes):
        out = ad.take_rows(out, inverse)
    return ad.reshape(out, (table.dim,)) if scalar else out


# ------------------------------------------------------------------ encoder

def te_encode(x, dt, p: TeParams) -> Tensor:
    """``alpha * x * exp(-beta * dt)``; ``dt`` is a scalar or one gap per row."""
    dt = np.asarray(dt, dtype=np.float64)
    if (dt < 0).any():
        raise ValueError(f"negative time gap {dt.min()} in trajectory encoding")
    x = ad.as_tensor(x)
    decay = ad.exp_neg_scaled(dt, p.beta)
    if dt.ndim:
        decay = ad.reshape(decay, dt.shape + (1,))
    return ad.scale(ad.mul(x, decay), p.alpha)


def te_compose_check(x, dt1: float, dt2: float, p: TeParams) -> tuple[Tensor, Tensor]:
    """(encode twice over dt1 then dt2, encode once over dt1 + dt2).

    The first equals ``alpha`` times the second: each extra encoding is one
    more hop, while the time factors compose additively.
    """
    nested = te_encode(te_encode(x, dt1, p), dt2, p)
    single = te_encode(x, np.asarray(dt1) + np.asarray(dt2), p)
    return nested, single


# ------------------------------------------------------------------- store

class TrajectoryStore:
    def __init__(self, num_nodes: int, dim: int):
        self.dim = dim
        self.vagg = np.zeros((num_nodes, dim))
        self.tp = np.zeros((num_nodes, dim))
        self.last_update = np.zeros(num_nodes)
        self.updated = np.zeros(num_nodes, dtype=bool)

    def reset(self) -> None:
        self.vagg[:] = 0.0
        self.tp[:] = 0.0
        self.last_update[:] = 0.0
        self.updated[:] = False

    def nbytes(self) -> int:
        return self.vagg.nbytes + self.tp.nbytes + self.last_update.nbytes + self.updated.nbytes

    def state(self) -> dict[str, np.ndarray]:
        return {"vagg": self.vagg, "tp": self.tp, "last_update": self.last_update,
                "updated": self.updated.astype(np.int64)}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.vagg = state["vagg"].copy()
        self.tp = state["tp"].copy()
        self.last_update = state["last_update"].copy()
        self.updated = state["updated"].astype(bool)


def positional_feature(table: IdTable, store: TrajectoryStore, nodes, p: TeParams,
                       vagg: Tensor | None = None) -> Tensor:
    """Current ``TP_i = clamp(ID_i + v'_i)``; ``vagg`` overrides stored rows."""
    nodes = np.asarray(nodes, dtype=np.int64)
    ids = id_vector(table, nodes)
    agg = vagg if vagg is not None else store.vagg[nodes]
    return ad.clamp_norm(ad.add(ids, agg), p.clamp)


def make_trajectory_message(store: TrajectoryStore, table: IdTable, senders, t, p: TeParams) -> Tensor:
    """What each sender passes along at time ``t``: its TP encoded over the elapsed gap."""
    senders = np.asarray(senders, dtype=np.int64)
    dt = np.asarray(t, dtype=np.float64) - store.last_update[senders]
    if (dt < 0).any():
        raise ValueError("trajectory message requested before the sender's last update")
    if p.mode == "raw_id":
        return id_vector(table, senders)
    return te_encode(positional_feature(table, store, senders, p), dt, p)


def aggregate_trajectory(own, messages: Sequence | Tensor, index=None) -> Tensor:
    """``own + sum(messages)``.

    With ``index``, ``messages`` is a stacked tensor and row ``m`` is added to
    ``own[index[m]]``; sums run in message order.
    """
    own = ad.as_tensor(own)
    if index is None:
        out = own
        for m in messages:
            m = ad.as_tensor(m)
            if m.shape != own.shape:
                raise ShapeError(f"aggregate_trajectory: message {m.shape} vs own {own.shape}")
            out = ad.add(out, m)
        return out
    messages = ad.as_tensor(messages)
    if messages.shape[1:] != own.shape[1:]:
        raise ShapeError(f"aggregate_trajectory: messages {messages.shape} vs own {own.shape}")
    return ad.add(own, ad.scatter_add_rows(messages, index, own.shape[0]))


def update_tp(store: TrajectoryStore, table: IdTable, nodes, t, vagg, p: TeParams) -> Tensor:
    """Store ``v'_i`` at time ``t`` and return ``TP_i(t) = clamp(ID_i + v'_i)``."""
    nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), nodes.shape)
    if (t < store.last_update[nodes]).any():
        raise ValueError("trajectory update out of chronological order")
    vagg = ad.as_tensor(vagg)
    if vagg.ndim == 1:
        vagg = ad.reshape(vagg, (1, -1))
    tp = positional_feature(table, store, nodes, p, vagg=vagg)
    store.vagg[nodes] = vagg.data
    store.tp[nodes] = tp.data
    store.last_update[nodes] = t
    store.updated[nodes] = True
    return tp


def flush_trajectory(store: TrajectoryStore, table: IdTable, pending: PendingEvents,
                     p: TeParams) -> tuple[np.ndarray, Tensor | None]:
    """Fold every pending event into the trajectory stream.

    Messages are formed from pre-flush state at their event times. A node's
    own term is its TP decayed (without ``alpha``) to its newest event time.
    Returns (updated nodes, their new ``v'`` rows on the tape).
    """
    if p.mode == "off" or len(pending) == 0:
        return np.zeros(0, dtype=np.int64), None
    nodes, slot = np.unique(pending.node, return_inverse=True)
    t_new = np.zeros(len(nodes))
    np.maximum.at(t_new, slot, pending.t)
    msgs = make_trajectory_message(store, table, pending.other, pending.t, p)
    own = positional_feature(table, store, nodes, p)
    if p.mode == "exp":
        own = ad.mul(own, ad.reshape(ad.exp_neg_scaled(t_new - store.last_update[nodes], p.beta), (-1, 1)))
    vagg = aggregate_trajectory(own, msgs, slot)
    update_tp(store, table, nodes, t_new, vagg, p)
    return nodes, vagg
