"""Temporal graph attention over recent neighbors, fusing memory and trajectory."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .events import TemporalNeighborhoodStore
from .memory import RawMessageBuffer, init_time_encoder, time_encode
from .nn import ParameterSet, init_attention, init_mlp, mlp_forward, multi_head_attention


class CausalityError(RuntimeError):
    """Embedding requested while earlier events are still unflushed."""


@dataclass(frozen=True)
class EmbeddingConfig:
    layers: int = 1
    heads: int = 2
    n_neighbors: int = 10
    d_emb: int = 100

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.d_emb % self.heads:
            raise ValueError(f"d_emb {self.d_emb} not divisible by heads {self.heads}")
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")


def init_embedding_params(params: ParameterSet, cfg: EmbeddingConfig, mem_dim: int,
                          traj_dim: int, time_dim: int, feat_dim: int) -> None:
    init_mlp(params, "emb.trajproj", [traj_dim, 2 * traj_dim, traj_dim])
    init_mlp(params, "emb.fuse", [mem_dim + traj_dim, cfg.d_emb, cfg.d_emb])
    init_time_encoder(params, "emb.time", time_dim)
    key_dim = cfg.d_emb + time_dim + feat_dim
    for layer in range(1, cfg.layers + 1):
        init_attention(params, f"emb.att{layer}", cfg.d_emb, key_dim, key_dim, cfg.d_emb)
        init_mlp(params, f"emb.upd{layer}", [2 * cfg.d_emb, cfg.d_emb, cfg.d_emb])


def fused_input(params: ParameterSet, mem_rows, traj_rows) -> Tensor:
    """``MLP([s_i | MLP'(trajectory_i)])``, the layer-0 vector of every node."""
    mem_rows = ad.as_tensor(mem_rows)
    traj_dim = params["emb.trajproj.w0"].shape[0]
    proj = mlp_forward(params, "emb.trajproj", traj_rows, [traj_dim, 2 * traj_dim, traj_dim], "tanh")
    fuse_dims = [mem_rows.shape[1] + traj_dim, params["emb.fuse.w0"].shape[1],
                 params["emb.fuse.w1"].shape[1]]
    return mlp_forward(params, "emb.fuse", ad.concat([mem_rows, proj], axis=-1), fuse_dims, "relu")


@dataclass
class QueryPlan:
    """Neighbor lookups for every layer, from the output layer down to layer 0."""
    levels: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    neighbors: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def base_nodes(self) -> np.ndarray:
        return self.levels[-1][0]


def sample_recent_neighbors(store: TemporalNeighborhoodStore, i: int, t: float, n: int):
    """The ``n`` newest neighbors of ``i`` strictly before ``t``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return store.neighbors_before(i, t, n)


def plan_queries(store: TemporalNeighborhoodStore, cfg: EmbeddingConfig, nodes, times) -> QueryPlan:
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    plan = QueryPlan(levels=[(nodes, times)])
    for _ in range(cfg.layers):
        nbr, ts, ev, mask = store.recent_batch(nodes, times, cfg.n_neighbors)
        plan.neighbors.append((nbr, ts, ev, mask))
        nodes = np.concatenate([nodes, nbr.reshape(-1)])
        times = np.concatenate([times, np.repeat(times, cfg.n_neighbors)])
        plan.levels.append((nodes, times))
    return plan


def compute_embeddings(params: ParameterSet, cfg: EmbeddingConfig, store: TemporalNeighborhoodStore,
                       plan: QueryPlan, base: Tensor, local: np.ndarray,
                       buffer: RawMessageBuffer | None = None) -> Tensor:
    """Final-layer embeddings for the queries of ``plan``.

    ``base`` holds layer-0 vectors and ``local[node]`` the row of each node in
    it. Layer ``l`` attends from a node's layer ``l-1`` vector over its
    neighbors' layer ``l-1`` vectors (joined with the encoded edge age and
    edge features), then applies an update MLP to ``[own | attended]``.
    """
    top_nodes, top_times = plan.levels[0]
    if buffer is not None and len(top_times):
        pending = buffer.peek()
        if len(pending) and pending.t.min() < top_times.max():
            raise CausalityError(f"unflushed event at t={pending.t.min()} precedes query time "
                                 f"{top_times.max()}")
    d = cfg.d_emb
    K = cfg.n_neighbors
    feats = store.log.features
    z = ad.take_rows(base, local[plan.base_nodes])
    for layer in range(1, cfg.layers + 1):
        nodes, times = plan.levels[cfg.layers - layer]
        nbr, ts, ev, mask = plan.neighbors[cfg.layers - layer]
        q = len(nodes)
        own = z[:q] if z.shape[0] > q else z
        neigh = ad.reshape(z[q:], (q, K, d))
        age = np.where(mask, times[:, None] - ts, 0.0)
        parts = [neigh, time_encode(params, "emb.time", age)]
        if feats.shape[1]:
            parts.append(feats[ev] * mask[..., None])
        keys = ad.concat(parts, axis=-1)
        att = multi_head_attention(params, f"emb.att{layer}", own, keys, keys, cfg.heads, mask)
        z = mlp_forward(params, f"emb.upd{layer}", ad.concat([own, att.out], axis=-1), [2 * d, d, d], "relu")
    return z
