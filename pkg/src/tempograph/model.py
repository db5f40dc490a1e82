"""The dual-stream model: memory + trajectory encoding, fused by temporal attention.

Per batch the model (1) flushes events buffered by earlier batches into both
streams, on the active tape, (2) embeds the queried nodes at their query
times, and only after the caller is done with the batch (3) buffers the
batch's own events. A batch therefore never reads its own outcomes.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint
from . import memory as mem
from .autodiff import Tensor
from .embedding import EmbeddingConfig, compute_embeddings, fused_input, init_embedding_params, plan_queries
from .events import EventLog, TemporalNeighborhoodStore
from .nn import ParameterSet, init_mlp, mlp_forward
from .trajectory import IdTable, TeParams, TrajectoryStore, flush_trajectory, positional_feature

CHECKPOINT_KIND = "tetgn-model"


@dataclass(frozen=True)
class ModelConfig:
    mem_dim: int = 100
    time_dim: int = 100
    traj_dim: int = 4
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    te: TeParams = field(default_factory=TeParams)
    mem_agg: str = "last"
    nc_hidden: tuple[int, ...] = (80, 10)
    seed: int = 0

    def __post_init__(self):
        if self.mem_agg not in ("last", "mean"):
            raise ValueError(f"mem_agg must be 'last' or 'mean', got {self.mem_agg!r}")
        if self.mem_dim < 1 or self.time_dim < 1 or self.traj_dim < 1:
            raise ValueError("mem_dim, time_dim and traj_dim must be >= 1")

    @classmethod
    def for_features(cls, feat_dim: int, **kw) -> "ModelConfig":
        """Memory width follows the edge features: 172 with features, else 100."""
        kw.setdefault("mem_dim", 172 if feat_dim > 0 else 100)
        if "embedding" not in kw:
            kw["embedding"] = EmbeddingConfig(d_emb=kw["mem_dim"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nc_hidden"] = list(self.nc_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["embedding"] = EmbeddingConfig(**d["embedding"])
        d["te"] = TeParams(**d["te"])
        d["nc_hidden"] = tuple(d["nc_hidden"])
        return cls(**d)


@dataclass
class FlushResult:
    mem_nodes: np.ndarray
    mem_rows: Tensor | None
    traj_nodes: np.ndarray
    traj_rows: Tensor | None


class TETGN:
    def __init__(self, cfg: ModelConfig, num_nodes: int, feat_dim: int, known_nodes=None):
        self.cfg = cfg
        self.num_nodes = num_nodes
        self.feat_dim = feat_dim
        self.params = ParameterSet(cfg.seed)
        self.table = IdTable(self.params, num_nodes, cfg.traj_dim, seed=cfg.seed)
        mem.init_memory_params(self.params, cfg.mem_dim, cfg.time_dim, feat_dim)
        init_embedding_params(self.params, cfg.embedding, cfg.mem_dim, cfg.traj_dim,
                              cfg.time_dim, feat_dim)
        init_mlp(self.params, "dec", self.decoder_dims)
        init_mlp(self.params, "nc", self.classifier_dims)
        self.memory = mem.MemoryStore(num_nodes, cfg.mem_dim)
        self.buffer = mem.RawMessageBuffer(feat_dim)
        self.traj = TrajectoryStore(num_nodes, cfg.traj_dim)
        if known_nodes is not None:
            self.table.assign(known_nodes)

    # ----------------------------------------------------------- structure

    @property
    def te(self) -> TeParams:
        return self.cfg.te

    @property
    def decoder_dims(self) -> list[int]:
        d = self.cfg.embedding.d_emb
        return [2 * d, d, 1]

    @property
    def classifier_dims(self) -> list[int]:
        return [self.cfg.embedding.d_emb, *self.cfg.nc_hidden, 1]

    def with_mode(self, mode: str) -> TeParams:
        return replace(self.cfg.te, mode=mode)

    # --------------------------------------------------------------- state

    def reset_state(self) -> None:
        mem.reset(self.memory, self.buffer)
        self.traj.reset()

    def ensure_rows(self, nodes, t: float | None = None) -> np.ndarray:
        if self.te.mode == "off":
            return np.zeros(0, dtype=np.int64)
        return self.table.assign(nodes, t)

    def observe(self, batch: EventLog) -> None:
        """Buffer a processed batch's events for the next flush."""
        self.buffer.add(batch.src, batch.dst, batch.t, batch.features)

    def flush(self) -> FlushResult:
        pending = self.buffer.drain()
        if len(pending) and self.te.mode != "off":
            self.ensure_rows(np.concatenate([pending.node, pending.other]), float(pending.t.max()))
        mem_nodes, mem_rows = mem.update_from_pending(self.memory, pending, self.params, self.cfg.mem_agg)
        traj_nodes, traj_rows = flush_trajectory(self.traj, self.table, pending, self.te)
        return FlushResult(mem_nodes, mem_rows, traj_nodes, traj_rows)

    def snapshot(self) -> bytes:
        return mem.snapshot(self.memory, self.buffer, {"trajectory": self.traj.state()})

    def restore(self, blob: bytes) -> None:
        extra = mem.restore(blob, self.memory, self.buffer)
        self.traj.load_state(extra["trajectory"])

    def capture(self) -> dict:
        """Everything evaluation may touch: parameters, ID rows, stream state."""
        return {"params": self.params.copy_values(), "row_of": self.table.row_of.copy(),
                "extensions": len(self.table.extensions), "streams": self.snapshot()}

    def reinstate(self, state: dict) -> None:
        self.params.load_state(state["params"])
        self.table.row_of = state["row_of"].copy()
        del self.table.extensions[state["extensions"]:]
        self.restore(state["streams"])

    # ----------------------------------------------------------- forward

    def node_inputs(self, nodes: np.ndarray, flushed: FlushResult | None) -> Tensor:
        """Layer-0 vectors for ``nodes`` (unique), reading this batch's fresh rows."""
        mem_rows = self._overlay(self.memory.states, nodes, flushed and flushed.mem_nodes,
                                 flushed and flushed.mem_rows)
        if self.te.mode == "off":
            traj_rows = np.zeros((len(nodes), self.cfg.traj_dim))
        else:
            self.ensure_rows(nodes)
            vagg = self._overlay(self.traj.vagg, nodes, flushed and flushed.traj_nodes,
                                 flushed and flushed.traj_rows)
            traj_rows = positional_feature(self.table, self.traj, nodes, self.te, vagg=vagg)
        return fused_input(self.params, mem_rows, traj_rows)

    @staticmethod
    def _overlay(stored: np.ndarray, nodes: np.ndarray, fresh_nodes, fresh_rows):
        base = stored[nodes]
        if fresh_rows is None or not len(fresh_nodes):
            return base
        pos = np.searchsorted(nodes, fresh_nodes)
        pos = np.minimum(pos, len(nodes) - 1)
        hit = nodes[pos] == fresh_nodes
        if not hit.any():
            return base
        rows = fresh_rows if hit.all() else ad.take_rows(fresh_rows, np.flatnonzero(hit))
        return ad.overlay_rows(base, pos[hit], rows)

    def embed(self, nodes, times, store: TemporalNeighborhoodStore,
              flushed: FlushResult | None = None) -> Tensor:
        plan = plan_queries(store, self.cfg.embedding, nodes, times)
        universe = np.unique(plan.base_nodes)
        local = np.full(self.num_nodes, -1, dtype=np.int64)
        local[universe] = np.arange(len(universe))
        base = self.node_inputs(universe, flushed)
        return compute_embeddings(self.params, self.cfg.embedding, store, plan, base, local, self.buffer)

    def link_logits(self, z_src, z_dst) -> Tensor:
        return mlp_forward(self.params, "dec", ad.concat([z_src, z_dst], axis=-1), self.decoder_dims, "relu")

    def class_logits(self, z) -> Tensor:
        return mlp_forward(self.params, "nc", z, self.classifier_dims, "relu")

    def score_batch(self, batch: EventLog, negatives: np.ndarray, store: TemporalNeighborhoodStore):
        """Flush, then logits for true and negative destinations.

        Returns (pos_logits [B], neg_logits [B, n_neg], source embeddings).
        """
        flushed = self.flush()
        B, n_neg = negatives.shape
        nodes = np.concatenate([batch.src, batch.dst, negatives.reshape(-1)])
        times = np.concatenate([batch.t, batch.t, np.repeat(batch.t, n_neg)])
        z = self.embed(nodes, times, store, flushed)
        z_src = z[:B]
        z_dst = z[B:2 * B]
        z_neg = z[2 * B:]
        pos = self.link_logits(z_src, z_dst)
        src_rep = ad.take_rows(z_src, np.repeat(np.arange(B), n_neg)) if n_neg else z_src
        neg = self.link_logits(src_rep, z_neg) if n_neg else None
        pos = ad.reshape(pos, (B,))
        neg = ad.reshape(neg, (B, n_neg)) if n_neg else None
        return pos, neg, z_src

    def embed_now(self, nodes, t: float, store: TemporalNeighborhoodStore) -> np.ndarray:
        """Flush everything buffered, then embed ``nodes`` at time ``t``."""
        flushed = self.flush()
        nodes = np.asarray(nodes, dtype=np.int64)
        return self.embed(nodes, np.full(len(nodes), float(t)), store, flushed).data

    # ---------------------------------------------------------- persistence

    def checkpoint_sections(self) -> dict[str, dict[str, np.ndarray]]:
        return {"params": self.params.state(), "id_table": self.table.state(),
                "memory": {"blob": np.frombuffer(self.snapshot(), dtype=np.uint8).astype(np.int64)}}

    def save(self, path, manifest: str = "") -> None:
        import json
        head = json.dumps({"kind": CHECKPOINT_KIND, "num_nodes": self.num_nodes,
                           "feat_dim": self.feat_dim, "config": self.cfg.to_dict()}, sort_keys=True)
        checkpoint.save(path, self.checkpoint_sections(), head + "\n" + manifest)

    @classmethod
    def load(cls, path) -> "TETGN":
        import json
        sections, manifest = checkpoint.load(path)
        head = json.loads(manifest.split("\n", 1)[0])
        if head.get("kind") != CHECKPOINT_KIND:
            raise checkpoint.CheckpointError(f"{path}: not a model checkpoint")
        model = cls(ModelConfig.from_dict(head["config"]), head["num_nodes"], head["feat_dim"])
        model.params.load_state(sections["params"])
        model.table.load_state(sections["id_table"])
        model.restore(sections["memory"]["blob"].astype(np.uint8).tobytes())
        return model
