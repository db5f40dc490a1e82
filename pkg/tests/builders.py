"""Small models and logs shared by the model-level tests."""
import numpy as np

from tempograph.embedding import EmbeddingConfig
from tempograph.events import EventLog, SyntheticSpec, gen_recurrent_bipartite
from tempograph.model import ModelConfig, TETGN
from tempograph.trajectory import TeParams


def tiny_config(mode="exp", layers=1, seed=0, d=4, mem=6, **te) -> ModelConfig:
    return ModelConfig(mem_dim=mem, time_dim=4, traj_dim=d, seed=seed, nc_hidden=(4, 3),
                       embedding=EmbeddingConfig(layers=layers, heads=2, n_neighbors=3, d_emb=mem),
                       te=TeParams(mode=mode, **te))


def tiny_model(log: EventLog, known=True, **kw) -> TETGN:
    return TETGN(tiny_config(**kw), log.num_nodes, log.feat_dim,
                 known_nodes=np.arange(log.num_nodes) if known else None)


def small_log(sources=6, events=120, seed=0) -> EventLog:
    return gen_recurrent_bipartite(SyntheticSpec(sources=sources, targets=2 * sources, events=events,
                                                 seed=seed, label_threshold=events // sources - 3))


def stream(model: TETGN, log: EventLog, batch: int = 10) -> None:
    """Feed ``log`` through both streams without training."""
    model.reset_state()
    for b in log.batches(batch):
        model.flush()
        model.observe(b)
