"""Training loop, link prediction and node classification evaluation, sweeps."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .events import DataSplits, EventLog, TemporalNeighborhoodStore, concat_logs, sample_negatives
from .metrics import average_precision, roc_auc
from .model import TETGN, ModelConfig
from .nn import adam_step
from .trajectory import TeParams

SETTINGS = ("transductive", "inductive")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 200
    n_neg: int = 5
    lr: float = 1e-4
    epochs: int = 30
    seed: int = 0
    patience: int = 5
    nc_mode: str = "probe"  # or "joint"
    nc_epochs: int = 10

    def __post_init__(self):
        if self.batch_size < 1 or self.n_neg < 1 or self.epochs < 0:
            raise ValueError("batch_size, n_neg must be >= 1 and epochs >= 0")
        if self.nc_mode not in ("probe", "joint"):
            raise ValueError(f"nc_mode must be 'probe' or 'joint', got {self.nc_mode!r}")


@dataclass
class EvalReport:
    setting: str
    metric: str
    mean: float
    std: float
    values: list[float] = field(default_factory=list)

    @classmethod
    def from_values(cls, setting: str, metric: str, values: Iterable[float]) -> "EvalReport":
        values = [float(v) for v in values]
        return cls(setting, metric, float(np.mean(values)), float(np.std(values)), values)


MetricSink = Callable[[dict], None]


def _emit(sink: MetricSink | None, run_id: str, epoch: int, split: str, setting: str,
          metric: str, value: float) -> None:
    if sink is not None:
        sink({"run_id": run_id, "epoch": epoch, "split": split, "setting": setting,
              "metric": metric, "value": float(value)})


# -------------------------------------------------------------------- heads

def link_score(model: TETGN, z_src, z_dst) -> Tensor:
    """``sigmoid(MLP(z_src | z_dst))``."""
    return ad.sigmoid(model.link_logits(z_src, z_dst))


def bce_with_logits(pos: Tensor, neg: Tensor | None) -> Tensor:
    """Mean binary cross-entropy over all positive and negative samples."""
    terms = [ad.sum(ad.log_sigmoid(pos))]
    count = pos.data.size
    if neg is not None:
        terms.append(ad.sum(ad.log_sigmoid(-neg)))
        count += neg.data.size
    total = terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])
    return ad.scale(total, -1.0 / count)


def node_classify(model: TETGN, z) -> Tensor:
    return ad.sigmoid(model.class_logits(z))


# ----------------------------------------------------------------- training

def train_epoch(model: TETGN, train: EventLog, cfg: TrainConfig, epoch: int = 0,
                store: TemporalNeighborhoodStore | None = None, pool=None,
                label_head: bool = False) -> float:
    """One chronological pass; returns the mean batch loss.

    Memory and trajectory state are reset first. With ``label_head`` the
    node-classification head takes its own Adam step on every labeled batch.
    """
    if len(train) == 0:
        raise ValueError("empty training log")
    store = store or TemporalNeighborhoodStore(train)
    pool = np.unique(train.dst) if pool is None else pool
    rng = np.random.default_rng([cfg.seed, epoch, 7])
    model.reset_state()
    model.params.zero_grad()
    losses = []
    for batch in train.batches(cfg.batch_size):
        neg = sample_negatives(len(batch), cfg.n_neg, pool, rng)
        with Tape() as tape:
            pos_logit, neg_logit, z_src = model.score_batch(batch, neg, store)
            loss = bce_with_logits(pos_logit, neg_logit)
        ad.backward(tape, loss)
        if label_head and batch.has_labels():
            _classifier_step(model, z_src.data, batch.labels, cfg.lr)
        adam_step(model.params, cfg.lr)
        model.observe(batch)
        losses.append(float(loss.data))
    return float(np.mean(losses))


def _classifier_step(model: TETGN, z: np.ndarray, labels: np.ndarray, lr: float) -> float:
    """Gradient of the label loss into the classifier head only (embeddings as data)."""
    keep = labels >= 0
    if not keep.any():
        return float("nan")
    with Tape() as tape:
        logit = ad.reshape(model.class_logits(z[keep]), (-1,))
        y = labels[keep].astype(np.float64)
        # BCE = -[y log s(x) + (1-y) log s(-x)]
        ll = ad.add(ad.mul(ad.log_sigmoid(logit), y), ad.mul(ad.log_sigmoid(-logit), 1.0 - y))
        loss = ad.scale(ad.sum(ll), -1.0 / len(y))
    ad.backward(tape, loss)
    return float(loss.data)


@dataclass
class FitResult:
    losses: list[float]
    val_ap: list[float]
    best_epoch: int
    train_end: dict
    seconds: float


def fit(model: TETGN, splits: DataSplits, cfg: TrainConfig, run_id: str = "run",
        sink: MetricSink | None = None, eval_store: TemporalNeighborhoodStore | None = None) -> FitResult:
    """Train with early stopping on transductive validation AP.

    On return the model holds the best epoch's parameters and its train-end
    stream state.
    """
    started = time.perf_counter()
    store = TemporalNeighborhoodStore(splits.train)
    eval_store = eval_store or TemporalNeighborhoodStore(splits.full)
    pool = np.unique(splits.train.dst)
    joint = cfg.nc_mode == "joint" and splits.full.has_labels()
    losses, val_ap = [], []
    best, best_ap, stale = None, -np.inf, 0
    for epoch in range(cfg.epochs):
        loss = train_epoch(model, splits.train, cfg, epoch, store, pool, label_head=joint)
        losses.append(loss)
        _emit(sink, run_id, epoch, "train", "transductive", "loss", loss)
        end = model.capture()
        res = stream_evaluate(model, splits, cfg, eval_store, splits=("val",))
        model.reinstate(end)
        ap = res.get(("val", "transductive", "AP"), float("nan"))
        val_ap.append(ap)
        _emit(sink, run_id, epoch, "val", "transductive", "AP", ap)
        if ap > best_ap:
            best, best_ap, stale = end, ap, 0
            best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best is None:
        best, best_epoch = model.capture(), -1
    model.reinstate(best)
    return FitResult(losses, val_ap, best_epoch, best, time.perf_counter() - started)


# --------------------------------------------------------------- evaluation

def negative_pools(splits: DataSplits) -> dict[str, np.ndarray]:
    dst = np.unique(splits.full.dst)
    unseen = np.array(sorted(splits.unseen), dtype=np.int64)
    return {"transductive": np.setdiff1d(dst, unseen), "inductive": dst}


def stream_evaluate(model: TETGN, data: DataSplits, cfg: TrainConfig,
                    store: TemporalNeighborhoodStore | None = None,
                    splits: tuple[str, ...] = ("val", "test")) -> dict:
    """Score eval events in one chronological pass from the current state.

    Each positive gets one negative per setting, drawn from that setting's
    pool. Events touching an unseen node count as inductive, all others as
    transductive. No parameter is updated; ID rows are appended for nodes
    seen for the first time. Returns ``{(split, setting, metric): value}``
    plus an ``"id_rows_unchanged"`` flag, the number of ``"extensions"`` and
    their records under ``"extension_log"``.
    """
    store = store or TemporalNeighborhoodStore(data.full)
    pools = negative_pools(data)
    if not len(pools["transductive"]):
        pools["transductive"] = pools["inductive"]
    logs = [getattr(data, s) for s in splits]
    log = concat_logs(logs)
    tags = np.concatenate([np.full(len(l), n) for n, l in zip(splits, logs)])
    rng = np.random.default_rng([cfg.seed, 104723])
    unseen = np.array(sorted(data.unseen), dtype=np.int64)
    rows_before = model.table.matrix.data.copy()
    ext_before = len(model.table.extensions)
    pos_scores, neg_scores = [], []
    for batch in log.batches(cfg.batch_size):
        neg = np.stack([sample_negatives(len(batch), 1, pools[s], rng)[:, 0] for s in SETTINGS], axis=1)
        model.ensure_rows(np.concatenate([batch.src, batch.dst, neg.reshape(-1)]), float(batch.t[0]))
        pos, negl, _ = model.score_batch(batch, neg, store)
        pos_scores.append(1.0 / (1.0 + np.exp(-pos.data)))
        neg_scores.append(1.0 / (1.0 + np.exp(-negl.data)))
        model.observe(batch)
    model.params.zero_grad()
    pos_s = np.concatenate(pos_scores) if pos_scores else np.zeros(0)
    neg_s = np.concatenate(neg_scores) if neg_scores else np.zeros((0, 2))
    inductive = np.isin(log.src, unseen) | np.isin(log.dst, unseen)
    out: dict = {}
    for split in splits:
        for col, setting in enumerate(SETTINGS):
            m = (tags == split) & (inductive if setting == "inductive" else ~inductive)
            if not m.any():
                continue
            scores = np.concatenate([pos_s[m], neg_s[m, col]])
            labels = np.r_[np.ones(m.sum()), np.zeros(m.sum())]
            out[(split, setting, "AP")] = average_precision(scores, labels)
            out[(split, setting, "AUC")] = roc_auc(scores, labels)
            out[(split, setting, "count")] = int(m.sum())
    old = rows_before.shape[0]
    out["id_rows_unchanged"] = bool(np.array_equal(model.table.matrix.data[:old], rows_before))
    out["extensions"] = len(model.table.extensions) - ext_before
    out["extension_log"] = [dict(e) for e in model.table.extensions[ext_before:]]
    return out


def evaluate_link_prediction(model: TETGN, data: DataSplits, cfg: TrainConfig, mode: str = "transductive",
                             split: str = "test", store: TemporalNeighborhoodStore | None = None) -> EvalReport:
    """AP for one setting on ``split``.

    The model's current stream state is taken as the train-end snapshot: it is
    restored afterwards, together with parameters and ID rows, so evaluation
    leaves the model exactly as it found it. Validation is replayed before
    test so test-time memory has seen every earlier event.
    """
    if mode not in SETTINGS:
        raise ValueError(f"mode must be one of {SETTINGS}")
    if mode == "inductive" and not data.unseen:
        raise ValueError("inductive evaluation needs a non-empty unseen node set")
    state = model.capture()
    try:
        res = stream_evaluate(model, data, cfg, store, splits=("val", "test") if split == "test" else ("val",))
    finally:
        model.reinstate(state)
    key = (split, mode, "AP")
    if key not in res:
        raise ValueError(f"no {mode} events in the {split} split")
    return EvalReport.from_values(mode, "AP", [res[key]])


# ------------------------------------------------------- node classification

def source_embeddings(model: TETGN, log: EventLog, cfg: TrainConfig,
                      store: TemporalNeighborhoodStore) -> np.ndarray:
    """Source embeddings at every event time of ``log``, streaming it from the current state."""
    out = []
    for batch in log.batches(cfg.batch_size):
        model.ensure_rows(np.concatenate([batch.src, batch.dst]), float(batch.t[0]))
        flushed = model.flush()
        out.append(model.embed(batch.src, batch.t, store, flushed).data)
        model.observe(batch)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.embedding.d_emb))


def evaluate_node_classification(model: TETGN, data: DataSplits, cfg: TrainConfig,
                                 store: TemporalNeighborhoodStore | None = None,
                                 train_head: bool = True) -> EvalReport:
    """Test AUC of the label head on source embeddings.

    In probe mode (and whenever ``train_head``) the head is fitted on frozen
    train-split embeddings for ``nc_epochs`` passes before scoring.
    """
    if not data.full.has_labels():
        raise ValueError("node classification needs labeled events")
    store = store or TemporalNeighborhoodStore(data.full)
    state = model.capture()
    try:
        model.reset_state()
        z_train = source_embeddings(model, data.train, cfg, store)
        z_eval = source_embeddings(model, concat_logs([data.val, data.test]), cfg, store)
        y_test = data.test.labels
        if len(np.unique(y_test[y_test >= 0])) < 2:
            raise ValueError("node classification test labels contain a single class")
        if train_head:
            _fit_probe(model, z_train, data.train.labels, cfg)
        z_test = z_eval[len(data.val):]
        keep = y_test >= 0
        scores = node_classify(model, z_test[keep]).data.reshape(-1)
        auc = roc_auc(scores, y_test[keep])
    finally:
        model.reinstate(state)
    return EvalReport.from_values("transductive", "AUC", [auc])


def _fit_probe(model: TETGN, z: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> None:
    rng = np.random.default_rng([cfg.seed, 31337])
    model.params.zero_grad()
    names = [n for n in model.params if n.startswith("nc.")]
    for _ in range(cfg.nc_epochs):
        order = rng.permutation(len(z))
        for start in range(0, len(z), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _classifier_step(model, z[idx], labels[idx], cfg.lr)
            adam_step(model.params, cfg.lr, names=names)


# ---------------------------------------------------------------------- runs

@dataclass(frozen=True)
class RunSpec:
    model: ModelConfig
    train: TrainConfig


def run_link_prediction(data: DataSplits, spec: RunSpec, run_id: str = "run",
                        sink: MetricSink | None = None) -> tuple[TETGN, dict, FitResult]:
    """Fit one model and evaluate val and test in both settings."""
    model = TETGN(spec.model, data.full.num_nodes, data.full.feat_dim)
    store = TemporalNeighborhoodStore(data.full)
    fitted = fit(model, data, spec.train, run_id, sink, store)
    state = model.capture()
    res = stream_evaluate(model, data, spec.train, store)
    model.reinstate(state)
    for key, value in sorted((k, v) for k, v in res.items() if isinstance(k, tuple) and k[2] != "count"):
        _emit(sink, run_id, fitted.best_epoch, key[0], key[1], key[2], value)
    return model, res, fitted


SWEEP_HEADER = ("alpha", "beta", "d", "setting", "metric", "mean", "std")


def hyperparameter_sweep(data: DataSplits, base: RunSpec, alphas=(1.0, 2.0), betas=(0.1, 1.0),
                         dims=(4, 12, 20, 28), repeats: int = 1, settings=("transductive",),
                         metric: str = "AP", sink: MetricSink | None = None) -> list[dict]:
    """Test-split metric over the full grid, one row per (alpha, beta, d, setting)."""
    grid = list(product(alphas, betas, dims))
    if not grid:
        raise ValueError("empty sweep grid")
    rows = []
    for alpha, beta, d in grid:
        values = {s: [] for s in settings}
        for r in range(repeats):
            seed = base.train.seed + r
            te = replace(base.model.te, alpha=float(alpha), beta=float(beta))
            mcfg = replace(base.model, te=te, traj_dim=int(d), seed=base.model.seed + r)
            spec = RunSpec(mcfg, replace(base.train, seed=seed))
            run_id = f"a{alpha}-b{beta}-d{d}-r{r}"
            _, res, _ = run_link_prediction(data, spec, run_id, sink)
            for s in settings:
                values[s].append(res.get(("test", s, metric), float("nan")))
        for s in settings:
            rep = EvalReport.from_values(s, metric, values[s])
            rows.append({"alpha": float(alpha), "beta": float(beta), "d": int(d), "setting": s,
                         "metric": metric, "mean": rep.mean, "std": rep.std})
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_HEADER, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def metrics_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)
