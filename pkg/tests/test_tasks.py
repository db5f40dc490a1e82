import math

import numpy as np
import pytest

from builders import small_log, tiny_config, tiny_model
from tempograph import autodiff as ad
from tempograph.autodiff import Tape
from tempograph.events import SplitSpec, TemporalNeighborhoodStore, prepare_splits
from tempograph.model import TETGN
from tempograph.tasks import (EvalReport, RunSpec, TrainConfig, bce_with_logits, evaluate_link_prediction,
                              evaluate_node_classification, fit, hyperparameter_sweep, link_score,
                              run_link_prediction, stream_evaluate, sweep_csv, train_epoch)

CFG = TrainConfig(batch_size=40, n_neg=2, lr=1e-3, epochs=3, patience=5, nc_epochs=2)


@pytest.fixture(scope="module")
def data():
    return prepare_splits(small_log(sources=8, events=400), SplitSpec(inductive_mask_fraction=0.1, seed=1))


def fresh(data, **kw):
    return TETGN(tiny_config(**kw), data.full.num_nodes, data.full.feat_dim)


def zero_decoder(model):
    for n in model.params:
        if n.startswith("dec."):
            model.params[n].data[...] = 0.0


# -------------------------------------------------------------------- heads

def test_zero_decoder_scores_half(rng):
    model = tiny_model(small_log())
    zero_decoder(model)
    d = model.cfg.embedding.d_emb
    s = link_score(model, rng.normal(size=(5, d)), rng.normal(size=(5, d))).data
    np.testing.assert_array_equal(s, 0.5)


def test_link_score_gradient_reaches_both_embeddings(rng):
    model = tiny_model(small_log())
    d = model.cfg.embedding.d_emb
    a = ad.Tensor(rng.normal(size=(3, d)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3, d)), requires_grad=True)
    a.grad, b.grad = np.zeros_like(a.data), np.zeros_like(b.data)
    with Tape() as tape:
        loss = ad.sum(link_score(model, a, b))
    ad.backward(tape, loss)
    assert np.abs(a.grad).sum() > 0 and np.abs(b.grad).sum() > 0


def test_initial_loss_is_ln2_with_zero_decoder(data):
    model = fresh(data)
    zero_decoder(model)
    batch = data.train[:40]
    neg = np.random.default_rng(0).integers(0, data.full.num_nodes, (40, 5))
    pos, negl, _ = model.score_batch(batch, neg, TemporalNeighborhoodStore(data.train))
    assert float(bce_with_logits(pos, negl).data) == pytest.approx(math.log(2), abs=1e-15)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(nc_mode="other")


def test_empty_train_log_rejected(data):
    with pytest.raises(ValueError):
        train_epoch(fresh(data), data.train[:0], CFG)


# ----------------------------------------------------------------- training

def test_loss_decreases_over_twenty_epochs(data):
    model = fresh(data)
    cfg = TrainConfig(batch_size=40, n_neg=5, lr=1e-3)
    losses = [train_epoch(model, data.train, cfg, e) for e in range(20)]
    assert losses[-1] < 0.9 * losses[0]


def test_same_seed_same_loss_trajectory(data):
    runs = [fit(fresh(data), data, CFG).losses for _ in range(2)]
    assert runs[0] == runs[1]


def test_epoch_starts_from_reset_state(data):
    a, b = fresh(data), fresh(data)
    # b has state left over from streaming, which the epoch must discard
    stream_evaluate(b, data, CFG)
    b.params.load_state(a.params.copy_values())
    b.table.row_of[:] = -1
    b.table.row_of[a.table.row_of >= 0] = a.table.row_of[a.table.row_of >= 0]
    assert train_epoch(a, data.train, CFG) == train_epoch(b, data.train, CFG)


# --------------------------------------------------------------- evaluation

def test_eval_leaves_model_untouched(data):
    model = fresh(data)
    fit(model, data, CFG)
    digest, rows, blob = model.params.digest(), model.table.rows, model.snapshot()
    for mode in ("transductive", "inductive"):
        rep = evaluate_link_prediction(model, data, CFG, mode)
        assert 0.0 <= rep.mean <= 1.0
    assert model.params.digest() == digest
    assert model.table.rows == rows and model.snapshot() == blob


def test_eval_twice_identical(data):
    model = fresh(data)
    fit(model, data, CFG)
    a = evaluate_link_prediction(model, data, CFG).mean
    assert evaluate_link_prediction(model, data, CFG).mean == a


def test_partitions_disjoint_and_exhaustive(data):
    res = stream_evaluate(fresh(data), data, CFG)
    for split in ("val", "test"):
        n = sum(res.get((split, s, "count"), 0) for s in ("transductive", "inductive"))
        assert n == len(getattr(data, split))
    assert res["id_rows_unchanged"]


def test_inductive_extends_table_and_keeps_rows(data):
    model = fresh(data)
    fit(model, data, CFG)
    res = stream_evaluate(model, data, CFG)
    assert res["extensions"] >= len(data.unseen) - 1
    assert res["id_rows_unchanged"]


def test_inductive_mode_needs_unseen_nodes():
    data = prepare_splits(small_log(), SplitSpec(inductive_mask_fraction=0.0))
    with pytest.raises(ValueError, match="unseen"):
        evaluate_link_prediction(fresh(data), data, CFG, "inductive")
    with pytest.raises(ValueError):
        evaluate_link_prediction(fresh(data), data, CFG, "semi")


@pytest.mark.parametrize("mode", ["exp", "raw_id", "off"])
def test_ablation_arms_share_one_harness(data, mode):
    spec = RunSpec(tiny_config(mode=mode), TrainConfig(batch_size=40, n_neg=2, epochs=1))
    model, res, fitted = run_link_prediction(data, spec)
    assert 0.0 <= res[("test", "transductive", "AP")] <= 1.0
    if mode == "off":
        assert model.table.rows == 0


def test_eval_report_from_values():
    rep = EvalReport.from_values("transductive", "AP", [0.5, 0.7])
    assert rep.mean == pytest.approx(0.6) and rep.std == pytest.approx(0.1) and rep.values == [0.5, 0.7]


# ------------------------------------------------------ node classification

def test_node_classification_auc(data):
    model = fresh(data)
    fit(model, data, CFG)
    digest = model.params.digest()
    rep = evaluate_node_classification(model, data, CFG)
    assert rep.metric == "AUC" and 0.0 <= rep.mean <= 1.0
    assert model.params.digest() == digest


def test_node_classification_single_class_rejected():
    log = small_log(sources=8, events=400)
    log.labels[:] = 0
    log.labels[0] = 1
    data = prepare_splits(log, SplitSpec())
    with pytest.raises(ValueError, match="single class"):
        evaluate_node_classification(fresh(data), data, CFG)


# -------------------------------------------------------------------- sweep

def test_sweep_grid_sixteen_rows(data):
    spec = RunSpec(tiny_config(), TrainConfig(batch_size=80, n_neg=1, epochs=1))
    rows = hyperparameter_sweep(data, spec, repeats=2)
    assert len(rows) == 16
    assert {(r["alpha"], r["beta"], r["d"]) for r in rows} == \
        {(a, b, d) for a in (1.0, 2.0) for b in (0.1, 1.0) for d in (4, 12, 20, 28)}
    assert all(r["std"] >= 0 and 0 <= r["mean"] <= 1 for r in rows)
    text = sweep_csv(rows).splitlines()
    assert text[0] == "alpha,beta,d,setting,metric,mean,std" and len(text) == 17


def test_sweep_rejects_empty_grid(data):
    with pytest.raises(ValueError):
        hyperparameter_sweep(data, RunSpec(tiny_config(), CFG), alphas=())
