"""Temporal computation trees, their isomorphism test, and a distinguishability bench.

A tree unrolls ``L`` rounds of message passing around a node at a query
time: the children of a position are its strict-past temporal neighbors,
each queried at its edge's timestamp. Two trees are isomorphic when some
reordering of children makes structure, timestamps and (unless anonymous)
payloads agree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable

import numpy as np

from .events import EventLog, TemporalNeighborhoodStore
from .model import TETGN, ModelConfig
from .trajectory import TeParams, id_vector

Path = tuple[int, ...]


@dataclass
class TCTNode:
    node: int
    time: float
    payload: np.ndarray
    children: list["TCTNode"] = field(default_factory=list)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)

    def leaves(self) -> int:
        return 1 if not self.children else sum(c.leaves() for c in self.children)


@dataclass
class TemporalComputationTree:
    root: TCTNode
    layers: int
    payload_kind: str = "feature"  # "feature": exact bytes, "id": rounded learned vectors


@dataclass
class IsomorphismCertificate:
    verdict: bool
    witness: dict[Path, Path] | None = None

    def __bool__(self) -> bool:
        return self.verdict


def zero_payload(dim: int = 0) -> Callable[[int], np.ndarray]:
    z = np.zeros(dim)
    return lambda node: z


def build_tct(store: TemporalNeighborhoodStore, i: int, t: float, layers: int,
              payload: Callable[[int], np.ndarray] | None = None,
              payload_kind: str = "feature") -> TemporalComputationTree:
    """Unroll ``layers`` rounds of neighbor expansion below ``(i, t)``.

    ``payload(node)`` gives the vector stored at each position (zero node
    features by default).
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    payload = payload or zero_payload()

    def expand(node: int, time: float, depth: int) -> TCTNode:
        out = TCTNode(node, time, np.asarray(payload(node), dtype=np.float64))
        if depth < layers:
            out.children = [expand(nbr, ts, depth + 1) for nbr, ts, _ in store.neighbors_before(node, time)]
        return out

    return TemporalComputationTree(expand(int(i), float(t), 0), layers, payload_kind)


def _payload_key(p: np.ndarray, kind: str):
    if kind == "id":
        return tuple(np.round(p, 12).tolist())
    return np.ascontiguousarray(p, dtype=np.float64).tobytes()


def _canon(n: TCTNode, anonymous: bool, kind: str):
    key = () if anonymous else _payload_key(n.payload, kind)
    return (n.time, key, tuple(sorted(_canon(c, anonymous, kind) for c in n.children)))


def canonical_form(tree: TemporalComputationTree, anonymous: bool):
    """Order-free nested tuple; equal forms exactly when the trees are isomorphic."""
    return _canon(tree.root, anonymous, tree.payload_kind)


def tct_isomorphic(t1: TemporalComputationTree, t2: TemporalComputationTree,
                   anonymous: bool) -> IsomorphismCertificate:
    """Exact test by canonical sorting; the witness maps child paths of ``t1`` to ``t2``."""
    if canonical_form(t1, anonymous) != canonical_form(t2, anonymous):
        return IsomorphismCertificate(False)
    witness: dict[Path, Path] = {}

    def canon(n: TCTNode):
        return _canon(n, anonymous, t1.payload_kind)

    def match(a: TCTNode, b: TCTNode, pa: Path, pb: Path) -> None:
        witness[pa] = pb
        ka = sorted(range(len(a.children)), key=lambda k: canon(a.children[k]))
        kb = sorted(range(len(b.children)), key=lambda k: canon(b.children[k]))
        for x, y in zip(ka, kb):
            match(a.children[x], b.children[y], pa + (x,), pb + (y,))

    match(t1.root, t2.root, (), ())
    return IsomorphismCertificate(True, witness)


def isomorphic_by_enumeration(t1: TemporalComputationTree, t2: TemporalComputationTree,
                              anonymous: bool) -> bool:
    """Reference test trying every bijection between sibling lists."""
    def same(a: TCTNode, b: TCTNode) -> bool:
        if a.time != b.time or len(a.children) != len(b.children):
            return False
        if not anonymous and _payload_key(a.payload, t1.payload_kind) != _payload_key(b.payload, t2.payload_kind):
            return False
        return any(all(same(a.children[k], b.children[p[k]]) for k in range(len(p)))
                   for p in permutations(range(len(b.children))))
    return same(t1.root, t2.root)


def witness_is_valid(t1: TemporalComputationTree, t2: TemporalComputationTree,
                     witness: dict[Path, Path], anonymous: bool) -> bool:
    """Check that ``witness`` is a structure-, time- and payload-preserving bijection."""
    def at(tree: TCTNode, path: Path) -> TCTNode:
        for k in path:
            tree = tree.children[k]
        return tree

    if len(set(witness.values())) != len(witness) or len(witness) != t1.root.size() \
            or t1.root.size() != t2.root.size():
        return False
    for pa, pb in witness.items():
        if len(pa) != len(pb) or (pa and witness.get(pa[:-1]) != pb[:-1]):
            return False
        a, b = at(t1.root, pa), at(t2.root, pb)
        if a.time != b.time or len(a.children) != len(b.children):
            return False
        if not anonymous and _payload_key(a.payload, t1.payload_kind) != _payload_key(b.payload, t2.payload_kind):
            return False
    return True


# -------------------------------------------------------------------- bench

VARIANTS = {"no-id": "off", "tetgn": "exp"}


def _variant_model(log: EventLog, variant: str, seed: int, traj_dim: int = 4,
                   mem_dim: int = 100, layers: int = 2) -> TETGN:
    from .embedding import EmbeddingConfig
    cfg = ModelConfig.for_features(log.feat_dim, mem_dim=mem_dim, traj_dim=traj_dim, seed=seed,
                                   te=TeParams(mode=VARIANTS[variant]),
                                   embedding=EmbeddingConfig(layers=layers, d_emb=mem_dim))
    return TETGN(cfg, log.num_nodes, log.feat_dim)


def variant_embeddings(log: EventLog, variant: str, nodes, t: float, seed: int = 0,
                       **model_kw) -> tuple[TETGN, np.ndarray]:
    """Embeddings at ``t`` of an untrained model variant after streaming every event before ``t``."""
    model = _variant_model(log, variant, seed, **model_kw)
    store = TemporalNeighborhoodStore(log)
    past = log[log.t < t]
    if len(past):
        model.ensure_rows(past.nodes())
        model.observe(past)
    model.ensure_rows(np.asarray(nodes))
    return model, model.embed_now(nodes, t, store)


def distinguishability_report(log: EventLog, pair: tuple[int, int], t: float, seed: int = 0,
                              layers: int = 2, variants=("no-id", "tetgn")) -> list[dict]:
    """Per variant: embedding distance of ``pair`` at ``t`` and both TCT verdicts."""
    a, b = int(pair[0]), int(pair[1])
    store = TemporalNeighborhoodStore(log)
    anon = tct_isomorphic(build_tct(store, a, t, layers), build_tct(store, b, t, layers), anonymous=True)
    rows = []
    for variant in variants:
        model, z = variant_embeddings(log, variant, [a, b], t, seed, layers=layers)
        if VARIANTS[variant] == "off":
            pay, kind = zero_payload(log.feat_dim), "feature"
        else:
            model.ensure_rows(np.arange(log.num_nodes))
            ids = id_vector(model.table, np.arange(log.num_nodes)).data
            pay, kind = (lambda n: ids[n]), "id"
        nonanon = tct_isomorphic(build_tct(store, a, t, layers, pay, kind),
                                 build_tct(store, b, t, layers, pay, kind), anonymous=False)
        rows.append({"variant": variant, "pair": [a, b],
                     "distance": float(np.linalg.norm(z[0] - z[1])),
                     "anon_isomorphic": anon.verdict, "nonanon_isomorphic": nonanon.verdict})
    return rows
