"""Parameters, composite layers (MLP, GRU, multi-head attention) and Adam."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass
class Parameter:
    value: Tensor
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class ParameterSet:
    """Named, ordered collection of trainable tensors with Adam state."""

    def __init__(self, seed: int = 0):
        self._params: dict[str, Parameter] = {}
        self.rng = np.random.default_rng(seed)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].value

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def entry(self, name: str) -> Parameter:
        return self._params[name]

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        t = Tensor(value, requires_grad=True, name=name)
        t.grad = np.zeros_like(value)
        self._params[name] = Parameter(t, np.zeros_like(value), np.zeros_like(value))
        return t

    def add_glorot(self, name: str, shape: tuple[int, int]) -> Tensor:
        bound = glorot_bound(shape[0], shape[1])
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def add_zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def append_rows(self, name: str, rows: np.ndarray) -> None:
        """Grow a 2-D parameter along axis 0; existing rows, moments untouched."""
        p = self._params[name]
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, p.value.shape[1])
        pad = np.zeros_like(rows)
        p.value.data = np.concatenate([p.value.data, rows])
        p.value.grad = np.concatenate([p.value.grad, pad])
        p.m = np.concatenate([p.m, pad])
        p.v = np.concatenate([p.v, pad])

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.value.grad = np.zeros_like(p.value.data)

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.value.data for k, p in self._params.items()}

    def state(self) -> dict[str, np.ndarray]:
        """Flat array dict including optimizer moments, for checkpoints."""
        out = {}
        for k, p in self._params.items():
            out[k] = p.value.data
            out[f"{k}@m"] = p.m
            out[f"{k}@v"] = p.v
            out[f"{k}@step"] = np.array([p.step], dtype=np.float64)
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self._params.items():
            p.value.data = np.array(state[k], dtype=np.float64)
            p.value.grad = np.zeros_like(p.value.data)
            p.m = np.array(state[f"{k}@m"], dtype=np.float64)
            p.v = np.array(state[f"{k}@v"], dtype=np.float64)
            p.step = int(state[f"{k}@step"][0])

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state().items()}

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self._params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self._params[k].value.data).tobytes())
        return h.hexdigest()

    def num_values(self) -> int:
        return int(np.sum([p.value.data.size for p in self._params.values()]))


def adam_step(params: ParameterSet, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, names=None) -> None:
    """One bias-corrected Adam update of every parameter (or only ``names``), then zero grads."""
    for name in (params if names is None else names):
        p = params.entry(name)
        g = p.value.grad
        p.step += 1
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        m_hat = p.m / (1 - beta1 ** p.step)
        v_hat = p.v / (1 - beta2 ** p.step)
        p.value.data = p.value.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.value.grad = np.zeros_like(p.value.data)


# ------------------------------------------------------------------ MLP

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "sigmoid": ad.sigmoid, "linear": lambda x: x}


def init_mlp(params: ParameterSet, prefix: str, layer_dims: list[int]) -> None:
    for n, (d_in, d_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        params.add_glorot(f"{prefix}.w{n}", (d_in, d_out))
        params.add_zeros(f"{prefix}.b{n}", (d_out,))


def mlp_forward(params: ParameterSet, prefix: str, x, layer_dims: list[int],
                activation: str = "relu") -> Tensor:
    """Affine + activation per hidden layer; the last layer is affine only."""
    x = ad.as_tensor(x)
    if x.shape[-1] != layer_dims[0]:
        raise ShapeError(f"mlp {prefix}: input dim {x.shape[-1]} != {layer_dims[0]}")
    act = ACTIVATIONS[activation]
    n_layers = len(layer_dims) - 1
    for n in range(n_layers):
        x = ad.add(ad.matmul(x, params[f"{prefix}.w{n}"]), params[f"{prefix}.b{n}"])
        if n < n_layers - 1:
            x = act(x)
    return x


# ------------------------------------------------------------------ GRU

def init_gru(params: ParameterSet, prefix: str, input_size: int, hidden_size: int) -> None:
    for gate in ("z", "r", "h"):
        params.add_glorot(f"{prefix}.W{gate}", (input_size, hidden_size))
        params.add_glorot(f"{prefix}.U{gate}", (hidden_size, hidden_size))
        params.add_zeros(f"{prefix}.b{gate}", (hidden_size,))


def gru_cell(params: ParameterSet, prefix: str, x, h_prev) -> Tensor:
    x, h_prev = ad.as_tensor(x), ad.as_tensor(h_prev)
    W = {g: params[f"{prefix}.W{g}"] for g in "zrh"}
    U = {g: params[f"{prefix}.U{g}"] for g in "zrh"}
    if x.shape[-1] != W["z"].shape[0] or h_prev.shape[-1] != U["z"].shape[0]:
        raise ShapeError(f"gru {prefix}: x {x.shape}, h {h_prev.shape} vs "
                         f"input {W['z'].shape[0]}, hidden {U['z'].shape[0]}")

    def gate(g, hh):
        return ad.add(ad.add(ad.matmul(x, W[g]), ad.matmul(hh, U[g])), params[f"{prefix}.b{g}"])

    z = ad.sigmoid(gate("z", h_prev))
    r = ad.sigmoid(gate("r", h_prev))
    h_tilde = ad.tanh(gate("h", ad.mul(r, h_prev)))
    # (1 - z) * h_tilde + z * h_prev
    return ad.add(h_tilde, ad.mul(z, ad.sub(h_prev, h_tilde)))


# ------------------------------------------------------------ attention

def init_attention(params: ParameterSet, prefix: str, query_dim: int, key_dim: int,
                   value_dim: int, model_dim: int) -> None:
    params.add_glorot(f"{prefix}.Wq", (query_dim, model_dim))
    params.add_glorot(f"{prefix}.Wk", (key_dim, model_dim))
    params.add_glorot(f"{prefix}.Wv", (value_dim, model_dim))
    params.add_glorot(f"{prefix}.Wo", (model_dim, model_dim))
    params.add_zeros(f"{prefix}.bo", (model_dim,))


@dataclass
class AttentionOutput:
    out: Tensor
    weights: np.ndarray = field(repr=False)


def multi_head_attention(params: ParameterSet, prefix: str, query, keys, values, heads: int,
                         mask: np.ndarray) -> AttentionOutput:
    """Scaled dot-product attention of ``query [B, dq]`` over ``keys [B, N, dk]``.

    ``mask [B, N]`` marks usable entries. A row with nothing usable yields
    a zero output vector.
    """
    query, keys, values = ad.as_tensor(query), ad.as_tensor(keys), ad.as_tensor(values)
    mask = np.asarray(mask, dtype=bool)
    B, N = keys.shape[0], keys.shape[1]
    if values.shape[:2] != (B, N) or mask.shape != (B, N) or query.shape[0] != B:
        raise ShapeError(f"attention {prefix}: query {query.shape}, keys {keys.shape}, "
                         f"values {values.shape}, mask {mask.shape}")
    dm = params[f"{prefix}.Wq"].shape[1]
    if dm % heads:
        raise ShapeError(f"attention {prefix}: model dim {dm} not divisible by {heads} heads")
    dh = dm // heads

    q = ad.reshape(ad.matmul(query, params[f"{prefix}.Wq"]), (B, heads, 1, dh))
    k = ad.transpose(ad.reshape(ad.matmul(keys, params[f"{prefix}.Wk"]), (B, N, heads, dh)), (0, 2, 3, 1))
    v = ad.transpose(ad.reshape(ad.matmul(values, params[f"{prefix}.Wv"]), (B, N, heads, dh)), (0, 2, 1, 3))
    scores = ad.scale(ad.matmul(q, k), 1.0 / np.sqrt(dh))  # [B, h, 1, N]
    weights = ad.softmax(scores, mask[:, None, None, :])
    mixed = ad.reshape(ad.matmul(weights, v), (B, dm))  # heads concatenated
    out = ad.add(ad.matmul(mixed, params[f"{prefix}.Wo"]), params[f"{prefix}.bo"])
    has_any = mask.any(axis=1, keepdims=True).astype(np.float64)
    if not has_any.all():
        out = ad.mul(out, has_any)
    return AttentionOutput(out, weights.data[:, :, 0, :])
