"""Parameter store, layers and the Adam optimizer."""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

import numpy as np

from hifinet.errors import ShapeError
from hifinet.nn import tensor as T
from hifinet.nn.tensor import Tensor


class ParamStore:
    """Named parameters, their gradient slots and Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        self.steps[name] = 0
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self, prefix: str | Sequence[str] = "") -> list[str]:
        prefixes = (prefix,) if isinstance(prefix, str) else tuple(prefix)
        return [n for n in self.params if n.startswith(prefixes)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict and set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for n, arr in state.items():
            if n not in self.params:
                continue
            if arr.shape != self.params[n].shape:
                raise ShapeError(f"{n}: checkpoint shape {arr.shape} != {self.params[n].shape}")
            self.params[n].data[...] = arr

    def checksum(self, prefix: str | Sequence[str] = "") -> str:
        h = hashlib.sha256()
        for n in sorted(self.names(prefix)):
            h.update(n.encode())
            h.update(np.ascontiguousarray(self.params[n].data).tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for p in self.params.values())


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, names: Iterable[str] | None = None) -> None:
    """One bias-corrected Adam update over ``names`` (default: every parameter)."""
    for n in (store.params if names is None else names):
        p = store.params[n]
        g = p.grad
        store.steps[n] += 1
        t = store.steps[n]
        m = store.m[n]
        v = store.v[n]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 activation: str = "identity", rng: np.random.Generator | None = None):
        if activation not in T.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name, self.d_in, self.d_out, self.activation = name, d_in, d_out, activation
        self.W = store.add(f"{name}.W", fan_in_uniform(rng, d_in, (d_in, d_out)))
        self.b = store.add(f"{name}.b", np.zeros(d_out))

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"{self.name}: input has {x.shape[-1]} features, expected {self.d_in}")
        return T.ACTIVATIONS[self.activation](T.matmul(x, self.W) + self.b)


def dense_forward(x, layer: Dense, activation: str | None = None) -> Tensor:
    if activation is None:
        return layer(x)
    z = T.matmul(T.as_tensor(x), layer.W) + layer.b
    return T.ACTIVATIONS[activation](z)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = store.add(f"{name}.gain", np.ones(d))
        self.bias = store.add(f"{name}.bias", np.zeros(d))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.eps) * self.gain + self.bias


class LSTM:
    """Single LSTM layer, gate order (input, forget, candidate, output)."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_h: int,
                 rng: np.random.Generator | None = None, forget_bias: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name, self.d_in, self.d_h = name, d_in, d_h
        self.Wx = store.add(f"{name}.Wx", fan_in_uniform(rng, d_h, (d_in, 4 * d_h)))
        self.Wh = store.add(f"{name}.Wh", fan_in_uniform(rng, d_h, (d_h, 4 * d_h)))
        b = np.zeros(4 * d_h)
        b[d_h:2 * d_h] = forget_bias
        self.b = store.add(f"{name}.b", b)

    def __call__(self, steps: Sequence) -> list[Tensor]:
        """Run over a list of per-step ``(B, d_in)`` inputs from a zero state."""
        h_dim = self.d_h
        hs: list[Tensor] = []
        h = c = None
        for x in steps:
            x = T.as_tensor(x)
            if x.shape[-1] != self.d_in:
                raise ShapeError(f"{self.name}: input has {x.shape[-1]} features, expected {self.d_in}")
            z = T.matmul(x, self.Wx) + self.b
            if h is not None:
                z = z + T.matmul(h, self.Wh)
            i = T.sigmoid(z[..., :h_dim])
            f = T.sigmoid(z[..., h_dim:2 * h_dim])
            g = T.tanh(z[..., 2 * h_dim:3 * h_dim])
            o = T.sigmoid(z[..., 3 * h_dim:])
            c = i * g if c is None else f * c + i * g
            h = o * T.tanh(c)
            hs.append(h)
        return hs


def as_steps(seq) -> list:
    """Split a ``(..., T, d)`` array or tensor into a list of ``(..., d)`` steps."""
    if isinstance(seq, (list, tuple)):
        return list(seq)
    if isinstance(seq, Tensor):
        return [seq[..., t, :] for t in range(seq.shape[-2])]
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim < 2:
        raise ShapeError(f"sequence must be at least 2-d (T, d), got {arr.shape}")
    return [Tensor(arr[..., t, :]) for t in range(arr.shape[-2])]


def lstm_forward(seq, layer: LSTM) -> tuple[Tensor, Tensor]:
    """Full hidden sequence (``..., T, d_h``) and the last hidden state."""
    hs = layer(as_steps(seq))
    return T.stack(hs, axis=-2), hs[-1]
