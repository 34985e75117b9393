"""Layers and composite losses built on the autodiff primitives."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Linear:
    def __init__(self, rng, name: str, nin: int, nout: int):
        self.w = Parameter(f"{name}.w", glorot(rng, (nin, nout), nin, nout))
        self.b = Parameter(f"{name}.b", np.zeros(nout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w.tensor), self.b.tensor)

    def params(self):
        return [self.w, self.b]


class Conv2d:
    def __init__(self, rng, name: str, cin: int, cout: int, k: int = 3, stride: int = 1, pad: int | None = None):
        fan_in, fan_out = cin * k * k, cout * k * k
        self.w = Parameter(f"{name}.w", glorot(rng, (cout, cin, k, k), fan_in, fan_out))
        self.b = Parameter(f"{name}.b", np.zeros(cout, dtype=np.float32))
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.conv2d(x, self.w.tensor, stride=self.stride, pad=self.pad), self.b.tensor)

    def params(self):
        return [self.w, self.b]


class MLP:
    """Dense stack with ReLU between layers and a linear last layer."""

    def __init__(self, rng, name: str, dims):
        self.layers = [Linear(rng, f"{name}.l{i}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


# ---------------------------------------------------------------------------
# composite expressions (all lower onto recorded primitives)


def tile_cols(t: Tensor, n: int) -> Tensor:
    """Repeat a (B,1) column n times to (B,n)."""
    return ad.concat([t] * n, axis=1)


def abs_(x: Tensor) -> Tensor:
    return ad.add(ad.relu(x), ad.relu(ad.mul(x, ad.const(-1.0))))


def softplus(x: Tensor) -> Tensor:
    # log(1 + exp(x)); callers pass non-positive x so exp never overflows
    return ad.log(ad.add(ad.exp(x), Tensor(np.ones(x.shape, dtype=np.float32))))


def bce_with_logits(logit: Tensor, target: Tensor) -> Tensor:
    """Elementwise binary cross entropy, numerically stable form."""
    neg_abs = ad.mul(abs_(logit), ad.const(-1.0))
    return ad.add(ad.add(ad.relu(logit), ad.mul(ad.mul(logit, target), ad.const(-1.0))), softplus(neg_abs))


def mse_sum(a: Tensor, b: Tensor) -> Tensor:
    d = a - b
    return ad.sum_(ad.mul(d, d))


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over all elements."""
    ones = Tensor(np.ones(mu.shape, dtype=np.float32))
    inner = ad.add(ad.add(ad.mul(mu, mu), ad.exp(logvar)), ad.mul(ad.add(logvar, ones), ad.const(-1.0)))
    return ad.mul(ad.sum_(inner), ad.const(0.5))


def normalize_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each row of (B,n) to unit L2 norm (differentiable)."""
    sq = ad.sum_(ad.mul(x, x), axis=1, keepdims=True)
    inv = ad.exp(ad.mul(ad.log(ad.add(sq, Tensor(np.full(sq.shape, eps, dtype=np.float32)))), ad.const(-0.5)))
    return ad.mul(x, tile_cols(inv, x.shape[1]))


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of (B,C,H,W) via concat+reshape."""
    b, c, h, w = x.shape
    col = ad.reshape(x, (b, c, h, w, 1))
    wide = ad.reshape(ad.concat([col, col], axis=4), (b, c, h, 2 * w))
    row = ad.reshape(wide, (b, c, h, 1, 2 * w))
    return ad.reshape(ad.concat([row, row], axis=3), (b, c, 2 * h, 2 * w))


# ---------------------------------------------------------------------------
# parameter (de)serialization


def state_dict(params) -> dict[str, np.ndarray]:
    return {p.name: p.data.copy() for p in params}


def load_state(params, sections: dict[str, np.ndarray]) -> None:
    """Load values by parameter name; missing or misshapen sections are rejected."""
    for p in params:
        if p.name not in sections:
            raise KeyError(f"checkpoint missing section {p.name!r}")
        val = sections[p.name]
        if tuple(val.shape) != tuple(p.data.shape):
            raise ValueError(f"checkpoint section {p.name!r} has shape {val.shape}, expected {p.data.shape}")
        p.tensor.data = np.asarray(val, dtype=np.float32).copy()
        p.m = np.zeros_like(p.tensor.data)
        p.v = np.zeros_like(p.tensor.data)
        p.t = 0
        p.tensor.grad = None
