"""Minimal dense-tensor numerics with reverse-mode automatic differentiation.

Float32 throughout. Operations record onto an explicit :class:`Tape` (a
topologically ordered list of primitive applications); :func:`backward`
replays it once in reverse. Without an active tape every op is a plain
numpy forward pass, which is the inference path.

Conv2d supports odd square kernels, stride 1 or 2, and zero padding of 0 or
k//2 only. Broadcasting is limited to bias-add and scalar multiply; anything
else requires an explicit reshape.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=F32)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # sugar; everything lowers onto the primitives below
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __sub__(self, other):
        other = _as_tensor(other)
        return add(self, mul(other, const(-1.0)))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def const(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=F32))


class Parameter:
    """Trainable tensor plus Adam moment state."""

    __slots__ = ("name", "tensor", "m", "v", "t")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.tensor = Tensor(value, requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.t = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


class _Node:
    __slots__ = ("out", "fn")

    def __init__(self, out: Tensor, fn):
        self.out = out
        self.fn = fn


class Tape:
    """Ordered record of primitive applications within one training step."""

    def __init__(self):
        self.ops: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False


_ACTIVE: list[Tape] = []


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].ops.append(_Node(out, backward_fn))
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not tape.ops:
        raise ValueError("backward: empty tape")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.ops):
        if node.out.grad is None:
            continue
        node.fn(node.out.grad)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _record(out, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also bias-add of a vector onto rows of a matrix or
    onto the channel axis of a (B,C,H,W) batch."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        out = Tensor(a.data + b.data)

        def back(g):
            _acc(a, g)
            _acc(b, g)

    elif len(sb) == 1 and len(sa) == 2 and sa[1] == sb[0]:
        out = Tensor(a.data + b.data[None, :])

        def back(g):
            _acc(a, g)
            _acc(b, g.sum(axis=0))

    elif len(sb) == 1 and len(sa) == 4 and sa[1] == sb[0]:
        out = Tensor(a.data + b.data[None, :, None, None])

        def back(g):
            _acc(a, g)
            _acc(b, g.sum(axis=(0, 2, 3)))

    else:
        raise ShapeError(f"add: incompatible shapes {sa} + {sb}")
    return _record(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise multiply; one operand may be a scalar (size 1)."""
    sa, sb = a.data.shape, b.data.shape
    if not (sa == sb or a.data.size == 1 or b.data.size == 1):
        raise ShapeError(f"mul: incompatible shapes {sa} * {sb}")
    if sa == sb:
        ad, bd = a.data, b.data
    elif b.data.size == 1:
        ad, bd = a.data, b.data.reshape(())
    else:
        ad, bd = a.data.reshape(()), b.data
    out = Tensor(ad * bd)

    def back(g):
        ga = g * bd
        gb = g * ad
        if a.data.size == 1 and out.data.size > 1:
            ga = ga.sum().reshape(a.data.shape)
        if b.data.size == 1 and out.data.size > 1:
            gb = gb.sum().reshape(b.data.shape)
        _acc(a, ga.reshape(a.data.shape))
        _acc(b, gb.reshape(b.data.shape))

    return _record(out, (a, b), back)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def back(g):
        _acc(x, g * (x.data > 0))

    return _record(out, (x,), back)


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))

    def back(g):
        _acc(x, g * (1.0 - out.data * out.data))

    return _record(out, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out_d = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    out = Tensor(out_d)

    def back(g):
        _acc(x, g * out.data * (1.0 - out.data))

    return _record(out, (x,), back)


def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data))

    def back(g):
        _acc(x, g * out.data)

    return _record(out, (x,), back)


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def back(g):
        _acc(x, g / x.data)

    return _record(out, (x,), back)


def _im2col(xp: np.ndarray, k: int, stride: int):
    # xp: padded input (B, C, Hp, Wp) -> (B, C*k*k, Ho*Wo)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation). x: (B,Cin,H,W), w: (Cout,Cin,k,k)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and kernel, got {x.data.shape}, {w.data.shape}")
    cout, cin, kh, kw = w.data.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd square, got {w.data.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if pad not in (0, kh // 2):
        raise ShapeError(f"conv2d: pad must be 0 or k//2, got {pad}")
    if x.data.shape[1] != cin:
        raise ShapeError(f"conv2d: channel mismatch {x.data.shape} vs {w.data.shape}")
    k = kh
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols, ho, wo = _im2col(xp, k, stride)
    w2 = w.data.reshape(cout, cin * k * k)
    out_d = np.matmul(w2[None, :, :], cols).reshape(x.data.shape[0], cout, ho, wo)
    out = Tensor(out_d)

    def back(g):
        gf = g.reshape(g.shape[0], cout, ho * wo)
        if w.requires_grad:
            gw = np.einsum("bop,bkp->ok", gf, cols, optimize=True).reshape(w.data.shape)
            _acc(w, gw.astype(F32))
        if x.requires_grad:
            gcols = np.matmul(w2.T[None, :, :], gf)  # (B, C*k*k, P)
            gxp = np.zeros_like(xp)
            gc = gcols.reshape(g.shape[0], cin, k, k, ho, wo)
            for di in range(k):
                for dj in range(k):
                    gxp[:, :, di : di + ho * stride : stride, dj : dj + wo * stride : stride] += gc[:, :, di, dj]
            if pad:
                gxp = gxp[:, :, pad:-pad, pad:-pad]
            _acc(x, gxp)

    return _record(out, (x, w), back)


def avgpool2(x: Tensor) -> Tensor:
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2: extents must be even, got {x.data.shape}")
    out = Tensor(x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)))

    def back(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * F32(0.25)
        _acc(x, gx)

    return _record(out, (x,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))

    def back(g):
        off = 0
        for t in tensors:
            n = t.data.shape[axis]
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(off, off + n)
            _acc(t, g[tuple(idx)])
            off += n

    return _record(out, tuple(tensors), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=axis, keepdims=True))

    def back(g):
        y = out.data
        _acc(x, (g - (g * y).sum(axis=axis, keepdims=True)) * y)

    return _record(out, (x,), back)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            _acc(x, np.broadcast_to(g.reshape(()), x.data.shape).astype(F32))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _acc(x, np.broadcast_to(ge, x.data.shape).astype(F32))

    return _record(out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))

    def back(g):
        scale = F32(1.0 / n)
        if axis is None:
            _acc(x, np.broadcast_to((g * scale).reshape(()), x.data.shape).astype(F32))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _acc(x, np.broadcast_to(ge * scale, x.data.shape).astype(F32))

    return _record(out, (x,), back)


def slice_(x: Tensor, key) -> Tensor:
    out = Tensor(x.data[key].copy())

    def back(g):
        gx = np.zeros_like(x.data)
        gx[key] += g
        _acc(x, gx)

    return _record(out, (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape).copy())

    def back(g):
        _acc(x, g.reshape(x.data.shape))

    return _record(out, (x,), back)


def bilerp(plane: Tensor, i0: np.ndarray, j0: np.ndarray, fi: np.ndarray, fj: np.ndarray) -> Tensor:
    """Bilinear gather from a (C,G,G) grid at precomputed cell corners.

    i0/j0 are integer lower corners, fi/fj the in-cell fractions; all are
    fixed (non-differentiated) query data. Output is (N, C).
    """
    c, gi, gj = plane.data.shape
    i1 = np.minimum(i0 + 1, gi - 1)
    j1 = np.minimum(j0 + 1, gj - 1)
    w00 = ((1 - fi) * (1 - fj)).astype(F32)
    w01 = ((1 - fi) * fj).astype(F32)
    w10 = (fi * (1 - fj)).astype(F32)
    w11 = (fi * fj).astype(F32)
    p = plane.data
    out_d = (
        p[:, i0, j0] * w00 + p[:, i0, j1] * w01 + p[:, i1, j0] * w10 + p[:, i1, j1] * w11
    ).T.copy()
    out = Tensor(out_d)

    def back(g):
        gp = np.zeros_like(plane.data)
        gt = g.T  # (C, N)
        np.add.at(gp, (slice(None), i0, j0), gt * w00)
        np.add.at(gp, (slice(None), i0, j1), gt * w01)
        np.add.at(gp, (slice(None), i1, j0), gt * w10)
        np.add.at(gp, (slice(None), i1, j1), gt * w11)
        _acc(plane, gp)

    return _record(out, (plane,), back)


# ---------------------------------------------------------------------------
# optimizer

ADAM_BETA1 = F32(0.9)
ADAM_BETA2 = F32(0.999)
ADAM_EPS = F32(1e-8)


def zero_grad(params) -> None:
    for p in params:
        p.tensor.grad = None


def optimizer_step(params, lr: float) -> None:
    """One Adam update over ``params``; gradients are consumed and zeroed."""
    lr = F32(lr)
    for p in params:
        g = p.tensor.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"NaN/inf gradient in parameter {p.name!r}")
        p.t += 1
        p.m = ADAM_BETA1 * p.m + (F32(1) - ADAM_BETA1) * g
        p.v = ADAM_BETA2 * p.v + (F32(1) - ADAM_BETA2) * (g * g)
        mhat = p.m / (F32(1) - ADAM_BETA1 ** p.t)
        vhat = p.v / (F32(1) - ADAM_BETA2 ** p.t)
        p.tensor.data -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        p.tensor.grad = None
