"""Independent reference implementations used only by the tests.

Everything here is float64 and written against the math directly, not
against the library code, so agreement is evidence rather than tautology.
"""

import numpy as np


def fd_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar f at x (any shape)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2 * eps)
        it.iternext()
    return g


def ref_mlp(x, weights, biases, act="tanh"):
    """Plain MLP forward; activation on all but the last layer."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < len(weights) - 1:
            if act == "tanh":
                h = np.tanh(h)
            elif act == "relu":
                h = np.maximum(h, 0.0)
            else:
                raise ValueError(act)
    return h


def ref_conv2d(x, w, b, stride=1, pad=0):
    """Direct-loop convolution, NCHW by KCkk."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, ww = x.shape
    k = w.shape[2]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        h, ww = h + 2 * pad, ww + 2 * pad
    oh = (h - k) // stride + 1
    ow = (ww - k) // stride + 1
    out = np.zeros((n, w.shape[0], oh, ow))
    for ni in range(n):
        for ko in range(w.shape[0]):
            for i in range(oh):
                for j in range(ow):
                    patch = x[ni, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[ni, ko, i, j] = np.sum(patch * w[ko]) + b[ko]
    return out


def ref_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def ref_adam_step(x, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    """One optimizer update in float64; returns (x, m, v)."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mh = m / (1 - b1 ** t)
    vh = v / (1 - b2 ** t)
    return x - lr * mh / (np.sqrt(vh) + eps), m, v


def ref_box_sdf(p, half):
    q = np.abs(np.asarray(p, dtype=np.float64)) - half
    return float(np.linalg.norm(np.maximum(q, 0.0)) + min(max(q[0], q[1], q[2]), 0.0))


def ref_cylinder_sdf(p, radius, half_h):
    p = np.asarray(p, dtype=np.float64)
    dr = np.hypot(p[0], p[1]) - radius
    dz = abs(p[2]) - half_h
    return float(min(max(dr, dz), 0.0) + np.hypot(max(dr, 0.0), max(dz, 0.0)))


def ref_gmm_loglik(x, weights, means, variances):
    """Total log-likelihood of a diagonal Gaussian mixture, via logsumexp."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    k = len(weights)
    comp = np.zeros((n, k))
    for j in range(k):
        var = variances[j]
        quad = np.sum((x - means[j]) ** 2 / var, axis=1)
        comp[:, j] = np.log(weights[j]) - 0.5 * (quad + np.sum(np.log(var)) + d * np.log(2 * np.pi))
    m = comp.max(axis=1, keepdims=True)
    return float(np.sum(m.squeeze(1) + np.log(np.sum(np.exp(comp - m), axis=1))))


def ref_entropy(counts):
    """Natural-log entropy of a discrete distribution given raw counts."""
    counts = np.asarray(counts, dtype=np.float64)
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def ref_bilinear(plane, x, y):
    """Bilinear sample of plane (C, H, W) at continuous (x, y), edge clamped."""
    c, h, w = plane.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = plane[:, y0, x0] * (1 - fx) + plane[:, y0, x1] * fx
    bot = plane[:, y1, x0] * (1 - fx) + plane[:, y1, x1] * fx
    return top * (1 - fy) + bot * fy


def ref_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def ref_bce_logits(logits, targets):
    """Stable elementwise binary cross-entropy from logits."""
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))


def ref_cvae_loss(e0, e1, eta, enc_w, enc_b, dec_w, dec_b, z_dim, beta):
    """Reconstruction + beta KL, batch averaged, all in float64."""
    e0 = np.asarray(e0, dtype=np.float64)
    e1 = np.asarray(e1, dtype=np.float64)
    stats = ref_mlp(np.concatenate([e0, e1], axis=1), enc_w, enc_b, act="relu")
    mu = stats[:, :z_dim]
    logvar = stats[:, z_dim:2 * z_dim]
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * np.asarray(eta, dtype=np.float64)
    e1h = ref_mlp(np.concatenate([z, e0], axis=1), dec_w, dec_b, act="relu")
    mse = np.sum((e1h - e1) ** 2)
    kl = 0.5 * np.sum(mu ** 2 + sigma ** 2 - 1.0 - logvar)
    return (mse + beta * kl) / e0.shape[0]


def ref_head_bce_loss(x, w, b, targets):
    """Mean BCE of a ReLU MLP head over a batch, float64."""
    logits = ref_mlp(x, w, b, act="relu")
    return float(np.sum(ref_bce_logits(logits, targets)) / x.shape[0])


def ref_action_loss(raw, r, f):
    """Orientation + direction loss from raw 7-wide head output, float64."""
    raw = np.asarray(raw, dtype=np.float64)
    rh = raw[:, :4] / np.linalg.norm(raw[:, :4], axis=1, keepdims=True)
    fh = np.tanh(raw[:, 4:7])
    lr = np.mean(1.0 - np.abs(np.sum(rh * np.asarray(r, dtype=np.float64), axis=1)))
    lf = np.mean(np.sum((np.asarray(f, dtype=np.float64) - fh) ** 2, axis=1))
    return lr + lf
