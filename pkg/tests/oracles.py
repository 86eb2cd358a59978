"""Slow, direct reference implementations used as independent test oracles.

Everything here is written from the defining formulas with explicit loops
or dense sums in float64, sharing no code with the library.
"""

from __future__ import annotations

import cmath
import math

import numpy as np


def loop_matmul(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            out[i, j] = sum(a[i, t] * b[t, j] for t in range(k))
    return out


def gelu(x):
    return np.vectorize(lambda v: 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))(np.asarray(x, dtype=np.float64))


def naive_dft(u, n_modes):
    """``u_hat_j = (1/N) sum_m u_m exp(-2 pi i j m / N)`` for one channel."""
    n_grid = len(u)
    return [sum(u[m] * cmath.exp(-2j * math.pi * j * m / n_grid) for m in range(n_grid)) / n_grid
            for j in range(n_modes)]


def fno_layer(u, k_re, k_im, w, act=gelu):
    """``act(W u(x) + sum over the full conjugate-symmetric spectrum of (K u_hat)(j) e^{2 pi i j x})``
    on the grid, evaluated as a plain double sum.

    ``u`` is ``[N, d]``; ``K`` is shared over channels.
    """
    u = np.asarray(u, dtype=np.float64)
    n_grid, d = u.shape
    n = k_re.shape[0]
    kmat = np.asarray(k_re, dtype=np.float64) + 1j * np.asarray(k_im, dtype=np.float64)
    out = np.zeros((n_grid, d))
    for ch in range(d):
        uh = naive_dft(u[:, ch], n)
        vh = [sum(kmat[j, l] * uh[l] for l in range(n)) for j in range(n)]
        # full spectrum: v_j at j, conj(v_j) at N - j (the two coincide at 0 and N/2)
        spectrum = {}
        for j in range(n):
            spectrum[j] = vh[j]
            if j != 0 and 2 * j != n_grid:
                spectrum[n_grid - j] = np.conj(vh[j])
        for m in range(n_grid):
            val = sum(c * cmath.exp(2j * math.pi * j * m / n_grid) for j, c in spectrum.items())
            out[m, ch] = val.real
    local = u @ np.asarray(w, dtype=np.float64).T
    return act(local + out)


def mlp(x, layers, act=gelu, final_activation=False):
    """Dense layers given as ``[(W, b), ...]`` with ``W`` of shape (in, out)."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(layers):
        h = h @ np.asarray(w, dtype=np.float64) + np.asarray(b, dtype=np.float64)
        if i < len(layers) - 1 or final_activation:
            h = act(h)
    return h


def nadaraya_watson(y, node_coords, features, eps):
    """Joint (non-factorized) normalized Gaussian weights over all nodes,
    evaluated with a log-sum-exp shift, then averaged features."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    nodes = np.asarray(node_coords, dtype=np.float64)
    feats = np.asarray(features, dtype=np.float64).reshape(len(nodes), -1)
    out = np.zeros((len(y), feats.shape[1]))
    weights = np.zeros((len(y), len(nodes)))
    for q, point in enumerate(y):
        point = np.clip(point, 0.0, 1.0)
        logits = np.array([-eps * sum((point[a] - node[a]) ** 2 for a in range(len(point))) for node in nodes])
        logits -= logits.max()
        e = np.exp(logits)
        weights[q] = e / e.sum()
        out[q] = weights[q] @ feats
    return out, weights


def rel_l2(pred, truth):
    """Mean over samples and variables of ||pred - truth|| / ||truth||, by explicit loops."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    n, d = truth.shape[0], truth.shape[-1]
    total = 0.0
    for i in range(n):
        for k in range(d):
            p, t = pred[i, ..., k].ravel(), truth[i, ..., k].ravel()
            num = math.sqrt(sum((a - b) ** 2 for a, b in zip(p, t)))
            den = math.sqrt(sum(b * b for b in t))
            total += num / den
    return total / (n * d)


def total_variation(f, g):
    n = len(f)
    return sum(abs(abs(f[(m + 1) % n] - f[m]) - abs(g[(m + 1) % n] - g[m])) for m in range(n))


def mse(pred, target):
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    b, q, d = pred.shape
    s = 0.0
    for i in range(b):
        for j in range(q):
            for k in range(d):
                s += (pred[i, j, k] - target[i, j, k]) ** 2
    return s / (b * q * d)


def adamw_single_step(theta, g, lr, wd, beta1=0.9, beta2=0.999, eps=1e-8):
    """First AdamW step from zero moments, written out by hand."""
    m = (1 - beta1) * g
    v = (1 - beta2) * g * g
    m_hat = m / (1 - beta1)
    v_hat = v / (1 - beta2)
    return theta - lr * m_hat / (math.sqrt(v_hat) + eps) - lr * wd * theta


def layer_norm(x, gain, bias, eps=1e-6):
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def attention(q, kv, p, heads):
    """Multi-head attention for a single query set ``[Lq, C]`` against ``[Lk, C]``,
    looping over heads and queries. ``p`` maps wq, bq, ... to arrays."""
    qp = q @ p["wq"] + p["bq"]
    kp = kv @ p["wk"] + p["bk"]
    vp = kv @ p["wv"] + p["bv"]
    c = qp.shape[-1]
    hd = c // heads
    out = np.zeros((len(q), c))
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(len(q)):
            logits = np.array([qp[i, sl] @ kp[j, sl] for j in range(len(kv))]) / math.sqrt(hd)
            w = np.exp(logits - logits.max())
            w /= w.sum()
            out[i, sl] = sum(w[j] * vp[j, sl] for j in range(len(kv)))
    return out @ p["wo"] + p["bo"]


def cross_block(x, ctx, p, heads, act=gelu):
    """``x + MHA(LN x, LN ctx, LN ctx)`` then ``+ MLP(LN .)``; ``p`` holds flat names."""
    h = x + attention(layer_norm(x, p["norm_q.gain"], p["norm_q.bias"]),
                      layer_norm(ctx, p["norm_kv.gain"], p["norm_kv.bias"]),
                      {k[len("attn."):]: v for k, v in p.items() if k.startswith("attn.")}, heads)
    n = layer_norm(h, p["norm2.gain"], p["norm2.bias"])
    hidden = act(n @ p["mlp.layer0.w"] + p["mlp.layer0.b"])
    return h + hidden @ p["mlp.layer1.w"] + p["mlp.layer1.b"]


def sub_params(state, prefix):
    return {k[len(prefix) + 1:]: np.asarray(v, dtype=np.float64) for k, v in state.items()
            if k.startswith(prefix + ".")}
