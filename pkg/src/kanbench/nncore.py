"""Dense numeric kernel: matmul, activations, layer norm, losses, seeded RNG.

All arrays are float64, row-major. Operations are pure; nothing here holds
global state, so concurrent trials stay independent as long as each owns its
arrays and generator.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import InputError, ShapeError

ACTIVATIONS = ("relu", "gelu", "silu")

LN_EPS = 1e-5

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def make_rng(seed: int) -> np.random.Generator:
    """Generator with a reproducible stream for the given 64-bit seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream derived from (seed, keys); never shared across trials."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={a.ndim}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _phi(x):
    """Standard normal CDF (exact, via erf)."""
    return 0.5 * (1.0 + erf(x / _SQRT2))


def activation_eval(kind: str, x) -> np.ndarray:
    """Elementwise fixed activation. GELU is the exact Gaussian-CDF form."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "silu":
        return x * sigmoid(x)
    if kind == "gelu":
        return x * _phi(x)
    raise InputError(f"unknown activation {kind!r}")


def activation_grad(kind: str, x) -> np.ndarray:
    """Elementwise derivative of activation_eval."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "silu":
        s = sigmoid(x)
        return s * (1.0 + x * (1.0 - s))
    if kind == "gelu":
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return _phi(x) + x * pdf
    raise InputError(f"unknown activation {kind!r}")


def layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    """Per-row standardization across features, then affine.

    Returns (y, cache); the cache feeds layernorm_backward. A zero-variance
    row standardizes to 0, so its output is exactly the bias.
    """
    x = as_matrix(x)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layernorm affine shapes {gain.shape}/{bias.shape} vs x {x.shape}")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv_std
    y = xhat * gain + bias
    return y, (xhat, inv_std, gain)


def layernorm_backward(upstream: np.ndarray, cache):
    """Gradients (dx, dgain, dbias) of layernorm given upstream dL/dy."""
    xhat, inv_std, gain = cache
    g = np.asarray(upstream, dtype=np.float64)
    dgain = (g * xhat).sum(axis=0)
    dbias = g.sum(axis=0)
    dxhat = g * gain
    mean_dxhat = dxhat.mean(axis=1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std
    return dx, dgain, dbias


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy over rows.

    Returns (loss, grad) with grad = (softmax - onehot) / batch.
    """
    logits = as_matrix(logits)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} vs logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise InputError(f"label out of range [0, {logits.shape[1]})")
    n = logits.shape[0]
    p = softmax(logits)
    loss = float(-np.log(p[np.arange(n), labels] + 1e-300).mean())
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries; returns (loss, grad wrt pred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d)), 2.0 * d / d.size


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"rmse shapes {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.sqrt(np.mean(d * d)))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Classification accuracy in percent."""
    pred = np.asarray(logits).argmax(axis=1)
    return float(100.0 * np.mean(pred == np.asarray(labels)))
