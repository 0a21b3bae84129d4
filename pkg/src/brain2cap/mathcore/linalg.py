"""Matrix-level primitives.

Matrices are plain 2-D ``float64`` numpy arrays. Every public function
rejects NaN/Inf operands with :class:`NonFiniteError` and non-conforming
shapes with :class:`ShapeError`.
"""

import numpy as np

from ..errors import NonFiniteError, ShapeError


def as_matrix(x, name="x"):
    """Coerce ``x`` to a 2-D float64 array (vectors become a single row)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"{name}: expected at most 2 dimensions, got {a.ndim}")
    return a


def check_finite(a, name="x"):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return a


def matmul(a, b):
    a = check_finite(as_matrix(a, "a"), "a")
    b = check_finite(as_matrix(b, "b"), "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def affine(x, w, b):
    """``x @ w + b`` with ``b`` (a single row) broadcast over the batch."""
    out = matmul(x, w)
    b = check_finite(as_matrix(b, "b"), "b")
    if b.shape != (1, out.shape[1]):
        raise ShapeError(f"affine: bias {b.shape} does not match output {out.shape}")
    return out + b


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets, weights=None):
    """Mean negative log-likelihood of ``targets`` under row-wise softmax.

    ``weights`` optionally masks rows (padding); the mean is then taken over
    the total weight. Returns ``(loss, dlogits)``.
    """
    logits = check_finite(as_matrix(logits, "logits"), "logits")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, v = logits.shape
    if targets.shape[0] != n:
        raise ShapeError(f"{targets.shape[0]} targets for {n} logit rows")
    if n and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target index out of range for vocabulary of {v}")
    if weights is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    total = weights.sum()
    if total <= 0:
        raise ShapeError("softmax_cross_entropy: no unmasked rows")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    nll = log_norm - z[np.arange(n), targets]
    loss = float(np.dot(weights, nll) / total)
    grad = softmax(logits)
    grad[np.arange(n), targets] -= 1.0
    grad *= (weights / total)[:, None]
    return loss, grad


def mse_loss(pred, target):
    """Mean of squared elementwise differences. Returns ``(loss, dpred)``."""
    pred = check_finite(as_matrix(pred, "pred"), "pred")
    target = check_finite(as_matrix(target, "target"), "target")
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size
