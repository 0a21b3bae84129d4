"""Central-difference gradient checking against the tape."""

import numpy as np

from .tape import Tape


def numeric_gradient(f, x, eps=1e-5):
    """Central differences of scalar ``f`` (taking a plain array) at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        hi = f(x.copy())
        x[i] = orig - eps
        lo = f(x.copy())
        x[i] = orig
        g[i] = (hi - lo) / (2.0 * eps)
    return g


def relative_error(analytic, numeric, floor=1e-6):
    """Worst elementwise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps entries whose true gradient is ~0 from dividing
    roundoff by roundoff.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_difference_check(f, x, eps=1e-5):
    """Compare the tape gradient of ``f`` at ``x`` with central differences.

    ``f`` receives a tape :class:`Var` and must return a scalar Var built
    on the same tape. Returns the worst relative discrepancy.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    tape = Tape()
    xv = tape.var(x)
    out = f(xv)
    tape.backward(out)
    analytic = xv.grad if xv.grad is not None else np.zeros_like(x)

    def scalar(val):
        t = Tape()
        return float(f(t.var(val)).value)

    return relative_error(analytic, numeric_gradient(scalar, x, eps))
