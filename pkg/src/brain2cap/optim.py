"""Adam and plain SGD with global-norm clipping and L2 decay.

The update order used by the training loops is fixed: clip the raw
gradients by their global norm, then add ``l2 * param``, then step. Decay
is therefore never clipped.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .mathcore import check_finite


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    a: float = 0.001
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper):
        p = np.asarray(params, dtype=np.float64)
        return cls(np.zeros_like(p), np.zeros_like(p), 0, **hyper)


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.01
    clip: float = 1.0
    l2: float = 0.005

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not self.clip > 0:
            raise ValueError("clip threshold must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


@dataclass(frozen=True)
class AdamConfig:
    a: float = 0.001
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    clip: float = 1.0
    l2: float = 0.005


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = check_finite(np.asarray(grads, dtype=np.float64), "grads")
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError(f"adam_step: params {params.shape}, grads {grads.shape}")
    t = state.t + 1
    m = state.b1 * state.m + (1.0 - state.b1) * grads
    v = state.b2 * state.v + (1.0 - state.b2) * grads * grads
    m_hat = m / (1.0 - state.b1**t)
    v_hat = v / (1.0 - state.b2**t)
    new = params - state.a * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.a, state.b1, state.b2, state.eps)


def sgd_step(params, grads, cfg):
    """``params - lr * (clip(grads) + l2 * params)`` for a single matrix."""
    params = np.asarray(params, dtype=np.float64)
    grads = check_finite(np.asarray(grads, dtype=np.float64), "grads")
    if params.shape != grads.shape:
        raise ShapeError(f"sgd_step: params {params.shape}, grads {grads.shape}")
    (grads,) = clip_by_global_norm([grads], cfg.clip)
    return params - cfg.lr * (grads + cfg.l2 * params)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, threshold):
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    norm = global_norm(grads)
    if norm <= threshold:
        return list(grads)
    scale = threshold / norm
    return [g * scale for g in grads]


class SGD:
    """SGD over a dict of named parameters, updated in place."""

    kind = "sgd"

    def __init__(self, cfg=None):
        self.cfg = cfg or SgdConfig()

    def step(self, params, grads):
        names = list(params)
        clipped = clip_by_global_norm([grads[n] for n in names], self.cfg.clip)
        for n, g in zip(names, clipped):
            params[n] = params[n] - self.cfg.lr * (g + self.cfg.l2 * params[n])

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        pass


class Adam:
    """Adam over a dict of named parameters with clipping and L2 decay."""

    kind = "adam"

    def __init__(self, cfg=None):
        self.cfg = cfg or AdamConfig()
        self.states = {}

    def step(self, params, grads):
        names = list(params)
        clipped = clip_by_global_norm([grads[n] for n in names], self.cfg.clip)
        c = self.cfg
        for n, g in zip(names, clipped):
            st = self.states.get(n)
            if st is None:
                st = AdamState.zeros_like(params[n], a=c.a, b1=c.b1, b2=c.b2, eps=c.eps)
            params[n], self.states[n] = adam_step(params[n], g + c.l2 * params[n], st)

    def state_dict(self):
        out = {}
        for n, st in self.states.items():
            out[f"{n}.m"] = st.m
            out[f"{n}.v"] = st.v
            out[f"{n}.t"] = np.array([[float(st.t)]])
        return out

    def load_state_dict(self, state):
        c = self.cfg
        self.states = {}
        for key in state:
            if key.endswith(".m"):
                n = key[:-2]
                self.states[n] = AdamState(
                    state[f"{n}.m"].copy(), state[f"{n}.v"].copy(),
                    int(state[f"{n}.t"][0, 0]), c.a, c.b1, c.b2, c.eps,
                )
