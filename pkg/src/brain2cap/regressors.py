"""Brain-signal to image-feature regressors.

Three model families map voxel vectors to feature vectors: closed-form
ridge regression, a three-layer network and a five-layer network whose
hidden layers may be initialised by greedy stacked-autoencoder
pretraining. Networks are trained with SGD, global-norm clipping and L2
decay (see :mod:`brain2cap.optim`).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import seeding
from .errors import DivergenceError, ShapeError
from .mathcore import as_matrix, check_finite, tape as T
from .mathcore.tape import Tape
from .optim import SGD, SgdConfig

RIDGE_L2 = 0.5
ARCH3 = (65665, 8000, 4096)
ARCH5 = (65665, 7500, 6500, 5500, 4096)
DEFAULT_EPOCHS = 1000
DEFAULT_AE_EPOCHS = 200


@dataclass
class Standardizer:
    """Per-dimension z-score using training statistics."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = as_matrix(X)
        mean = X.mean(axis=0, keepdims=True)
        std = X.std(axis=0, keepdims=True)
        return cls(mean, np.where(std > 0, std, 1.0))

    def __call__(self, X):
        return (X - self.mean) / self.scale


def _prepare_input(x, in_dim):
    x = check_finite(as_matrix(x), "x")
    if x.shape[1] != in_dim:
        raise ShapeError(f"input has {x.shape[1]} dims, model expects {in_dim}")
    return x


@dataclass
class RidgeModel:
    W: np.ndarray
    b: np.ndarray
    lam: float = RIDGE_L2
    standardizer: Standardizer | None = None
    kind = "ridge"

    @property
    def in_dim(self):
        return self.W.shape[0]

    @property
    def out_dim(self):
        return self.W.shape[1]

    @property
    def arch(self):
        return (self.in_dim, self.out_dim)

    def predict(self, x):
        x = _prepare_input(x, self.in_dim)
        if self.standardizer is not None:
            x = self.standardizer(x)
        return x @ self.W + self.b


def ridge_fit(X, Y, lam=RIDGE_L2, fit_intercept=True, standardize=False):
    """Solve ``(X'X + lam I) W = X'Y`` by a symmetric positive-definite solve.

    With ``fit_intercept`` the bias is recovered from column means and is
    not penalised.
    """
    X = check_finite(as_matrix(X, "X"), "X")
    Y = check_finite(as_matrix(Y, "Y"), "Y")
    if X.shape[0] != Y.shape[0] or X.shape[0] < 1:
        raise ShapeError(f"ridge_fit: X {X.shape}, Y {Y.shape}")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    std = Standardizer.fit(X) if standardize else None
    if std is not None:
        X = std(X)
    if fit_intercept:
        x_mean = X.mean(axis=0, keepdims=True)
        y_mean = Y.mean(axis=0, keepdims=True)
        Xc, Yc = X - x_mean, Y - y_mean
    else:
        Xc, Yc = X, Y
    d = X.shape[1]
    gram = Xc.T @ Xc + lam * np.eye(d)
    rhs = Xc.T @ Yc
    try:
        c = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        W = scipy.linalg.cho_solve(c, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "ridge system is singular; use lam > 0 or a full-rank design"
        ) from exc
    if not np.all(np.isfinite(W)):
        raise np.linalg.LinAlgError("ridge solve produced non-finite weights")
    b = (y_mean - x_mean @ W) if fit_intercept else np.zeros((1, Y.shape[1]))
    return RidgeModel(W, b, float(lam), std)


def init_layers(arch, rng, init="scaled"):
    """Weights ``N(0, 1)`` scaled by ``1/sqrt(fan_in)`` (``init="unit"``: unscaled)."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(arch[:-1], arch[1:])):
        w = rng.standard_normal((fan_in, fan_out))
        if init == "scaled":
            w /= np.sqrt(fan_in)
        elif init != "unit":
            raise ValueError(f"unknown init scheme {init!r}")
        params[f"W{i}"] = w
        params[f"b{i}"] = np.zeros((1, fan_out))
    return params


@dataclass
class MlpModel:
    """Feed-forward regressor; hidden layers use ``activation``, output is linear."""

    arch: tuple
    params: dict
    activation: str = "relu"
    standardizer: Standardizer | None = None
    log: list = field(default_factory=list)
    epochs_done: int = 0

    @property
    def kind(self):
        return "dnn5" if len(self.arch) > 3 else "mlp3"

    @property
    def n_layers(self):
        return len(self.arch) - 1

    def forward(self, tape, x, leaves=None):
        """Tape forward pass on already-standardised ``x``; returns ``(pred, leaves)``."""
        act = T.ACTIVATIONS[self.activation]
        h = tape.const(x) if not isinstance(x, T.Var) else x
        ps = leaves if leaves is not None else {n: tape.var(v, n) for n, v in self.params.items()}
        for i in range(self.n_layers):
            h = T.affine(h, ps[f"W{i}"], ps[f"b{i}"])
            if i < self.n_layers - 1:
                h = act(h)
        return h, ps

    def predict(self, x):
        x = _prepare_input(x, self.arch[0])
        if self.standardizer is not None:
            x = self.standardizer(x)
        h = x
        for i in range(self.n_layers):
            h = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                h = _apply_activation(self.activation, h)
        return h

    def mse(self, X, Y):
        d = self.predict(X) - as_matrix(Y)
        return float(np.mean(d * d))


def _apply_activation(name, h):
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * h))
    if name == "tanh":
        return np.tanh(h)
    if name == "linear":
        return h
    raise ValueError(f"unknown activation {name!r}")


def _minibatches(n, batch_size, seed, epoch):
    order = seeding.stream(seed, "shuffle", epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _train_mse(params, build_pred, X, Y, optimizer, epochs, batch_size, seed,
               start_epoch=0, X_val=None, Y_val=None, eval_fn=None, log=None):
    """Shared minibatch MSE loop; returns the per-epoch log rows."""
    log = [] if log is None else log
    n = X.shape[0]
    for epoch in range(start_epoch, start_epoch + epochs):
        total, count = 0.0, 0
        for idx in _minibatches(n, batch_size, seed, epoch):
            tape = Tape()
            pred, leaves = build_pred(tape, X[idx])
            loss = T.mse(pred, Y[idx])
            if not np.isfinite(loss.value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            tape.backward(loss)
            grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value))
                     for k, v in leaves.items()}
            optimizer.step(params, grads)
            total += float(loss.value) * len(idx)
            count += len(idx)
        train = total / count
        if not np.isfinite(train):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        log.append((epoch, "train", train))
        if X_val is not None and eval_fn is not None:
            log.append((epoch, "val", eval_fn(X_val, Y_val)))
    return log


def mlp_fit(X, Y, arch, cfg=None, epochs=DEFAULT_EPOCHS, seed=0, *, activation="relu",
            batch_size=32, X_val=None, Y_val=None, standardize=True, init_scheme="scaled",
            initial_params=None, standardizer=None, resume=None):
    """Train a feed-forward regressor with SGD on mean squared error.

    ``resume`` continues an earlier model for ``epochs`` more epochs, giving
    the same log as one uninterrupted run.
    """
    cfg = cfg or SgdConfig()
    X = check_finite(as_matrix(X, "X"), "X")
    Y = check_finite(as_matrix(Y, "Y"), "Y")
    arch = tuple(int(a) for a in arch)
    if len(arch) < 2 or arch[0] != X.shape[1] or arch[-1] != Y.shape[1]:
        raise ShapeError(f"architecture {arch} does not conform to X {X.shape}, Y {Y.shape}")
    if X.shape[0] != Y.shape[0]:
        raise ShapeError("X and Y row counts differ")
    if resume is not None:
        if tuple(resume.arch) != arch:
            raise ShapeError(f"resume architecture {resume.arch} != {arch}")
        model = MlpModel(arch, {k: v.copy() for k, v in resume.params.items()},
                         resume.activation, resume.standardizer, list(resume.log),
                         resume.epochs_done)
    else:
        params = init_layers(arch, seeding.stream(seed, "init"), init_scheme)
        if initial_params:
            for k, v in initial_params.items():
                if params[k].shape != v.shape:
                    raise ShapeError(f"initial {k} has shape {v.shape}, expected {params[k].shape}")
                params[k] = np.array(v, dtype=np.float64)
        if standardizer is None and standardize:
            standardizer = Standardizer.fit(X)
        model = MlpModel(arch, params, activation, standardizer)
    Xs = model.standardizer(X) if model.standardizer is not None else X

    def build(tape, xb):
        return model.forward(tape, xb)

    _train_mse(model.params, build, Xs, Y, SGD(cfg), epochs, batch_size, seed,
               start_epoch=model.epochs_done, X_val=X_val, Y_val=Y_val,
               eval_fn=model.mse, log=model.log)
    model.epochs_done += epochs
    return model


@dataclass
class AutoencoderStack:
    """Greedily trained encoder layers plus their per-epoch reconstruction losses."""

    in_dim: int
    hidden_dims: tuple
    encoders: list
    decoders: list
    losses: list
    activation: str = "relu"
    standardizer: Standardizer | None = None
    kind = "ae"

    @property
    def arch(self):
        return (self.in_dim,) + tuple(self.hidden_dims)

    def encode(self, X, depth=None):
        h = as_matrix(X)
        if self.standardizer is not None:
            h = self.standardizer(h)
        for W, b in self.encoders[:depth]:
            h = _apply_activation(self.activation, h @ W + b)
        return h

    def initial_params(self):
        """Encoder weights named as the hidden layers of an :class:`MlpModel`."""
        out = {}
        for i, (W, b) in enumerate(self.encoders):
            out[f"W{i}"], out[f"b{i}"] = W.copy(), b.copy()
        return out


def ae_pretrain(X, hidden_dims, epochs_per_layer=DEFAULT_AE_EPOCHS, cfg=None, seed=0, *,
                activation="relu", batch_size=32, standardize=True, init_scheme="scaled"):
    """Greedy layer-wise autoencoder pretraining.

    Layer ``i`` learns to reconstruct the activations of layer ``i - 1``
    through an untied linear decoder.
    """
    cfg = cfg or SgdConfig()
    X = check_finite(as_matrix(X, "X"), "X")
    hidden_dims = tuple(int(h) for h in hidden_dims)
    if not hidden_dims:
        raise ValueError("hidden_dims must be non-empty")
    std = Standardizer.fit(X) if standardize else None
    H = std(X) if std is not None else X
    rng = seeding.stream(seed, "init")
    act = T.ACTIVATIONS[activation]
    encoders, decoders, losses = [], [], []
    for depth, h_dim in enumerate(hidden_dims):
        d_in = H.shape[1]
        p = init_layers((d_in, h_dim, d_in), rng, init_scheme)
        params = {"We": p["W0"], "be": p["b0"], "Wd": p["W1"], "bd": p["b1"]}

        def build(tape, xb, params=params):
            leaves = {n: tape.var(v, n) for n, v in params.items()}
            code = act(T.affine(tape.const(xb), leaves["We"], leaves["be"]))
            return T.affine(code, leaves["Wd"], leaves["bd"]), leaves

        rows = _train_mse(params, build, H, H, SGD(cfg), epochs_per_layer, batch_size,
                          seed + 7919 * (depth + 1))
        losses.append([mse for _, _, mse in rows])
        encoders.append((params["We"], params["be"]))
        decoders.append((params["Wd"], params["bd"]))
        H = _apply_activation(activation, H @ params["We"] + params["be"])
    return AutoencoderStack(X.shape[1], hidden_dims, encoders, decoders, losses, activation, std)


def dnn_fit(X, Y, arch, init=None, cfg=None, epochs=DEFAULT_EPOCHS, seed=0, **kw):
    """Fine-tune a deep regressor, optionally starting from a pretrained stack.

    Output-layer weights always come from the random init stream, so a
    stack-initialised run and a random run with the same seed differ only
    in the hidden layers.
    """
    arch = tuple(int(a) for a in arch)
    if init is not None and kw.get("resume") is None:
        if tuple(init.arch) != arch[:-1]:
            raise ShapeError(f"stack dims {init.arch} do not match architecture {arch}")
        if init.activation != kw.get("activation", "relu"):
            raise ShapeError("stack activation differs from network activation")
        kw["initial_params"] = init.initial_params()
        if init.standardizer is not None:
            kw.setdefault("standardizer", init.standardizer)
        else:
            kw["standardize"] = False
    return mlp_fit(X, Y, arch, cfg, epochs, seed, **kw)


def predict(model, x):
    """Deterministic forward pass of any regressor."""
    return model.predict(x)
