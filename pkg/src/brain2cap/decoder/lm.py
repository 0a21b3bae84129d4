"""Stacked LSTM language model conditioned on an image feature.

The feature is projected to the embedding width and consumed as the
step-0 input; the output at that step is discarded. Step ``t >= 1`` reads
the embedding of the previous token (``<bos>`` first) and predicts the
next one. Gate layout inside each ``4H`` block is input, forget, output,
candidate.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import seeding
from ..errors import DivergenceError, ShapeError
from ..mathcore import as_matrix, check_finite, tape as T
from ..mathcore.linalg import softmax_cross_entropy
from ..mathcore.tape import Tape
from ..optim import Adam, AdamConfig
from .vocab import Vocabulary

DEFAULT_UNITS = 512
DEFAULT_EPOCHS = 100


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class DecoderState:
    h: list
    c: list
    t: int = 0

    def copy(self):
        return DecoderState([a.copy() for a in self.h], [a.copy() for a in self.c], self.t)

    def rows(self, idx):
        return DecoderState([a[idx] for a in self.h], [a[idx] for a in self.c], self.t)


@dataclass
class LanguageModel:
    vocab: Vocabulary
    feature_dim: int
    embed_dim: int
    hidden: int
    params: dict
    n_layers: int = 2
    log: list = field(default_factory=list)
    epochs_done: int = 0
    opt_state: dict = field(default_factory=dict)
    kind = "lm"

    @classmethod
    def init(cls, vocab, feature_dim, embed_dim=DEFAULT_UNITS, hidden=DEFAULT_UNITS,
             n_layers=2, seed=0, init_scheme="scaled", embeddings=None):
        if init_scheme not in ("scaled", "unit"):
            raise ValueError(f"unknown init scheme {init_scheme!r}")
        rng = seeding.stream(seed, "init")
        V, F, D, H = len(vocab), int(feature_dim), int(embed_dim), int(hidden)

        def weight(fan_in, fan_out):
            w = rng.standard_normal((fan_in, fan_out))
            return w / np.sqrt(fan_in) if init_scheme == "scaled" else w

        params = {"embed": rng.standard_normal((V, D))}
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float64)
            if embeddings.shape != (V, D):
                raise ShapeError(f"embedding table {embeddings.shape} != {(V, D)}")
            params["embed"] = embeddings.copy()
        params["feat_W"] = weight(F, D)
        params["feat_b"] = np.zeros((1, D))
        in_dim = D
        for layer in range(n_layers):
            params[f"lstm{layer}_W"] = weight(in_dim + H, 4 * H)
            params[f"lstm{layer}_b"] = np.zeros((1, 4 * H))
            in_dim = H
        params["out_W"] = weight(H, V)
        params["out_b"] = np.zeros((1, V))
        return cls(vocab, F, D, H, params, n_layers)

    @property
    def vocab_size(self):
        return len(self.vocab)

    @property
    def arch(self):
        return (self.feature_dim, self.embed_dim, self.hidden, self.n_layers, self.vocab_size)

    def zero_state(self, batch=1):
        z = [np.zeros((batch, self.hidden)) for _ in range(self.n_layers)]
        return DecoderState(z, [a.copy() for a in z], 0)

    def project_feature(self, features):
        f = check_finite(as_matrix(features, "feature"), "feature")
        if f.shape[1] != self.feature_dim:
            raise ShapeError(f"feature has {f.shape[1]} dims, model expects {self.feature_dim}")
        return f @ self.params["feat_W"] + self.params["feat_b"]

    def embed(self, ids):
        return self.params["embed"][np.asarray(ids, dtype=np.int64)]

    def start(self, features):
        """State after consuming the projected feature (step 0)."""
        x = self.project_feature(features)
        state, _ = lstm_step(self, self.zero_state(x.shape[0]), x)
        return state

    # -- teacher-forced training graph ---------------------------------
    def _batch(self, seqs):
        lengths = [len(s) + 1 for s in seqs]
        steps = max(lengths)
        B = len(seqs)
        inputs = np.full((steps, B), self.vocab.eos, dtype=np.int64)
        targets = np.full((steps, B), self.vocab.eos, dtype=np.int64)
        weights = np.zeros((steps, B))
        for b, s in enumerate(seqs):
            toks = [self.vocab.bos] + list(s)
            inputs[: len(toks), b] = toks
            targets[: len(s), b] = s
            targets[len(s), b] = self.vocab.eos
            weights[: len(s) + 1, b] = 1.0
        return inputs, targets, weights

    def loss_graph(self, tape, features, seqs, leaves=None):
        """Mean per-token cross entropy over ``seqs`` (EOS included)."""
        if leaves is None:
            leaves = {n: tape.var(v, n) for n, v in self.params.items()}
        H = self.hidden
        inputs, targets, weights = self._batch(seqs)
        B = len(seqs)
        x = T.affine(tape.const(as_matrix(features)), leaves["feat_W"], leaves["feat_b"])
        hs = [tape.const(np.zeros((B, H))) for _ in range(self.n_layers)]
        cs = [tape.const(np.zeros((B, H))) for _ in range(self.n_layers)]
        tops = []
        for step in range(inputs.shape[0] + 1):
            if step > 0:
                x = T.take_rows(leaves["embed"], inputs[step - 1])
            inp = x
            for layer in range(self.n_layers):
                z = T.affine(T.concat([inp, hs[layer]]),
                             leaves[f"lstm{layer}_W"], leaves[f"lstm{layer}_b"])
                i = T.sigmoid(T.columns(z, 0, H))
                f = T.sigmoid(T.columns(z, H, 2 * H))
                o = T.sigmoid(T.columns(z, 2 * H, 3 * H))
                g = T.tanh(T.columns(z, 3 * H, 4 * H))
                cs[layer] = f * cs[layer] + i * g
                hs[layer] = o * T.tanh(cs[layer])
                inp = hs[layer]
            if step > 0:
                tops.append(inp)
        logits = T.affine(T.concat(tops, axis=0), leaves["out_W"], leaves["out_b"])
        loss = T.softmax_ce(logits, targets.reshape(-1), weights.reshape(-1))
        return loss, leaves

    def nll(self, features, seqs):
        """Summed negative log-likelihood and token count, without a tape."""
        inputs, targets, weights = self._batch(seqs)
        state = self.start(features)
        total = 0.0
        for step in range(inputs.shape[0]):
            state, logits = lstm_step(self, state, self.embed(inputs[step]))
            w = weights[step]
            if w.sum() == 0:
                continue
            loss, _ = softmax_cross_entropy(logits, targets[step], w)
            total += loss * w.sum()
        return total, float(weights.sum())


def lstm_step(model, state, input_vec):
    """Advance every layer by one step; return ``(new_state, logits)``."""
    x = check_finite(as_matrix(input_vec, "input"), "input")
    if x.shape[1] != model.embed_dim:
        raise ShapeError(f"input has {x.shape[1]} dims, model expects {model.embed_dim}")
    H = model.hidden
    hs, cs = [], []
    inp = x
    for layer in range(model.n_layers):
        h_prev, c_prev = state.h[layer], state.c[layer]
        if h_prev.shape != (x.shape[0], H):
            raise ShapeError(f"state rows {h_prev.shape} do not match input batch {x.shape}")
        z = np.concatenate([inp, h_prev], axis=1) @ model.params[f"lstm{layer}_W"]
        z += model.params[f"lstm{layer}_b"]
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        o = _sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        c = f * c_prev + i * g
        h = o * np.tanh(c)
        hs.append(h)
        cs.append(c)
        inp = h
    logits = inp @ model.params["out_W"] + model.params["out_b"]
    return DecoderState(hs, cs, state.t + 1), logits


def _check_pairs(model, pairs):
    feats, seqs = [], []
    V = model.vocab_size
    for feat, seq in pairs:
        seq = [int(t) for t in seq]
        if any(t < 0 or t >= V for t in seq):
            raise IndexError(f"token index out of range for vocabulary of {V}")
        feats.append(np.asarray(feat, dtype=np.float64).reshape(-1))
        seqs.append(seq)
    return np.stack(feats) if feats else np.zeros((0, model.feature_dim)), seqs


def perplexity(model, pairs, batch_size=256):
    """``exp`` of the mean per-token cross entropy, EOS included."""
    feats, seqs = _check_pairs(model, pairs)
    if not seqs:
        raise ValueError("perplexity of an empty collection")
    total, count = 0.0, 0.0
    for start in range(0, len(seqs), batch_size):
        t, c = model.nll(feats[start:start + batch_size], seqs[start:start + batch_size])
        total += t
        count += c
    return float(np.exp(total / count))


def train_lm(pairs, vocab=None, cfg=None, epochs=DEFAULT_EPOCHS, seed=0, *, embed_dim=DEFAULT_UNITS,
             hidden=DEFAULT_UNITS, n_layers=2, batch_size=32, init_scheme="scaled", embeddings=None,
             resume=None, feature_dim=None):
    """Teacher-forced Adam training; ``model.log`` gets one perplexity row per epoch.

    ``pairs`` are ``(feature, token_ids)`` with ids excluding BOS/EOS.
    """
    cfg = cfg or AdamConfig()
    if resume is not None:
        model = LanguageModel(resume.vocab, resume.feature_dim, resume.embed_dim, resume.hidden,
                              {k: v.copy() for k, v in resume.params.items()}, resume.n_layers,
                              list(resume.log), resume.epochs_done,
                              {k: v.copy() for k, v in resume.opt_state.items()})
    else:
        if vocab is None:
            raise ValueError("vocab is required for a fresh model")
        if feature_dim is None:
            feature_dim = len(np.asarray(pairs[0][0]).reshape(-1))
        model = LanguageModel.init(vocab, feature_dim, embed_dim, hidden, n_layers, seed, init_scheme,
                                   embeddings)
    feats, seqs = _check_pairs(model, pairs)
    if feats.shape[1] != model.feature_dim:
        raise ShapeError(f"features have {feats.shape[1]} dims, model expects {model.feature_dim}")
    opt = Adam(cfg)
    opt.load_state_dict(model.opt_state)
    n = len(seqs)
    for epoch in range(model.epochs_done, model.epochs_done + epochs):
        order = seeding.stream(seed, "shuffle", epoch).permutation(n)
        total, count = 0.0, 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            tape = Tape()
            loss, leaves = model.loss_graph(tape, feats[idx], [seqs[i] for i in idx])
            if not np.isfinite(loss.value):
                raise DivergenceError(f"non-finite LM loss at epoch {epoch}")
            tape.backward(loss)
            grads = {k: v.grad if v.grad is not None else np.zeros_like(v.value)
                     for k, v in leaves.items()}
            opt.step(model.params, grads)
            tokens = sum(len(seqs[i]) + 1 for i in idx)
            total += float(loss.value) * tokens
            count += tokens
        model.log.append((epoch, "train", float(np.exp(total / count))))
        model.epochs_done = epoch + 1
    model.opt_state = opt.state_dict()
    return model
