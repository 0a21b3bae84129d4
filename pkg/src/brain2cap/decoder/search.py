"""Greedy and beam-search caption generation.

Ties are broken towards the lower token index. ``<bos>`` is never
emitted, and ``<unk>`` only when ``allow_unk`` is set. A caption ends at
``<eos>`` (not included in the output) or after ``max_len`` words.
"""

import numpy as np

from .lm import lstm_step


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _masked_logprobs(model, logits, allow_unk):
    z = np.array(logits, dtype=float)
    z[:, model.vocab.bos] = -np.inf
    if not allow_unk:
        z[:, model.vocab.unk] = -np.inf
    return _log_softmax(z)


def generate_greedy(model, feature, max_len=20, allow_unk=False):
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = model.start(feature)
    token = model.vocab.bos
    out = []
    while len(out) < max_len:
        state, logits = lstm_step(model, state, model.embed([token]))
        lp = _masked_logprobs(model, logits, allow_unk)[0]
        token = int(np.argmax(lp))
        if token == model.vocab.eos:
            break
        out.append(token)
    return out


def score(logp, tokens, ended):
    """Length-normalised log-probability: per scored step, EOS counted."""
    return logp / (len(tokens) + (1 if ended else 0))


def generate_beam(model, feature, width=10, max_len=20, allow_unk=False):
    """Beam search returning ``[(tokens, logprob), ...]`` best first.

    The beam is pruned by cumulative log-probability; finished captions
    leave the beam, and the final list is ranked by :func:`score`.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    eos = model.vocab.eos
    state = model.start(feature)
    alive = [((), 0.0)]
    finished = []
    last = [model.vocab.bos]
    while alive:
        state, logits = lstm_step(model, state, model.embed(last))
        lp = _masked_logprobs(model, logits, allow_unk)
        cand = []
        for row, (toks, base) in enumerate(alive):
            for tok in np.flatnonzero(np.isfinite(lp[row])):
                cand.append((base + lp[row, tok], row, int(tok)))
        cand.sort(key=lambda c: (-c[0], c[1], c[2]))
        keep_rows, next_alive, last = [], [], []
        for logp, row, tok in cand[: width - len(finished)]:
            toks = alive[row][0]
            if tok == eos:
                finished.append((toks, logp, True))
            elif len(toks) + 1 >= max_len:
                finished.append((toks + (tok,), logp, False))
            else:
                keep_rows.append(row)
                next_alive.append((toks + (tok,), logp))
                last.append(tok)
        alive = next_alive
        if alive:
            state = state.rows(np.asarray(keep_rows))
    finished.sort(key=lambda f: (-score(f[1], f[0], f[2]), f[0]))
    return [(list(t), float(lp)) for t, lp, _ in finished[:width]]
