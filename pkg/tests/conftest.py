import itertools
import time

import numpy as np
import pytest

from brain2cap.decoder import LanguageModel, Vocabulary, lstm_step
from brain2cap.decoder.search import score
from brain2cap.decoder.vocab import RESERVED
from brain2cap.mathcore.gradcheck import numeric_gradient, relative_error
from brain2cap.mathcore.tape import Tape


def random_lm(seed, words=("x", "y", "z"), feature_dim=3, embed_dim=4, hidden=5, spread=1.5):
    """Small LM with large random weights so its distributions are far from uniform."""
    vocab = Vocabulary(list(RESERVED) + list(words))
    lm = LanguageModel.init(vocab, feature_dim, embed_dim, hidden, seed=seed)
    rng = np.random.default_rng(seed)
    for k in lm.params:
        lm.params[k] = rng.standard_normal(lm.params[k].shape) * spread
    return lm, rng.standard_normal(feature_dim)


def sequence_logprob(lm, feature, tokens, ended):
    """Unrolled log-probability of ``tokens`` (+ EOS when ``ended``)."""
    state = lm.start(feature)
    prev = lm.vocab.bos
    total = 0.0
    targets = list(tokens) + ([lm.vocab.eos] if ended else [])
    for tok in targets:
        state, logits = lstm_step(lm, state, lm.embed([prev]))
        z = logits[0].copy()
        z[lm.vocab.bos] = -np.inf
        z[lm.vocab.unk] = -np.inf
        m = z[np.isfinite(z)].max()
        total += z[tok] - (m + np.log(np.exp(z[np.isfinite(z)] - m).sum()))
        prev = tok
    return total


def exhaustive_ranking(lm, feature, max_len):
    """Every caption reachable within ``max_len`` words, ranked like the beam."""
    words = [i for i in range(len(lm.vocab)) if i not in (lm.vocab.bos, lm.vocab.eos, lm.vocab.unk)]
    out = []
    for length in range(max_len + 1):
        for toks in itertools.product(words, repeat=length):
            ended = length < max_len
            lp = sequence_logprob(lm, feature, toks, ended)
            out.append((toks, lp, ended))
    out.sort(key=lambda o: (-score(o[1], o[0], o[2]), o[0]))
    return [(list(t), lp) for t, lp, _ in out]


def param_gradcheck(params, loss_of_leaves, eps=1e-5):
    """Worst relative error over every parameter matrix.

    ``loss_of_leaves(tape, leaves)`` must build a scalar loss from a dict
    of tape leaves mirroring ``params``.
    """
    tape = Tape()
    leaves = {k: tape.var(v, k) for k, v in params.items()}
    out = loss_of_leaves(tape, leaves)
    tape.backward(out)
    worst = 0.0
    for name, value in params.items():
        def f(arr, name=name):
            t = Tape()
            lv = {k: t.var(arr if k == name else v, k) for k, v in params.items()}
            return float(loss_of_leaves(t, lv).value)

        analytic = leaves[name].grad if leaves[name].grad is not None else np.zeros_like(value)
        worst = max(worst, relative_error(analytic, numeric_gradient(f, value, eps)))
    return worst


@pytest.fixture
def toy_lm():
    return random_lm(0)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


class _Criterion:
    def __init__(self, sink, number, title, limit):
        self.sink, self.number, self.title, self.limit = sink, number, title, limit

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        ok = exc_type is None and (self.limit is None or elapsed < self.limit)
        self.sink.append((self.number, self.title, ok, elapsed, self.limit))
        if exc_type is None and not ok:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f}s, limit {self.limit}s")
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title, limit_seconds): ...`` records a pass/fail line."""
    sink = request.config.stash[_ACCEPTANCE]
    return lambda number, title, limit=None: _Criterion(sink, number, title, limit)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = sorted(config.stash.get(_ACCEPTANCE, []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, elapsed, limit in rows:
        budget = f" / {limit:g}s" if limit is not None else ""
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}  ({elapsed:.2f}s{budget})")
