"""BLEU-4 and an exact-match METEOR variant for caption evaluation.

Captions are token sequences (strings or ints; only identity matters).
``meteor_lite`` has no stemming, synonym or paraphrase stages, so its
values are comparable only with other ``meteor_lite`` values.
"""

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

BLEU_EPSILON = 1e-9
BLEU_ORDER = 4
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
_ALIGN_NODE_LIMIT = 200_000


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c, refs):
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def _bleu_stats(candidate, references):
    """``(clipped[1..4], totals[1..4], cand_len, ref_len)`` for one sample."""
    clipped, totals = [], []
    for n in range(1, BLEU_ORDER + 1):
        cand = ngrams(candidate, n)
        max_ref = Counter()
        for r in references:
            for g, k in ngrams(r, n).items():
                max_ref[g] = max(max_ref[g], k)
        clipped.append(sum(min(k, max_ref[g]) for g, k in cand.items()))
        totals.append(max(len(candidate) - n + 1, 0))
    return clipped, totals, len(candidate), _closest_ref_len(len(candidate), references)


def _bleu_from_stats(clipped, totals, c, r):
    if c == 0:
        return 0.0
    log_p = 0.0
    for k, t in zip(clipped, totals):
        log_p += math.log((k if k > 0 else BLEU_EPSILON) / max(t, 1))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p / BLEU_ORDER)


def bleu4(candidate, references):
    """Sentence BLEU-4: clipped 1-4 gram precisions, geometric mean, brevity penalty.

    Zero clipped counts are replaced by ``BLEU_EPSILON``. The brevity
    penalty uses the reference length closest to the candidate (shorter
    wins ties).
    """
    references = [list(r) for r in references]
    if not references:
        raise ValueError("bleu4 needs at least one reference")
    return _bleu_from_stats(*_bleu_stats(list(candidate), references))


def corpus_bleu4(candidates, reference_sets):
    """Corpus BLEU-4: n-gram counts and lengths summed over all samples."""
    clipped = [0] * BLEU_ORDER
    totals = [0] * BLEU_ORDER
    c_len = r_len = 0
    for cand, refs in zip(candidates, reference_sets):
        refs = [list(r) for r in refs]
        if not refs:
            raise ValueError("every sample needs at least one reference")
        k, t, c, r = _bleu_stats(list(cand), refs)
        clipped = [a + b for a, b in zip(clipped, k)]
        totals = [a + b for a, b in zip(totals, t)]
        c_len += c
        r_len += r
    return _bleu_from_stats(clipped, totals, c_len, r_len)


def align(candidate, reference):
    """Maximum exact-match alignment with the fewest chunks.

    Returns ``(matches, chunks)``. Search is exhaustive with branch and
    bound; beyond ``_ALIGN_NODE_LIMIT`` nodes the best alignment found so
    far is kept (the first one explored is the greedy monotone alignment).
    """
    cand, ref = list(candidate), list(reference)
    rc = Counter(ref)
    cc = Counter(cand)
    need = {w: min(cc[w], rc[w]) for w in cc}
    total = sum(need.values())
    if total == 0:
        return 0, 0
    positions = {}
    for j, w in enumerate(ref):
        positions.setdefault(w, []).append(j)
    remaining_after = []
    seen = Counter()
    for w in reversed(cand):
        remaining_after.append(dict(seen))
        seen[w] += 1
    remaining_after.reverse()

    best = [total + 1]
    nodes = [0]
    used = [False] * len(ref)
    still = dict(need)

    def dfs(i, prev_j, chunks):
        nodes[0] += 1
        if chunks >= best[0]:
            return
        if i == len(cand):
            best[0] = chunks
            return
        if nodes[0] > _ALIGN_NODE_LIMIT and best[0] <= total:
            return
        w = cand[i]
        options = positions.get(w, []) if still.get(w, 0) > 0 else []
        if options:
            nxt = -1 if prev_j is None else prev_j + 1
            ordered = sorted(options, key=lambda j: (j != nxt, j))
            for j in ordered:
                if used[j]:
                    continue
                used[j] = True
                still[w] -= 1
                cont = prev_j is not None and j == prev_j + 1
                dfs(i + 1, j, chunks + (0 if cont else 1))
                still[w] += 1
                used[j] = False
        if still.get(w, 0) <= remaining_after[i].get(w, 0):
            dfs(i + 1, None, chunks)

    dfs(0, None, 0)
    return total, best[0]


def _meteor_single(cand, ref):
    if not cand or not ref:
        return 0.0
    m, chunks = align(cand, ref)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return fmean * (1.0 - penalty)


def meteor_lite(candidate, references):
    """Exact-match METEOR: recall-weighted F-mean times fragmentation penalty, max over references."""
    references = [list(r) for r in references]
    if not references:
        raise ValueError("meteor_lite needs at least one reference")
    candidate = list(candidate)
    return max(_meteor_single(candidate, r) for r in references)


@dataclass
class MetricReport:
    metric: str
    corpus_score: float
    per_sample: list
    params: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({
            "metric": self.metric,
            "corpus_score": self.corpus_score,
            "params": self.params,
            "per_sample": [{"id": i, "score": s} for i, s in self.per_sample],
        }, indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "id", "score"])
        for i, s in self.per_sample:
            w.writerow([self.metric, i, repr(s)])
        w.writerow([self.metric, "corpus", repr(self.corpus_score)])
        return buf.getvalue()


def evaluate_run(candidates, references):
    """Score aligned ``{id: tokens}`` and ``{id: [tokens, ...]}`` mappings.

    BLEU-4's corpus score pools n-gram counts; METEOR's is the mean of the
    per-sample scores.
    """
    if set(candidates) != set(references):
        missing = sorted(set(candidates) ^ set(references), key=str)
        raise DataError(f"candidate and reference ids differ: {missing[:5]}")
    ids = sorted(candidates, key=lambda k: (str(type(k)), k))
    cands = [list(candidates[i]) for i in ids]
    refs = [[list(r) for r in references[i]] for i in ids]
    bleu = MetricReport(
        "bleu4",
        corpus_bleu4(cands, refs),
        [(i, bleu4(c, r)) for i, c, r in zip(ids, cands, refs)],
        {"max_order": BLEU_ORDER, "weights": [0.25] * 4, "smoothing_epsilon": BLEU_EPSILON,
         "aggregation": "corpus n-gram counts"},
    )
    per = [(i, meteor_lite(c, r)) for i, c, r in zip(ids, cands, refs)]
    meteor = MetricReport(
        "meteor_lite",
        sum(s for _, s in per) / len(per) if per else 0.0,
        per,
        {"alpha": METEOR_ALPHA, "beta": METEOR_BETA, "gamma": METEOR_GAMMA,
         "matching": "exact", "aggregation": "mean of per-sample"},
    )
    return bleu, meteor
