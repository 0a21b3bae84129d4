from collections import Counter

import numpy as np

from ..errors import DataError, ShapeError

BOS, EOS, UNK = "<bos>", "<eos>", "<unk>"
RESERVED = (BOS, EOS, UNK)
DEFAULT_MIN_COUNT = 50


class Vocabulary:
    """Token/index bijection with reserved ``<bos>``, ``<eos>``, ``<unk>`` at 0, 1, 2."""

    def __init__(self, tokens, min_count=1):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise DataError(f"vocabulary must start with {RESERVED}")
        self.tokens = tokens
        self.index = {}
        for i, tok in enumerate(tokens):
            if tok in self.index:
                raise DataError(f"duplicate vocabulary token {tok!r}")
            self.index[tok] = i
        self.min_count = min_count

    bos = 0
    eos = 1
    unk = 2

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, words):
        return [self.index.get(w, self.unk) for w in words]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def build_vocabulary(corpus, min_count=1):
    """Keep tokens occurring strictly more than ``min_count`` times.

    Order after the reserved tokens: descending count, then lexicographic.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(tok for caption in corpus for tok in caption if tok not in RESERVED)
    kept = sorted((t for t, c in counts.items() if c > min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept, min_count)


def load_embeddings(path, vocab, dim, rng=None):
    """Read word2vec text vectors into a ``len(vocab) x dim`` table.

    Rows for tokens absent from the file are drawn from ``N(0, 1)``.
    """
    rng = rng or np.random.default_rng(0)
    table = rng.standard_normal((len(vocab), dim))
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError("word2vec header must be '<count> <dim>'")
        file_dim = int(header[1])
        if file_dim != dim:
            raise ShapeError(f"embedding file has dim {file_dim}, model expects {dim}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip().split(" ")
            if len(parts) != dim + 1:
                raise DataError(f"line {lineno}: expected {dim} values")
            if parts[0] in vocab:
                table[vocab.index[parts[0]]] = np.asarray(parts[1:], dtype=np.float64)
    return table
