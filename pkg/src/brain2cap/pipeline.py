"""Brain-to-caption composition, voxel selection and feature retrieval."""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .decoder.search import generate_beam, generate_greedy
from .errors import DataError, FormatError, ShapeError, VersionError
from .mathcore import as_matrix, check_finite
from .mathcore.io import pack_matrix, unpack_matrix

THRESHOLDS = (0.05, 0.1, 0.15, 0.2)
PSEUDO_GT_WIDTH = 10


@dataclass(frozen=True)
class VoxelMask:
    selected: np.ndarray
    threshold: float

    @property
    def count(self):
        return int(self.selected.sum())

    @property
    def indices(self):
        return np.flatnonzero(self.selected)

    def __len__(self):
        return self.selected.shape[0]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for i in self.indices:
                fh.write(f"{i}\n")

    @classmethod
    def load(cls, path, n_voxels, threshold=float("nan")):
        with open(path, encoding="utf-8") as fh:
            idx = [int(line) for line in fh if line.strip()]
        if idx != sorted(set(idx)):
            raise DataError("mask indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= n_voxels):
            raise DataError(f"mask index out of range for {n_voxels} voxels")
        sel = np.zeros(n_voxels, dtype=bool)
        sel[idx] = True
        return cls(sel, threshold)


def read_scores(path):
    """Per-voxel score CSV with ``index,score`` rows (header optional)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            try:
                rows.append((int(rec[0]), float(rec[1])))
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise DataError(f"{path}:{lineno}: expected 'index,score'") from None
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise DataError("score indices must cover 0..n-1 exactly once")
    return np.array([s for _, s in rows], dtype=np.float64)


def write_scores(path, scores):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "score"])
        for i, s in enumerate(scores):
            w.writerow([i, repr(float(s))])


def select_voxels(scores, threshold):
    """Keep voxels whose score is strictly greater than ``threshold``."""
    if np.isnan(threshold):
        raise ValueError("threshold is NaN")
    scores = check_finite(np.asarray(scores, dtype=np.float64).reshape(-1), "scores")
    return VoxelMask(scores > threshold, float(threshold))


def apply_mask(x, mask):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(mask):
        raise ShapeError(f"record has {x.shape[-1]} voxels, mask covers {len(mask)}")
    return x[..., mask.selected]


class FeatureDatabase:
    """Id-indexed feature vectors searched by exact brute-force scan.

    File layout (little-endian): ``b"NCFD"``, version ``u32``, count
    ``u64``, dim ``u64``, then per record an id ``u64`` followed by a
    ``1 x dim`` NCMX block.
    """

    MAGIC = b"NCFD"
    VERSION = 1
    _HEADER = struct.Struct("<4sIQQ")

    def __init__(self, ids, vectors, sources=None):
        vectors = check_finite(as_matrix(vectors, "vectors"), "vectors")
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.shape[0] != vectors.shape[0]:
            raise ShapeError("ids and vectors differ in length")
        if len(set(ids.tolist())) != len(ids):
            raise DataError("feature database ids must be unique")
        self.ids = ids
        self.vectors = vectors
        self.sources = sources

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def save(self, path):
        parts = [self._HEADER.pack(self.MAGIC, self.VERSION, len(self), self.dim)]
        for i, row in zip(self.ids, self.vectors):
            parts.append(struct.pack("<Q", int(i)))
            parts.append(pack_matrix(row.reshape(1, -1)))
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            buf = fh.read()
        if len(buf) < cls._HEADER.size:
            raise FormatError("truncated feature database header", 0)
        magic, version, count, dim = cls._HEADER.unpack_from(buf, 0)
        if magic != cls.MAGIC:
            raise FormatError(f"bad feature database magic {magic!r}", 0)
        if version != cls.VERSION:
            raise VersionError(f"unsupported feature database version {version}")
        off = cls._HEADER.size
        ids, rows = [], []
        for _ in range(count):
            if len(buf) - off < 8:
                raise FormatError("truncated record id", off)
            ids.append(struct.unpack_from("<Q", buf, off)[0])
            row, off = unpack_matrix(buf, off + 8)
            if row.shape != (1, dim):
                raise DataError(f"record {ids[-1]} has shape {row.shape}, header says (1, {dim})")
            rows.append(row)
        if off != len(buf):
            raise FormatError("trailing bytes after last record", off)
        vectors = np.vstack(rows) if rows else np.zeros((0, dim))
        return cls(ids, vectors)


def retrieve_similar(query, db, k=3):
    """Exact k nearest records under mean squared distance, ties by id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(db) == 0:
        raise ValueError("feature database is empty")
    q = check_finite(np.asarray(query, dtype=np.float64).reshape(-1), "query")
    if q.shape[0] != db.dim:
        raise ShapeError(f"query has {q.shape[0]} dims, database has {db.dim}")
    mse = np.mean((db.vectors - q) ** 2, axis=1)
    order = np.lexsort((db.ids, mse))[:k]
    return [(int(db.ids[i]), float(mse[i])) for i in order]


def decode_brain(regressor, lm, x, width=1, max_len=20, allow_unk=False):
    """Caption a brain record: regress to feature space, then generate.

    ``width == 1`` gives the greedy caption; wider beams return the
    ranked ``(tokens, logprob)`` list.
    """
    feature = regressor.predict(x)
    if feature.shape[1] != lm.feature_dim:
        raise ShapeError(f"regressor emits {feature.shape[1]} dims, decoder expects {lm.feature_dim}")
    if width == 1:
        return generate_greedy(lm, feature, max_len, allow_unk)
    return generate_beam(lm, feature, width, max_len, allow_unk)


def make_pseudo_groundtruth(lm, features, width=PSEUDO_GT_WIDTH, max_len=20):
    """Per feature row, the ``width``-best beam captions as a reference set."""
    if width < 1:
        raise ValueError("width must be >= 1")
    feats = as_matrix(features)
    return [[toks for toks, _ in generate_beam(lm, f, width, max_len)] for f in feats]
