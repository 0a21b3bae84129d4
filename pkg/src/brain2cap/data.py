"""Paired brain/feature/caption datasets and a synthetic generator.

The generator plants a known structure: image features come from
clusters, each cluster owns a caption template, and brain vectors are an
orthonormal linear mixture of the features and an independent nuisance
signal, plus optional Gaussian noise. Without noise the features are an
exact linear function of the brain vectors (``planted_decoder``).
"""

import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import seeding
from .errors import DataError, FormatError
from .mathcore.io import pack_matrix, unpack_matrix

SUBJECTS = ["man", "woman", "dog", "cat", "boy", "girl", "horse", "bird", "train", "bus",
            "surfer", "skier", "player", "child", "elephant", "giraffe"]
ADJECTIVES = ["young", "small", "large", "red", "white", "brown", "black", "old"]
VERBS = ["standing", "sitting", "riding", "running", "walking", "surfing", "jumping", "eating"]
PLACES = ["beach", "street", "field", "ocean", "table", "snow", "grass", "kitchen",
          "park", "road", "water", "room"]
PREPOSITIONS = ["on", "in", "near", "by"]

PRESETS = {
    "paper-scale-ratio": {"n_train": 4500, "n_unlabeled": 7540, "n_test": 300},
}


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_train: int = 200
    n_test: int = 50
    n_unlabeled: int = 0
    brain_dim: int = 640
    feature_dim: int = 64
    noise_std: float = 0.0
    n_clusters: int = 8
    cluster_std: float = 0.3
    nuisance_dim: int | None = None
    templates_per_cluster: int = 1
    ar1: float = 0.0

    def __post_init__(self):
        if self.brain_dim < 1 or self.feature_dim < 1:
            raise ValueError("dims must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.n_clusters < 1 or self.templates_per_cluster < 1:
            raise ValueError("need at least one cluster and one template")
        if not 0.0 <= self.ar1 < 1.0:
            raise ValueError("ar1 must lie in [0, 1)")
        if self.n_train < 0 or self.n_test < 0 or self.n_unlabeled < 0:
            raise ValueError("sample counts must be >= 0")
        if self.feature_dim > self.brain_dim or self.latent_nuisance < 0:
            raise ValueError("feature_dim must not exceed brain_dim")
        if self.feature_dim + self.latent_nuisance > self.brain_dim:
            raise ValueError("feature_dim + nuisance_dim must not exceed brain_dim")

    @property
    def latent_nuisance(self):
        if self.nuisance_dim is None:
            return self.brain_dim - self.feature_dim
        return self.nuisance_dim


@dataclass
class PairedDataset:
    ids: np.ndarray
    brain: np.ndarray
    features: np.ndarray
    captions: list | None
    split: list
    meta: dict = field(default_factory=dict)
    unlabeled: np.ndarray | None = None
    clusters: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        if self.brain.shape[0] != n or self.features.shape[0] != n or len(self.split) != n:
            raise DataError("brain, features, ids and split labels are not aligned")
        if self.captions is not None and len(self.captions) != n:
            raise DataError("captions are not aligned with ids")
        if len(set(np.asarray(self.ids).tolist())) != n:
            raise DataError("duplicate sample ids")
        if self.unlabeled is not None and self.unlabeled.shape[1] != self.brain.shape[1]:
            raise DataError("unlabeled brain records have a different dimensionality")

    def __len__(self):
        return len(self.ids)

    @property
    def brain_dim(self):
        return self.brain.shape[1]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def take(self, rows, label=None):
        rows = np.asarray(rows, dtype=np.int64)
        return PairedDataset(
            self.ids[rows].copy(),
            self.brain[rows].copy(),
            self.features[rows].copy(),
            None if self.captions is None else [self.captions[i] for i in rows],
            [label or self.split[i] for i in rows],
            dict(self.meta),
            self.unlabeled,
            None if self.clusters is None else self.clusters[rows].copy(),
        )

    def subset(self, label):
        return self.take([i for i, s in enumerate(self.split) if s == label])


def _caption_templates(rng, n_clusters, per_cluster):
    seen, out = set(), []
    for _ in range(n_clusters):
        group = []
        while len(group) < per_cluster:
            words = ("a", str(rng.choice(ADJECTIVES)), str(rng.choice(SUBJECTS)),
                     "is", str(rng.choice(VERBS)), str(rng.choice(PREPOSITIONS)), "the",
                     str(rng.choice(PLACES)))
            if words not in seen:
                seen.add(words)
                group.append(list(words))
        out.append(group)
    return out


def synth_generate(spec):
    """Deterministic synthetic dataset; the layout of ``meta`` records the spec."""
    rng = seeding.stream(spec.seed, "data")
    F, B, R = spec.feature_dim, spec.brain_dim, spec.latent_nuisance
    centers = rng.standard_normal((spec.n_clusters, F))
    templates = _caption_templates(rng, spec.n_clusters, spec.templates_per_cluster)
    q, _ = np.linalg.qr(rng.standard_normal((B, F + R)))
    mixing = q.T
    n_paired = spec.n_train + spec.n_test
    clusters = rng.integers(0, spec.n_clusters, n_paired)
    feats = centers[clusters] + spec.cluster_std * rng.standard_normal((n_paired, F))
    pick = rng.integers(0, spec.templates_per_cluster, n_paired)
    captions = [list(templates[k][t]) for k, t in zip(clusters, pick)]

    noise_rng = seeding.stream(spec.seed, "noise")

    def brain_of(latent_feats):
        n = latent_feats.shape[0]
        nuisance = rng.standard_normal((n, R))
        x = np.hstack([latent_feats, nuisance]) @ mixing
        if spec.noise_std > 0:
            e = noise_rng.standard_normal((n, B))
            if spec.ar1 > 0:
                scale = np.sqrt(1.0 - spec.ar1**2)
                for t in range(1, n):
                    e[t] = spec.ar1 * e[t - 1] + scale * e[t]
            x = x + spec.noise_std * e
        return x

    brain = brain_of(feats)
    unlabeled = None
    if spec.n_unlabeled:
        u_clusters = rng.integers(0, spec.n_clusters, spec.n_unlabeled)
        u_feats = centers[u_clusters] + spec.cluster_std * rng.standard_normal((spec.n_unlabeled, F))
        unlabeled = brain_of(u_feats)
    split = ["train"] * spec.n_train + ["test"] * spec.n_test
    meta = {
        "source": "synthetic",
        "spec": asdict(spec),
        "templates": templates,
        "planted_decoder_shape": [B, F],
    }
    ds = PairedDataset(np.arange(n_paired, dtype=np.int64), brain, feats, captions, split, meta,
                       unlabeled, clusters.astype(np.int64))
    ds.planted_decoder = mixing[:F].T.copy()
    return ds


def planted_caption(ds, row):
    """Canonical (first) template of the sample's cluster."""
    return list(ds.meta["templates"][int(ds.clusters[row])][0])


def split(ds, train_fraction, seed):
    """Disjoint, exhaustive, seed-determined train/test partition."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    order = seeding.stream(seed, "split").permutation(len(ds))
    n_train = int(round(train_fraction * len(ds)))
    train_rows = np.sort(order[:n_train])
    test_rows = np.sort(order[n_train:])
    return ds.take(train_rows, "train"), ds.take(test_rows, "test")


def read_id_list(path):
    """Curated sample ids, one per line."""
    with open(path, encoding="utf-8") as fh:
        return [int(line) for line in fh if line.strip()]


def _write_bytes(path, data):
    with open(path, "wb") as fh:
        fh.write(data)


def save_dataset(ds, path, extra_files=None):
    """Write ``brain.ncmx``, ``features.ncmx``, ``captions.jsonl``, ``meta.json``.

    ``extra_files`` maps further file names to bytes written alongside.

    The directory is assembled in a temporary sibling and renamed into
    place, so a failure never leaves a half-written dataset.
    """
    path = os.path.abspath(path)
    parent = os.path.dirname(path)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".tmp-dataset-", dir=parent)
    try:
        _write_bytes(os.path.join(tmp, "brain.ncmx"), pack_matrix(ds.brain))
        _write_bytes(os.path.join(tmp, "features.ncmx"), pack_matrix(ds.features))
        if ds.unlabeled is not None:
            _write_bytes(os.path.join(tmp, "unlabeled.ncmx"), pack_matrix(ds.unlabeled))
        planted = getattr(ds, "planted_decoder", None)
        if planted is not None:
            _write_bytes(os.path.join(tmp, "planted.ncmx"), pack_matrix(planted))
        with open(os.path.join(tmp, "captions.jsonl"), "w", encoding="utf-8") as fh:
            for row, sid in enumerate(ds.ids):
                rec = {"id": int(sid), "feature_ref": row,
                       "tokens": None if ds.captions is None else ds.captions[row],
                       "split": ds.split[row]}
                if ds.clusters is not None:
                    rec["cluster"] = int(ds.clusters[row])
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for name, data in (extra_files or {}).items():
            _write_bytes(os.path.join(tmp, name), data)
        with open(os.path.join(tmp, "meta.json"), "w", encoding="utf-8") as fh:
            json.dump(ds.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if os.path.exists(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _read_ncmx(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        a, end = unpack_matrix(buf)
    except FormatError as exc:
        raise FormatError(f"{os.path.basename(path)}: {exc}") from None
    if end != len(buf):
        raise FormatError(f"{os.path.basename(path)}: trailing bytes", end)
    return a


def load_dataset(path):
    for name in ("brain.ncmx", "features.ncmx", "captions.jsonl", "meta.json"):
        if not os.path.exists(os.path.join(path, name)):
            raise DataError(f"dataset directory {path} lacks {name}")
    brain = _read_ncmx(os.path.join(path, "brain.ncmx"))
    features = _read_ncmx(os.path.join(path, "features.ncmx"))
    with open(os.path.join(path, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    ids, captions, split_labels, clusters, refs = [], [], [], [], []
    with open(os.path.join(path, "captions.jsonl"), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                rec = json.loads(line)
                ids.append(int(rec["id"]))
                refs.append(int(rec["feature_ref"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"captions.jsonl line {lineno}: {exc}") from None
            captions.append(rec.get("tokens"))
            split_labels.append(rec.get("split", "train"))
            clusters.append(rec.get("cluster"))
    if brain.shape[0] != features.shape[0]:
        raise DataError(f"brain has {brain.shape[0]} records but features has {features.shape[0]}")
    if refs != list(range(len(refs))) or len(refs) != brain.shape[0]:
        raise DataError("captions.jsonl feature_ref values must enumerate the matrix rows")
    unlabeled = None
    if os.path.exists(os.path.join(path, "unlabeled.ncmx")):
        unlabeled = _read_ncmx(os.path.join(path, "unlabeled.ncmx"))
    ds = PairedDataset(
        np.asarray(ids, dtype=np.int64), brain, features,
        None if all(c is None for c in captions) else captions,
        split_labels, meta, unlabeled,
        None if any(c is None for c in clusters) else np.asarray(clusters, dtype=np.int64),
    )
    if os.path.exists(os.path.join(path, "planted.ncmx")):
        ds.planted_decoder = _read_ncmx(os.path.join(path, "planted.ncmx"))
    return ds


def spec_from_preset(name, **overrides):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}")
    return replace(SynthSpec(), **{**PRESETS[name], **overrides})


def planted_voxel_scores(ds):
    """Per-voxel correlation between brain and its feature-driven component.

    Stands in for an upstream encoding model's prediction accuracy; needs
    the planted mixing, so only synthetic datasets qualify.
    """
    planted = getattr(ds, "planted_decoder", None)
    if planted is None:
        raise DataError("dataset has no planted structure to score voxels against")
    train = ds.subset("train") if "train" in ds.split else ds
    pred = train.features @ planted.T
    a = train.brain - train.brain.mean(axis=0)
    b = pred - pred.mean(axis=0)
    denom = np.sqrt((a * a).sum(axis=0) * (b * b).sum(axis=0))
    return np.where(denom > 0, (a * b).sum(axis=0) / np.where(denom > 0, denom, 1.0), 0.0)
