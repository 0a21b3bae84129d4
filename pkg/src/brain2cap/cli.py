"""Command-line entry point: synth, train, decode, retrieve, eval, mask, report.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric
divergence. Outputs are written only after all computation succeeds.
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import data as D
from . import persist
from .config import ConfigError, load_config
from .decoder import build_vocabulary, generate_beam, generate_greedy, load_embeddings, perplexity, train_lm
from .errors import DataError, DivergenceError, NonFiniteError, ShapeError
from .mathcore.io import pack_matrix, read_matrix
from .metrics import evaluate_run
from .optim import AdamConfig, SgdConfig
from .pipeline import FeatureDatabase, VoxelMask, apply_mask, read_scores, retrieve_similar, select_voxels
from .regressors import ae_pretrain, dnn_fit, mlp_fit, ridge_fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _dumps(obj):
    return json.dumps(obj, sort_keys=True)


def _jsonl(records):
    return "".join(_dumps(r) + "\n" for r in records).encode("utf-8")


def write_outputs(files):
    """Write ``{path: bytes}`` via temp files, renaming only once all are staged."""
    staged = []
    try:
        for path, data in files.items():
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def _log_csv(rows, value_name):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "split", value_name])
    for epoch, split, value in rows:
        w.writerow([epoch, split, repr(float(value))])
    return buf.getvalue().encode("utf-8")


# -- synth -------------------------------------------------------------------

def cmd_synth(args):
    kw = dict(seed=args.seed, noise_std=args.noise_std, brain_dim=args.brain_dim,
              feature_dim=args.feature_dim, n_clusters=args.clusters,
              templates_per_cluster=args.templates, ar1=args.ar1)
    if args.preset:
        spec = D.spec_from_preset(args.preset, **kw)
    else:
        spec = D.SynthSpec(n_train=args.n, n_test=args.n_test, n_unlabeled=args.n_unlabeled, **kw)
    ds = D.synth_generate(spec)
    db = FeatureDatabase(ds.ids, ds.features)
    tmp = tempfile.NamedTemporaryFile(delete=False)
    tmp.close()
    try:
        db.save(tmp.name)
        with open(tmp.name, "rb") as fh:
            db_bytes = fh.read()
    finally:
        os.unlink(tmp.name)
    scores = io.StringIO()
    w = csv.writer(scores, lineterminator="\n")
    w.writerow(["index", "score"])
    for i, s in enumerate(D.planted_voxel_scores(ds)):
        w.writerow([i, repr(float(s))])
    D.save_dataset(ds, args.out, {"features.ncfd": db_bytes,
                                  "voxel_scores.csv": scores.getvalue().encode("utf-8")})
    print(_dumps({"out": args.out, "n": len(ds), "brain_dim": ds.brain_dim,
                  "feature_dim": ds.feature_dim}))


# -- train -------------------------------------------------------------------

def _load_mask(path, n):
    return VoxelMask.load(path, n) if path else None


def _brain(ds_brain, mask):
    return apply_mask(ds_brain, mask) if mask is not None else ds_brain


def _sgd(section):
    return SgdConfig(lr=section["learning-rate"], clip=section["gradient-clipping-threshold"],
                     l2=section["l2-norm"])


def cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg["seed"] if args.seed is None else args.seed
    ds = D.load_dataset(args.data)
    mask = _load_mask(args.mask, ds.brain_dim)
    train = ds.subset("train")
    test = ds.subset("test")
    if len(train) == 0:
        raise DataError("dataset has no training samples")
    Xtr, Xte = _brain(train.brain, mask), _brain(test.brain, mask)
    kind = args.kind
    section = dict(cfg[kind])
    if args.epochs is not None:
        if "training-epochs" not in section:
            raise UsageError(f"--epochs does not apply to {kind}")
        section["training-epochs"] = args.epochs
    record = {"kind": kind, "seed": seed, "section": section, "mask": args.mask}
    files = {}
    summary = {"kind": kind, "seed": seed}
    resume = persist.load_checkpoint(args.resume, kind) if args.resume else None

    if kind == "ridge":
        model = ridge_fit(Xtr, train.features, section["l2-norm"],
                          standardize=section["standardize"])
        rows = [(0, "train", _mse(model, Xtr, train.features))]
        if len(test):
            rows.append((0, "test", _mse(model, Xte, test.features)))
        summary.update({f"{s}_mse": v for _, s, v in rows})
        value_name = "mse"
    elif kind in ("mlp3", "dnn5"):
        arch = (Xtr.shape[1], *section["units-per-layer"], train.feature_dim)
        kw = dict(activation=section["activation"], batch_size=section["batch-size"],
                  standardize=section["standardize"], init_scheme=section["initial-parameters"],
                  X_val=Xte if len(test) else None, Y_val=test.features if len(test) else None,
                  resume=resume)
        stack = persist.load_checkpoint(args.init, "ae") if args.init else None
        if stack is not None and kind != "dnn5":
            raise UsageError("--init applies to dnn5 only")
        epochs = section["training-epochs"]
        if kind == "dnn5":
            model = dnn_fit(Xtr, train.features, arch, stack, _sgd(section), epochs, seed, **kw)
        else:
            model = mlp_fit(Xtr, train.features, arch, _sgd(section), epochs, seed, **kw)
        rows = [(e, s, v) for e, s, v in model.log]
        summary["train_mse"] = model.mse(Xtr, train.features)
        if len(test):
            summary["test_mse"] = model.mse(Xte, test.features)
        summary["first_epoch_train_loss"] = next((v for _, s, v in rows if s == "train"), None)
        summary["initialized_from"] = args.init
        value_name = "mse"
    elif kind == "ae":
        X = ds.unlabeled if ds.unlabeled is not None else ds.brain
        X = _brain(X, mask)
        model = ae_pretrain(X, cfg["dnn5"]["units-per-layer"], section["training-epochs"],
                            _sgd(section), seed, activation=section["activation"],
                            batch_size=section["batch-size"], standardize=section["standardize"],
                            init_scheme=section["initial-parameters"])
        rows = [(e, f"layer{i}", v) for i, curve in enumerate(model.losses) for e, v in enumerate(curve)]
        summary["final_reconstruction_mse"] = [c[-1] if c else None for c in model.losses]
        value_name = "mse"
    else:
        model, rows, extra = _train_lm(section, train, test, seed, resume, files, args.out)
        summary.update(extra)
        value_name = "perplexity"

    if any(not np.isfinite(v) for _, _, v in rows):
        raise DivergenceError("non-finite value in training log")
    os.makedirs(args.out, exist_ok=True)
    files[os.path.join(args.out, f"{kind}.ckpt")] = persist.dumps_checkpoint(model, record)
    files[os.path.join(args.out, f"{kind}_log.csv")] = _log_csv(rows, value_name)
    files[os.path.join(args.out, f"{kind}_summary.json")] = (_dumps(summary) + "\n").encode()
    write_outputs(files)
    print(_dumps(summary))


def _mse(model, X, Y):
    d = model.predict(X) - Y
    return float(np.mean(d * d))


def _train_lm(section, train, test, seed, resume, files, out):
    if train.captions is None:
        raise DataError("dataset has no captions")
    if resume is not None:
        vocab = resume.vocab
    else:
        vocab = build_vocabulary(train.captions, section["vocabulary-min-count"])
    units = section["units-per-layer"]
    embeddings = None
    if section["word-embedding"]:
        embeddings = load_embeddings(section["word-embedding"], vocab, units)
    pairs = [(f, vocab.encode(c)) for f, c in zip(train.features, train.captions)]
    cfg = AdamConfig(a=section["a"], b1=section["b1"], b2=section["b2"], eps=section["eps"],
                     clip=section["gradient-clipping-threshold"], l2=section["l2-norm"])
    model = train_lm(pairs, vocab, cfg, section["training-epochs"], seed, embed_dim=units,
                     hidden=units, batch_size=section["batch-size"],
                     init_scheme=section["initial-parameters"], embeddings=embeddings,
                     resume=resume)
    extra = {"vocabulary_size": len(vocab), "train_perplexity": perplexity(model, pairs)}
    if len(test) and test.captions is not None:
        extra["test_perplexity"] = perplexity(
            model, [(f, vocab.encode(c)) for f, c in zip(test.features, test.captions)])
    buf = io.StringIO()
    for tok in vocab.tokens:
        buf.write(tok + "\n")
    files[os.path.join(out, "vocab.txt")] = buf.getvalue().encode("utf-8")
    return model, list(model.log), extra


# -- decode / retrieve -----------------------------------------------------------

def _read_inputs(path, split):
    """Dataset directory or NCMX file -> ``(ids, brain, features)``."""
    if os.path.isdir(path):
        ds = D.load_dataset(path)
        if split != "all":
            ds = ds.subset(split)
        return ds.ids.tolist(), ds.brain, ds.features
    m = read_matrix(path)
    return list(range(m.shape[0])), m, m


def cmd_decode(args):
    lm = persist.load_checkpoint(args.lm, "lm")
    ids, brain, features = _read_inputs(args.brain, args.split)
    if args.regressor:
        reg = persist.load_checkpoint(args.regressor)
        if reg.kind in ("ae", "lm"):
            raise DataError(f"{args.regressor} is not a regressor checkpoint")
        mask = _load_mask(args.mask, brain.shape[1])
        feats = reg.predict(_brain(brain, mask)) if len(ids) else np.zeros((0, lm.feature_dim))
    else:
        feats = features
    if feats.shape[1] != lm.feature_dim and len(ids):
        raise ShapeError(f"features have {feats.shape[1]} dims, decoder expects {lm.feature_dim}")
    records = []
    for sid, f in zip(ids, feats):
        if args.beam == 1:
            toks = generate_greedy(lm, f, args.max_len)
            words = lm.vocab.decode(toks)
            records.append({"id": sid, "tokens": words, "caption": " ".join(words)})
        else:
            nbest = []
            for toks, lp in generate_beam(lm, f, args.beam, args.max_len):
                words = lm.vocab.decode(toks)
                nbest.append({"tokens": words, "caption": " ".join(words), "logprob": lp})
            records.append({"id": sid, "captions": nbest})
    write_outputs({args.out: _jsonl(records)})


def cmd_retrieve(args):
    if os.path.isdir(args.db):
        ds = D.load_dataset(args.db)
        db = FeatureDatabase(ds.ids, ds.features)
    else:
        db = FeatureDatabase.load(args.db)
    if args.query:
        q = read_matrix(args.query)
        ids = list(range(q.shape[0]))
    elif args.brain and args.regressor:
        ids, brain, _ = _read_inputs(args.brain, args.split)
        reg = persist.load_checkpoint(args.regressor)
        q = reg.predict(_brain(brain, _load_mask(args.mask, brain.shape[1])))
    else:
        raise UsageError("retrieve needs --query, or --brain with --regressor")
    records = [{"query": qid, "results": [{"id": i, "mse": m} for i, m in retrieve_similar(row, db, args.k)]}
               for qid, row in zip(ids, q)]
    write_outputs({args.out: _jsonl(records)})


# -- eval / mask / report ------------------------------------------------------

def _read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def _toks(x):
    return x.split() if isinstance(x, str) else list(x)


def _candidate(rec):
    if "tokens" in rec:
        return _toks(rec["tokens"])
    if "captions" in rec:
        return _toks(rec["captions"][0]["tokens"]) if rec["captions"] else []
    raise DataError(f"candidate record {rec.get('id')} has no tokens")


def _references(rec):
    if "references" in rec:
        return [_toks(r) for r in rec["references"]]
    if "captions" in rec:
        return [_toks(c["tokens"]) for c in rec["captions"]]
    if "tokens" in rec:
        return [_toks(rec["tokens"])]
    raise DataError(f"reference record {rec.get('id')} has no references")


def cmd_eval(args):
    cands = {r["id"]: _candidate(r) for r in _read_jsonl(args.candidates)}
    refs = {r["id"]: _references(r) for r in _read_jsonl(args.references)}
    if args.ids:
        keep = D.read_id_list(args.ids)
        missing = [i for i in keep if i not in cands or i not in refs]
        if missing:
            raise DataError(f"curated ids missing from inputs: {missing[:5]}")
        cands = {i: cands[i] for i in keep}
        refs = {i: refs[i] for i in keep}
    reports = evaluate_run(cands, refs)
    files = {}
    for rep in reports:
        files[os.path.join(args.out, f"{rep.metric}.json")] = rep.to_json().encode()
        files[os.path.join(args.out, f"{rep.metric}.csv")] = rep.to_csv().encode()
    write_outputs(files)
    print(_dumps({r.metric: r.corpus_score for r in reports}))


def cmd_mask(args):
    scores = read_scores(args.scores)
    mask = select_voxels(scores, args.threshold)
    buf = "".join(f"{i}\n" for i in mask.indices)
    write_outputs({args.out: buf.encode()})
    print(_dumps({"threshold": args.threshold, "selected": mask.count, "total": len(mask)}))


def cmd_report(args):
    from . import plotting

    files, rows, bars = {}, [], []
    tmpdir = tempfile.mkdtemp(prefix=".tmp-report-", dir=os.path.dirname(os.path.abspath(args.out)) or ".")
    try:
        for path in args.inputs:
            kind = plotting.csv_kind(path)
            name = plotting.stem(path)
            if kind == "log":
                value_name, series = plotting.read_log(path)
                png = os.path.join(tmpdir, f"{name}.png")
                plotting.plot_curves(series, value_name, name, png)
                with open(png, "rb") as fh:
                    files[os.path.join(args.out, f"{name}.png")] = fh.read()
                for split, pts in sorted(series.items()):
                    best = min(pts, key=lambda p: (p[1], p[0]))
                    rows.append([name, split, value_name, "final", repr(pts[-1][1]), pts[-1][0]])
                    rows.append([name, split, value_name, "min", repr(best[1]), best[0]])
            elif kind == "metric":
                metric, corpus, per = plotting.read_metric(path)
                rows.append([name, "corpus", metric, "corpus", repr(corpus), ""])
                label = os.path.basename(os.path.dirname(os.path.abspath(path))) or name
                bars.append((label, metric, corpus))
            else:
                raise DataError(f"{path}: not a training log or metric CSV")
        if bars:
            png = os.path.join(tmpdir, "scores.png")
            plotting.plot_score_bars(bars, png)
            with open(png, "rb") as fh:
                files[os.path.join(args.out, "scores.png")] = fh.read()
    finally:
        for f in os.listdir(tmpdir):
            os.unlink(os.path.join(tmpdir, f))
        os.rmdir(tmpdir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "split", "quantity", "statistic", "value", "epoch"])
    w.writerows(rows)
    files[os.path.join(args.out, "report.csv")] = buf.getvalue().encode()
    write_outputs(files)


# -- argument parsing ----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="brain2cap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset directory")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=200, help="training samples")
    s.add_argument("--n-test", type=int, default=50)
    s.add_argument("--n-unlabeled", type=int, default=0)
    s.add_argument("--brain-dim", type=int, default=640)
    s.add_argument("--feature-dim", type=int, default=64)
    s.add_argument("--noise-std", type=float, default=0.0)
    s.add_argument("--clusters", type=int, default=8)
    s.add_argument("--templates", type=int, default=1, help="caption templates per cluster")
    s.add_argument("--ar1", type=float, default=0.0, help="AR(1) coefficient of the noise")
    s.add_argument("--preset", choices=sorted(D.PRESETS))
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one model kind")
    t.add_argument("kind", choices=["ridge", "mlp3", "dnn5", "lm", "ae"])
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int, help="override training-epochs")
    t.add_argument("--init", help="autoencoder checkpoint for dnn5")
    t.add_argument("--resume", help="continue training from a checkpoint of the same kind")
    t.add_argument("--mask", help="voxel mask file applied to brain inputs")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="caption brain records (or features without --regressor)")
    d.add_argument("--lm", required=True)
    d.add_argument("--regressor")
    d.add_argument("--brain", required=True, help="dataset directory or NCMX matrix")
    d.add_argument("--split", default="test", choices=["train", "test", "all"])
    d.add_argument("--beam", type=int, default=1)
    d.add_argument("--max-len", type=int, default=20)
    d.add_argument("--mask")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    r = sub.add_parser("retrieve", help="k nearest database features under MSE")
    r.add_argument("--db", required=True, help="feature database (.ncfd) or dataset directory")
    r.add_argument("--query", help="NCMX matrix of query features")
    r.add_argument("--brain")
    r.add_argument("--regressor")
    r.add_argument("--split", default="test", choices=["train", "test", "all"])
    r.add_argument("--mask")
    r.add_argument("--k", type=int, default=3)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_retrieve)

    e = sub.add_parser("eval", help="BLEU-4 and meteor_lite reports")
    e.add_argument("--candidates", required=True)
    e.add_argument("--references", required=True)
    e.add_argument("--ids", help="curated sample ids, one per line")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("mask", help="select voxels whose score exceeds a threshold")
    m.add_argument("--scores", required=True)
    m.add_argument("--threshold", type=float, required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask)

    rp = sub.add_parser("report", help="render log and metric CSVs to figures")
    rp.add_argument("inputs", nargs="+")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("beam", "k", "max_len", "n"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            parser.error(f"--{name.replace('_', '-')} must be >= 1")
    try:
        args.func(args)
    except (DataError, ShapeError, NonFiniteError, FileNotFoundError, IsADirectoryError,
            KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
