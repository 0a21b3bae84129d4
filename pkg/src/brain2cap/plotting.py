"""Static figures for the ``report`` command: training curves and metric bars."""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
FIGSIZE = (5.0, 3.2)
_PNG_META = {"Software": None}


def read_log(path):
    """Training log CSV -> ``(value_name, {split: [(epoch, value), ...]})``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    series = {}
    for epoch, split, value in body:
        series.setdefault(split, []).append((int(epoch), float(value)))
    return header[2], series


def read_metric(path):
    """Metric CSV -> ``(metric, corpus_score, [(id, score), ...])``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    metric = rows[0][0] if rows else "metric"
    corpus = None
    per = []
    for m, sid, score in rows:
        if sid == "corpus":
            corpus = float(score)
        else:
            per.append((sid, float(score)))
    return metric, corpus, per


def csv_kind(path):
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    if header[:2] == ["epoch", "split"]:
        return "log"
    if header[:2] == ["metric", "id"]:
        return "metric"
    return None


def plot_curves(series, ylabel, title, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        for split in sorted(series):
            pts = series[split]
            ax.plot([e for e, _ in pts], [v for _, v in pts], label=split, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if any(v > 0 for pts in series.values() for _, v in pts):
            ax.set_yscale("log")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)


def plot_score_bars(scores, path, title="Caption metrics"):
    """``scores``: ``[(label, metric, value), ...]`` grouped by label."""
    labels = sorted({s[0] for s in scores})
    metrics = sorted({s[1] for s in scores})
    lookup = {(l, m): v for l, m, v in scores}
    width = 0.8 / max(len(metrics), 1)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        for k, m in enumerate(metrics):
            xs = [i + k * width for i in range(len(labels))]
            ax.bar(xs, [lookup.get((l, m), 0.0) for l in labels], width, label=m)
        ax.set_xticks([i + width * (len(metrics) - 1) / 2 for i in range(len(labels))])
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_ylabel("corpus score")
        ax.set_ylim(0, 1)
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)


def stem(path):
    return os.path.splitext(os.path.basename(path))[0]
