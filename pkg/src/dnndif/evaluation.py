"""ROC analysis of pooled detector output.

A score ``s`` is classified positive at cutoff ``t`` when ``s >= t``.  Tied
scores share one ROC point, which makes the trapezoidal area equal to the
Mann-Whitney statistic with ties counted one half.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabelsError, ShapeError


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auroc: float

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


@dataclass
class ConfusionSummary:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tpr(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def fpr(self) -> float:
        neg = self.fp + self.tn
        return self.fp / neg if neg else float("nan")

    sensitivity = tpr

    @property
    def specificity(self) -> float:
        neg = self.fp + self.tn
        return self.tn / neg if neg else float("nan")

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "tpr": self.tpr, "fpr": self.fpr}


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores vs {labels.size} labels")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise DegenerateLabelsError("need at least one positive and one negative label")
    return scores, labels


def _sweep(scores, labels):
    """Cumulative (tp, fp) at each distinct score, descending, plus the +inf cut."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last_of_run]
    fp = np.cumsum(~y)[last_of_run]
    thresholds = np.r_[np.inf, s[last_of_run]]
    return np.r_[0, tp], np.r_[0, fp], thresholds


def roc_curve(scores, labels) -> RocCurve:
    scores, labels = _check(scores, labels)
    tp, fp, thresholds = _sweep(scores, labels)
    tpr = tp / labels.sum()
    fpr = fp / (~labels).sum()
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, area)


def auroc(scores, labels) -> float:
    return roc_curve(scores, labels).auroc


def mann_whitney_auc(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counted 1/2."""
    scores, labels = _check(scores, labels)
    ranks = rankdata(scores)
    n1 = labels.sum()
    n0 = labels.size - n1
    u = ranks[labels].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def liu_cutpoint(scores, labels) -> tuple:
    """Cutoff maximizing sensitivity x specificity; returns ``(threshold, sens, spec)``.

    Candidates are every distinct score plus ``+inf``; ties in the product go to
    the smaller threshold.
    """
    scores, labels = _check(scores, labels)
    tp, fp, thresholds = _sweep(scores, labels)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    # sens * spec = tp * tn / (n_pos * n_neg); compare the integer numerators so
    # equal products tie exactly
    product = tp.astype(np.int64) * (n_neg - fp.astype(np.int64))
    # thresholds descend, so the last maximizer is the smallest threshold
    k = len(product) - 1 - int(np.argmax(product[::-1]))
    return float(thresholds[k]), float(tp[k] / n_pos), float((n_neg - fp[k]) / n_neg)


def confusion(flags, labels) -> ConfusionSummary:
    flags = np.asarray(flags).astype(bool).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if flags.shape != labels.shape:
        raise ShapeError(f"{flags.size} flags vs {labels.size} labels")
    return ConfusionSummary(
        tp=int(np.sum(flags & labels)),
        fp=int(np.sum(flags & ~labels)),
        tn=int(np.sum(~flags & ~labels)),
        fn=int(np.sum(~flags & labels)),
    )


@dataclass
class TargetEvaluation:
    target: str
    roc: RocCurve
    cutpoint: float
    sensitivity: float
    specificity: float
    confusion: ConfusionSummary

    def summary(self) -> dict:
        return {"target": self.target, "auroc": self.roc.auroc, "cutpoint": self.cutpoint,
                "sensitivity": self.sensitivity, "specificity": self.specificity,
                "confusion": self.confusion.to_dict()}


def evaluate_scores(target: str, scores, labels) -> TargetEvaluation:
    roc = roc_curve(scores, labels)
    cut, sens, spec = liu_cutpoint(scores, labels)
    conf = confusion(np.asarray(scores).ravel() >= cut, labels)
    return TargetEvaluation(target, roc, cut, sens, spec, conf)


def pooled_evaluation(net_thresholds, net_loadings, eval_corpus) -> dict:
    """Pool predictions over all replications and outputs, per target kind."""
    from .dnn import predict_batched
    from .store import split_labels

    for net in (net_thresholds, net_loadings):
        arch = net.architecture
        if arch.input_dim != eval_corpus.input_dim or arch.output_dim != eval_corpus.n_cells:
            raise ShapeError(f"network {arch.input_dim}->{arch.output_dim} does not match corpus "
                             f"({eval_corpus.input_dim} inputs, {eval_corpus.n_cells} cells)")
    X, labels = eval_corpus.load_arrays()
    out = {}
    for target, net in (("thresholds", net_thresholds), ("loadings", net_loadings)):
        scores = predict_batched(net, X)
        out[target] = evaluate_scores(target, scores, split_labels(labels, target))
    return out


def baseline_confusion(flags, labels) -> dict:
    """Pooled (TPR, FPR) of binary flags per target kind.

    ``flags`` is a sequence of FlagMatrix (``None`` entries are skipped along
    with their labels); ``labels`` the matching label vectors.
    """
    flags = list(flags)
    labels = list(labels)
    if len(flags) != len(labels):
        raise ShapeError(f"{len(flags)} flag matrices vs {len(labels)} label vectors")
    thr_f, thr_y, load_f, load_y = [], [], [], []
    for fm, y in zip(flags, labels):
        if fm is None:
            continue
        y = np.asarray(y)
        cells = fm.threshold_flags.size
        if y.size != 2 * cells:
            raise ShapeError(f"label vector of length {y.size} does not match {cells} cells")
        thr_f.append(fm.threshold_flags.ravel())
        load_f.append(fm.loading_flags.ravel())
        thr_y.append(y[:cells])
        load_y.append(y[cells:])
    if not thr_f:
        raise ShapeError("no flag matrices to pool")
    return {"thresholds": confusion(np.concatenate(thr_f), np.concatenate(thr_y)),
            "loadings": confusion(np.concatenate(load_f), np.concatenate(load_y))}


def write_roc_csv(roc: RocCurve, path) -> None:
    lines = ["threshold,fpr,tpr"]
    lines += ["%.17g,%.17g,%.17g" % row for row in zip(roc.thresholds, roc.fpr, roc.tpr)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_csv(evaluations, path) -> None:
    lines = ["target,auroc,cutpoint,sensitivity,specificity"]
    for ev in evaluations:
        lines.append("%s,%.17g,%.17g,%.17g,%.17g" % (ev.target, ev.roc.auroc, ev.cutpoint,
                                                      ev.sensitivity, ev.specificity))
    Path(path).write_text("\n".join(lines) + "\n")


def write_roc_svg(evaluation: TargetEvaluation, path, baseline: ConfusionSummary | None = None,
                  size: int = 320) -> None:
    """Minimal standalone SVG of one ROC curve, optionally with a baseline point."""
    pad = 30
    span = size - 2 * pad

    def xy(fpr, tpr):
        return pad + fpr * span, size - pad - tpr * span

    roc = evaluation.roc
    pts = " ".join("%.2f,%.2f" % xy(f, t) for f, t in zip(roc.fpr, roc.tpr))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        '<line x1="%.2f" y1="%.2f" x2="%.2f" y2="%.2f" stroke="grey" stroke-dasharray="4"/>'
        % (*xy(0, 0), *xy(1, 1)),
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="1.5"/>',
        '<text x="%d" y="%d" font-size="12">%s AUROC %.3f</text>' % (pad, pad - 8, evaluation.target,
                                                                      roc.auroc),
        '<text x="%d" y="%d" font-size="11">FPR</text>' % (size // 2, size - 8),
        '<text x="4" y="%d" font-size="11">TPR</text>' % (size // 2),
    ]
    cx, cy = xy(1 - evaluation.specificity, evaluation.sensitivity)
    parts.append('<circle cx="%.2f" cy="%.2f" r="4" fill="steelblue"/>' % (cx, cy))
    if baseline is not None:
        bx, by = xy(baseline.fpr, baseline.tpr)
        parts.append('<rect x="%.2f" y="%.2f" width="8" height="8" fill="darkorange"/>' % (bx - 4, by - 4))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")

