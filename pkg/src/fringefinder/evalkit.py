"""ROC/AUC, stratified k-fold cross-validation, and the CNN-vs-SVM comparison.

The ROC sweep groups tied scores into single steps, which makes the
trapezoidal AUC equal the pairwise concordance probability with ties
counted one half -- the property the test suite asserts against a
brute-force pair count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn, svm
from .synthgen import SampleRecord


@dataclass(frozen=True)
class RocCurve:
    points: list[tuple[float, float]]  # (fpr, tpr) from (0,0) to (1,1)
    thresholds: list[float]  # score threshold achieving each point
    auc: float


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    tpr: float
    tnr: float


def roc(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores, descending; trapezoidal AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores and labels differ in length: {scores.shape} vs {labels.shape}")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc requires both classes present")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    points = [(0.0, 0.0)]
    thresholds = [math.inf]
    tp = fp = 0
    i = 0
    auc = 0.0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:  # tie group becomes one step
            j += 1
        tp += int((y[i:j] == 1).sum())
        fp += int((y[i:j] == 0).sum())
        fpr = fp / n_neg
        tpr = tp / n_pos
        auc += (fpr - points[-1][0]) * (tpr + points[-1][1]) / 2.0
        points.append((fpr, tpr))
        thresholds.append(float(s[i]))
        i = j
    return RocCurve(points=points, thresholds=thresholds, auc=float(auc))


def operating_point(curve: RocCurve, min_tnr: float) -> OperatingPoint:
    """Maximize TPR subject to TNR >= min_tnr (fall back to max TNR)."""
    best = None
    for (fpr, tpr), thr in zip(curve.points, curve.thresholds):
        tnr = 1.0 - fpr
        if tnr >= min_tnr:
            if best is None or tpr > best[0] or (tpr == best[0] and tnr > best[1]):
                best = (tpr, tnr, thr)
    if best is None:
        for (fpr, tpr), thr in zip(curve.points, curve.thresholds):
            tnr = 1.0 - fpr
            if best is None or tnr > best[1] or (tnr == best[1] and tpr > best[0]):
                best = (tpr, tnr, thr)
    return OperatingPoint(threshold=best[2], tpr=best[0], tnr=best[1])


def kfold_split(records: list[SampleRecord], k: int = 2, seed: int = 0) -> list[list[SampleRecord]]:
    """Stratified folds: shuffle each class by seed, deal round-robin."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    folds: list[list[SampleRecord]] = [[] for _ in range(k)]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xF01D)))
    cursor = 0  # continues across classes so fold sizes stay within one
    for label in (1, 0):
        members = [r for r in records if r.label == label]
        if len(members) < k:
            raise ValueError(f"class {label} has {len(members)} samples, fewer than k={k}")
        order = rng.permutation(len(members))
        for idx in order:
            folds[cursor % k].append(members[idx])
            cursor += 1
    return folds


@dataclass
class FoldResult:
    config_name: str
    fold: int
    curve: RocCurve
    op_point: OperatingPoint


@dataclass
class CvReport:
    results: list[FoldResult] = field(default_factory=list)

    def mean_auc(self, config_name: str) -> float:
        aucs = [r.curve.auc for r in self.results if r.config_name == config_name]
        return float(np.mean(aucs))

    def config_names(self) -> list[str]:
        seen = []
        for r in self.results:
            if r.config_name not in seen:
                seen.append(r.config_name)
        return seen


def _downsample_points(points, limit=256):
    if len(points) <= limit:
        return points
    idx = np.unique(np.linspace(0, len(points) - 1, limit).round().astype(int))
    return [points[i] for i in idx]


def cross_validate(
    records: list[SampleRecord],
    configs: dict[str, nn.ModelConfig | str],
    hyper: nn.Hyper,
    k: int = 2,
    seed: int = 0,
    min_tnr: float = 0.95,
) -> CvReport:
    """Train on k-1 folds, score the held-out fold, one ROC per (config, fold).

    A config value of "svm" selects the texture-feature baseline; anything
    else must be a ModelConfig for the CNN path.
    """
    folds = kfold_split(records, k=k, seed=seed)
    report = CvReport()
    for name, config in configs.items():
        for i in range(k):
            train_recs = [r for j, f in enumerate(folds) if j != i for r in f]
            test_recs = folds[i]
            labels = np.array([r.label for r in test_recs])
            if config == "svm":
                model = svm.train_svm(train_recs)
                feats, _ = svm.features_for_samples(test_recs)
                scores = np.array([svm.svm_score(model, f) for f in feats])
            else:
                fold_hyper = nn.Hyper(
                    learning_rate=hyper.learning_rate,
                    momentum=hyper.momentum,
                    weight_decay=hyper.weight_decay,
                    batch_size=hyper.batch_size,
                    epochs=hyper.epochs,
                    seed=hyper.seed + i,
                )
                model, _ = nn.train(config, fold_hyper, train_recs)
                x, _ = nn.encode_samples(test_recs, config.input_side)
                scores = nn.predict_batch(model, x)
            curve = roc(scores, labels)
            report.results.append(
                FoldResult(
                    config_name=name,
                    fold=i,
                    curve=curve,
                    op_point=operating_point(curve, min_tnr),
                )
            )
    return report


def save_report(report: CvReport, path) -> None:
    """Single JSON document with per-fold curves (downsampled) and op points."""
    doc = {
        "entries": [
            {
                "config_name": r.config_name,
                "fold": r.fold,
                "auc": r.curve.auc,
                "points": [list(p) for p in _downsample_points(r.curve.points)],
                "operating_point": {
                    "threshold": r.op_point.threshold,
                    "tpr": r.op_point.tpr,
                    "tnr": r.op_point.tnr,
                },
            }
            for r in report.results
        ],
        "mean_auc": {name: report.mean_auc(name) for name in report.config_names()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, allow_nan=False)


def plot_report(report: CvReport, path) -> None:
    """ROC curves for every (config, fold) on [0,1]^2 with the chance diagonal."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot([0, 1], [0, 1], "k--", linewidth=0.8, label="chance")
    for r in report.results:
        xs = [p[0] for p in r.curve.points]
        ys = [p[1] for p in r.curve.points]
        ax.plot(xs, ys, label=f"{r.config_name} fold {r.fold} (AUC {r.curve.auc:.3f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
