"""Linear one-vs-rest SVM on video-level vectors, and mAP evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, NumericError

log = logging.getLogger(__name__)

MODEL_FORMAT = "mfhodg-svm"
REPORT_FORMAT = "mfhodg-report"
FORMAT_VERSION = 1
DEFAULT_C = 100.0


@dataclass
class SvmModel:
    classes: list
    weights: np.ndarray  # (n_classes, D)
    biases: np.ndarray  # (n_classes,)
    C: float
    seed: int = 0
    bias_scale: float = 1.0


@dataclass
class EvalReport:
    classes: list
    per_class_ap: dict
    map: float
    scores: np.ndarray
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": FORMAT_VERSION,
            "classes": [str(c) for c in self.classes],
            "per_class_ap": {str(k): v for k, v in self.per_class_ap.items()},
            "map": self.map,
            "warnings": list(self.warnings),
            "scores": self.scores.tolist(),
        }

    def table(self, title: str = "mAP") -> str:
        names = [str(c) for c in self.per_class_ap]
        width = max([len(n) for n in names] + [len(title), 8])
        lines = [f"{'class':<{width}} | {'AP':>8}", "-" * (width + 11)]
        for name, ap in zip(names, self.per_class_ap.values()):
            lines.append(f"{name:<{width}} | {100 * ap:7.2f}%")
        lines.append("-" * (width + 11))
        lines.append(f"{title:<{width}} | {100 * self.map:7.2f}%")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def _dual_cd(X, y, C, rng, epochs, tol):
    """Hinge-loss SVM by dual coordinate descent; X already carries the bias column.

    Minimizes 0.5 ||w||^2 + C sum_i max(0, 1 - y_i w.x_i) and stops when the
    duality gap falls under ``tol * max(1, primal)``.
    """
    n = len(X)
    qdiag = np.einsum("ij,ij->i", X, X)
    alpha = np.zeros(n)
    w = np.zeros(X.shape[1])
    for epoch in range(epochs):
        for i in rng.permutation(n):
            xi = X[i]
            g = y[i] * (w @ xi) - 1.0
            a = alpha[i]
            if a == 0.0:
                pg = min(g, 0.0)
            elif a == C:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                new = min(max(a - g / qdiag[i], 0.0), C)
                w += (new - a) * y[i] * xi
                alpha[i] = new
        ww = w @ w
        primal = 0.5 * ww + C * np.maximum(0.0, 1.0 - y * (X @ w)).sum()
        dual = alpha.sum() - 0.5 * ww
        if primal - dual <= tol * max(1.0, abs(primal)):
            return w, epoch + 1
    log.debug("SVM stopped at epoch limit %d, gap %.3g", epochs, primal - dual)
    return w, epochs


def train_svm(features, labels: Sequence, C: float = DEFAULT_C, seed: int = 0,
              epochs: int = 1000, tol: float = 1e-4, bias_scale: float = 1.0) -> SvmModel:
    """One-vs-rest linear SVMs, one per distinct label (sorted).

    The bias is learnt as the weight of an extra constant feature equal to
    ``bias_scale``; each class uses its own seeded permutation stream.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = list(labels)
    if X.ndim != 2 or len(X) != len(labels):
        raise DataError(f"features {X.shape} and {len(labels)} labels disagree")
    if len(X) < 2:
        raise DataError("need at least 2 training samples")
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite features")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DataError("need at least 2 distinct classes")
    if C <= 0:
        raise ValueError("C must be positive")

    Xa = np.hstack([X, np.full((len(X), 1), float(bias_scale))])
    lab = np.array(labels, dtype=object)
    weights = np.zeros((len(classes), X.shape[1]))
    biases = np.zeros(len(classes))
    for ci, cls in enumerate(classes):
        y = np.where(lab == cls, 1.0, -1.0)
        rng = np.random.default_rng([seed, ci])
        w, _ = _dual_cd(Xa, y, float(C), rng, epochs, tol)
        weights[ci] = w[:-1]
        biases[ci] = w[-1] * bias_scale
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
        raise NumericError("SVM training produced non-finite weights")
    return SvmModel(classes, weights, biases, float(C), seed, float(bias_scale))


def predict_scores(model: SvmModel, x) -> np.ndarray:
    """Raw scores w_c . x + b_c for one vector (n_classes) or a matrix (N x n_classes)."""
    X = np.asarray(x, dtype=np.float64)
    if X.shape[-1] != model.weights.shape[1]:
        raise DataError(f"dimension {X.shape[-1]} != model dimension {model.weights.shape[1]}")
    return X @ model.weights.T + model.biases


def average_precision(scores, positives) -> float:
    """AP of a ranking by descending score, ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    npos = int(pos.sum())
    if npos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = pos[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    # fsum keeps the result independent of summation order
    return math.fsum(precision[hits].tolist()) / npos


def evaluate(model: SvmModel, features, labels: Sequence) -> EvalReport:
    """Per-class AP of the one-vs-rest scores; classes with no test positives are skipped."""
    scores = np.atleast_2d(predict_scores(model, features))
    lab = np.array(list(labels), dtype=object)
    per_class = {}
    warnings = []
    for ci, cls in enumerate(model.classes):
        pos = lab == cls
        if not pos.any():
            msg = f"class {cls!r} has no test samples; excluded from mAP"
            log.warning(msg)
            warnings.append(msg)
            continue
        per_class[cls] = average_precision(scores[:, ci], pos)
    unknown = sorted({str(v) for v in lab} - {str(c) for c in model.classes})
    if unknown:
        warnings.append(f"test labels unknown to the model: {', '.join(unknown)}")
    if not per_class:
        raise DataError("no class of the model appears in the test labels")
    mean_ap = float(np.mean(list(per_class.values())))
    return EvalReport(list(model.classes), per_class, mean_ap, scores, warnings)


def save_model(path, model: SvmModel) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "classes": list(model.classes),
        "weights": model.weights.tolist(),
        "biases": model.biases.tolist(),
        "C": model.C,
        "seed": model.seed,
        "bias_scale": model.bias_scale,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> SvmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not an SVM model file")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported model version {doc.get('version')!r}")
    return SvmModel(
        classes=doc["classes"],
        weights=np.array(doc["weights"], dtype=np.float64),
        biases=np.array(doc["biases"], dtype=np.float64),
        C=doc["C"],
        seed=doc.get("seed", 0),
        bias_scale=doc.get("bias_scale", 1.0),
    )


def save_report(path, report: EvalReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1))
