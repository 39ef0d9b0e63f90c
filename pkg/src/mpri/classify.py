"""Nearest-neighbour classification, train/test splits and accuracy metrics."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cube import LabelMap
from .errors import DomainError

log = logging.getLogger(__name__)


@dataclass
class KnnModel:
    """Euclidean k-NN.

    Ties in distance go to the lower training row; ties in the vote go to
    the smaller class id.
    """

    k: int
    train_features: np.ndarray
    train_labels: np.ndarray

    def __post_init__(self):
        self.train_features = np.asarray(self.train_features, dtype=np.float64)
        if self.train_features.ndim == 1:
            self.train_features = self.train_features[:, None]
        self.train_labels = np.asarray(self.train_labels, dtype=np.int64).ravel()
        if self.train_features.shape[0] != self.train_labels.shape[0]:
            raise DomainError("one label per training row is required")
        if not 1 <= self.k <= self.train_labels.size:
            raise DomainError(f"k must lie in 1..{self.train_labels.size}, got {self.k}")
        if self.train_labels.min() < 1:
            raise DomainError("training labels must be class ids >= 1")

    @property
    def dim(self):
        return self.train_features.shape[1]

    def predict(self, queries, chunk=512):
        Q = np.asarray(queries, dtype=np.float64)
        if Q.ndim == 1:
            Q = Q[None]
        if Q.shape[1] != self.dim:
            raise DomainError(f"query dimension {Q.shape[1]} != model dimension {self.dim}")
        n_classes = int(self.train_labels.max()) + 1
        out = np.empty(Q.shape[0], dtype=np.int64)
        T = self.train_features
        for start in range(0, Q.shape[0], chunk):
            q = Q[start:start + chunk]
            diff = q[:, None, :] - T[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            nearest = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
            votes = self.train_labels[nearest]
            if self.k == 1:
                out[start:start + len(q)] = votes[:, 0]
                continue
            for i, row in enumerate(votes):
                out[start + i] = np.argmax(np.bincount(row, minlength=n_classes))
        return out


def knn_classify(model, query):
    return int(model.predict(np.asarray(query, dtype=np.float64)[None])[0])


@dataclass
class EvalReport:
    confusion: np.ndarray
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray
    missing: list = field(default_factory=list)

    @property
    def n_classes(self):
        return self.confusion.shape[0]

    def to_text(self):
        C = self.n_classes
        lines = ["confusion matrix (rows = truth, cols = predicted)"]
        width = max(6, len(str(int(self.confusion.max()))) + 2)
        lines.append(" " * 6 + "".join(f"{c:>{width}d}" for c in range(1, C + 1)))
        for i in range(C):
            lines.append(f"{i + 1:>6d}" + "".join(f"{int(v):>{width}d}" for v in self.confusion[i]))
        lines.append("")
        lines.append(f"{'class':>6} {'test':>8} {'correct':>8} {'accuracy':>9}")
        for i in range(C):
            n = int(self.confusion[i].sum())
            acc = "n/a" if n == 0 else f"{100 * self.per_class[i]:.2f}"
            lines.append(f"{i + 1:>6d} {n:>8d} {int(self.confusion[i, i]):>8d} {acc:>9}")
        lines.append(f"OA {100 * self.oa:.2f}  AA {100 * self.aa:.2f}  kappa {self.kappa:.4f}")
        lines.append("")
        lines.append("[values]")
        lines.append(f"classes={C}")
        lines.append(f"oa={self.oa!r}")
        lines.append(f"aa={self.aa!r}")
        lines.append(f"kappa={self.kappa!r}")
        for i in range(C):
            lines.append(f"per_class[{i + 1}]={float(self.per_class[i])!r}")
        for i in range(C):
            lines.append(f"confusion[{i + 1}]={' '.join(str(int(v)) for v in self.confusion[i])}")
        lines.append(f"missing={','.join(str(c) for c in self.missing)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        _, _, block = text.partition("[values]")
        kv = {}
        for line in block.splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                kv[key.strip()] = value.strip()
        C = int(kv["classes"])
        confusion = np.array([[int(v) for v in kv[f"confusion[{i}]"].split()] for i in range(1, C + 1)],
                             dtype=np.int64).reshape(C, C)
        per_class = np.array([float(kv[f"per_class[{i}]"]) for i in range(1, C + 1)])
        missing = [int(v) for v in kv.get("missing", "").split(",") if v]
        return cls(confusion, float(kv["oa"]), float(kv["aa"]), float(kv["kappa"]), per_class, missing)


def confusion_matrix(truth, pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth - 1, pred - 1), 1)
    return cm


def report_from_confusion(cm):
    """OA, AA and Cohen's kappa from a confusion matrix (rows = truth)."""
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        raise DomainError("empty test set")
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    diag = np.diag(cm)
    oa = diag.sum() / total
    present = rows > 0
    per_class = np.full(cm.shape[0], np.nan)
    per_class[present] = diag[present] / rows[present]
    aa = float(per_class[present].mean())
    pe = float((rows.astype(np.float64) * cols).sum() / float(total) ** 2)
    kappa = 1.0 if pe == 1.0 else (oa - pe) / (1.0 - pe)
    missing = [int(i + 1) for i in np.flatnonzero(~present)]
    return EvalReport(cm, float(oa), aa, float(kappa), per_class, missing)


def evaluate(predictions, truth):
    """Score predictions against ground truth.

    Accepts either two aligned 1-D arrays of class ids, or two
    :class:`LabelMap` objects, in which case only pixels with a nonzero
    truth label are scored.
    """
    if isinstance(truth, LabelMap):
        pred_map = predictions.labels if isinstance(predictions, LabelMap) else np.asarray(predictions)
        if pred_map.shape != truth.shape:
            raise DomainError(f"prediction shape {pred_map.shape} != truth shape {truth.shape}")
        mask = truth.labels > 0
        truth = truth.labels[mask]
        predictions = pred_map[mask]
    truth = np.asarray(truth, dtype=np.int64).ravel()
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    if truth.shape != predictions.shape:
        raise DomainError("predictions and truth must cover the same pixels")
    if truth.size == 0:
        raise DomainError("empty test set")
    if truth.min() < 1 or predictions.min() < 1:
        raise DomainError("class ids must be >= 1")
    n_classes = int(max(truth.max(), predictions.max()))
    report = report_from_confusion(confusion_matrix(truth, predictions, n_classes))
    if report.missing:
        log.warning("classes without test pixels excluded from AA: %s", report.missing)
    return report


def split_train_test(labels, fraction, seed=0):
    """Per-class random split into train and test label maps.

    Each class contributes ``ceil(fraction * count)`` (at least one) training
    pixels drawn without replacement; the rest are test pixels.
    """
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    flat = labels.flat()
    train = np.zeros_like(flat)
    test = flat.copy()
    top = int(flat.max())
    for c in range(1, top + 1):
        idx = np.flatnonzero(flat == c)
        if idx.size == 0:
            log.warning("class %d has no labeled pixels; skipped", c)
            continue
        n_train = max(1, math.ceil(fraction * idx.size - 1e-9))
        chosen = rng.choice(idx, size=min(n_train, idx.size), replace=False)
        train[chosen] = c
        test[chosen] = 0
    return LabelMap(train.reshape(labels.shape)), LabelMap(test.reshape(labels.shape))
