"""Train/test splitting, confusion counting and the five detection metrics.

Metrics are computed in exact rational arithmetic (:class:`fractions.Fraction`);
a metric whose denominator is zero is reported as 0 with its undefined flag set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from . import SCHEMA_VERSION
from .errors import EmptyDataset, EmptyMatrix, LengthMismatch

METRIC_NAMES = ("accuracy", "precision", "f1", "fpr", "fnr")
METRIC_TITLES = {
    "accuracy": "Accuracy",
    "precision": "Precision",
    "f1": "F1-score",
    "fpr": "False-positive rate",
    "fnr": "False-negative rate",
}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for k in ("tp", "tn", "fp", "fn"):
            v = getattr(self, k)
            if int(v) != v or v < 0:
                raise ValueError(f"{k} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: Fraction
    precision: Fraction
    f1: Fraction
    fpr: Fraction
    fnr: Fraction
    undefined: dict  # metric name -> bool

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k)) for k in METRIC_NAMES}

    def as_strings(self) -> dict:
        return {k: str(getattr(self, k)) for k in METRIC_NAMES}


def confusion(predictions: Sequence[int], truths: Sequence[int]) -> ConfusionMatrix:
    """Count outcomes with label 1 as the positive class."""
    if len(predictions) != len(truths):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(truths)} truths")
    tp = tn = fp = fn = 0
    for p, t in zip(predictions, truths):
        p, t = int(p), int(t)
        if p not in (0, 1) or t not in (0, 1):
            raise ValueError("labels must be 0 or 1")
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, tn, fp, fn)


def _ratio(num: int, den: int) -> tuple:
    if den == 0:
        return Fraction(0), True
    return Fraction(num, den), False


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no observations")
    acc, _ = _ratio(cm.tp + cm.tn, cm.total)
    prec, prec_u = _ratio(cm.tp, cm.tp + cm.fp)
    rec, rec_u = _ratio(cm.tp, cm.tp + cm.fn)
    fpr, fpr_u = _ratio(cm.fp, cm.fp + cm.tn)
    fnr, fnr_u = _ratio(cm.fn, cm.tp + cm.fn)
    if prec_u or rec_u or prec + rec == 0:
        f1, f1_u = Fraction(0), True
    else:
        f1, f1_u = 2 * prec * rec / (prec + rec), False
    return MetricsReport(
        accuracy=acc,
        precision=prec,
        f1=f1,
        fpr=fpr,
        fnr=fnr,
        undefined={"accuracy": False, "precision": prec_u, "f1": f1_u, "fpr": fpr_u, "fnr": fnr_u},
    )


# ------------------------------------------------------------------ splitting


def _label_of(item) -> int:
    if isinstance(item, dict):
        return int(item["label"])
    if hasattr(item, "label"):
        return int(item.label)
    return int(item[1])


def split_indices(labels: Sequence[int], ratio: float = 0.8, seed: int = 0, stratified: bool = True) -> tuple:
    """Seeded train/test index split with ``len(train) == floor(ratio * N)``.

    Stratified mode floors each label's quota and hands the leftover slots to
    the strata with the largest fractional remainders (ties: smaller label).
    """
    n = len(labels)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    r = Fraction(str(ratio))
    target = int(r * n)
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = [int(x) for x in labels]
    if not stratified:
        perm = rng.permutation(n)
        return sorted(int(i) for i in perm[:target]), sorted(int(i) for i in perm[target:])
    strata = {}
    for i, lab in enumerate(labels):
        strata.setdefault(lab, []).append(i)
    quota = {}
    for lab in sorted(strata):
        exact = r * len(strata[lab])
        quota[lab] = (int(exact), exact - int(exact))
    spare = target - sum(q for q, _ in quota.values())
    for lab in sorted(quota, key=lambda k: (-quota[k][1], k))[:spare]:
        quota[lab] = (quota[lab][0] + 1, 0)
    train, test = [], []
    for lab in sorted(strata):
        members = strata[lab]
        perm = rng.permutation(len(members))
        q = quota[lab][0]
        train += [members[j] for j in perm[:q]]
        test += [members[j] for j in perm[q:]]
    return sorted(train), sorted(test)


def split(dataset: Sequence, ratio: float = 0.8, seed: int = 0, stratified: bool = True) -> tuple:
    """Split items (dicts/objects with a label, or (x, label) pairs) into (train, test)."""
    labels = [_label_of(x) for x in dataset]
    tr, te = split_indices(labels, ratio, seed, stratified)
    return [dataset[i] for i in tr], [dataset[i] for i in te]


# -------------------------------------------------------------------- reports


def report_dict(cm: ConfusionMatrix, config_digest: str = "", extra: Optional[dict] = None) -> dict:
    m = metrics(cm)
    out = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config_digest,
        "confusion": {"tp": cm.tp, "tn": cm.tn, "fp": cm.fp, "fn": cm.fn},
        "metrics": m.as_floats(),
        "exact": m.as_strings(),
        "undefined": dict(m.undefined),
    }
    if extra:
        out.update(extra)
    return out


def report_json(cm: ConfusionMatrix, config_digest: str = "", extra: Optional[dict] = None) -> str:
    return json.dumps(report_dict(cm, config_digest, extra), indent=2, sort_keys=True) + "\n"


def report_table(cm: ConfusionMatrix) -> str:
    m = metrics(cm)
    width = max(len(t) for t in METRIC_TITLES.values())
    rows = [f"{'Metric'.ljust(width)}  Value", f"{'-' * width}  --------"]
    for k in METRIC_NAMES:
        val = f"{float(getattr(m, k)):.4f}"
        if m.undefined[k]:
            val += " (undefined)"
        rows.append(f"{METRIC_TITLES[k].ljust(width)}  {val}")
    rows.append(f"TP={cm.tp} TN={cm.tn} FP={cm.fp} FN={cm.fn}")
    return "\n".join(rows) + "\n"


def evaluate(scores: Iterable[float], truths: Sequence[int], threshold: float = 0.5) -> MetricsReport:
    preds = [1 if s >= threshold else 0 for s in scores]
    return metrics(confusion(preds, truths))
