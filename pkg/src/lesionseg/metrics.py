"""Evaluation metrics: dice similarity, recall, precision.

Per-case scores are aggregated as mean plus-or-minus population standard
deviation; the global dice score pools the confusion counts over all
voxels of all cases first, which is a different quantity from the mean of
per-case scores.

Degenerate conventions: an empty prediction against an empty target scores
1 on all three metrics; any other empty/non-empty combination scores 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Values below the threshold map to 0, everything else (ties included) to 1."""
    return (np.asarray(prob) >= threshold).astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    for name, a in (("pred", pred), ("gt", gt)):
        if not np.all((a == 0) | (a == 1)):
            raise ValueError(f"{name} must be binary")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, fn, tn)


def dsc(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return 2 * c.tp / denom


def recall(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        return 1.0 if c.fp == 0 else 0.0
    return c.tp / (c.tp + c.fn)


def precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        return 1.0 if c.fn == 0 else 0.0
    return c.tp / (c.tp + c.fp)


@dataclass
class CaseMetrics:
    dsc: float
    recall: float
    precision: float


@dataclass
class MetricsReport:
    per_case: dict[str, CaseMetrics]
    dsc_mean: float
    dsc_std: float
    recall_mean: float
    recall_std: float
    precision_mean: float
    precision_std: float
    dsc_global: float
    boxplot: tuple[float, float, float, float, float]
    pooled: ConfusionCounts = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "per_case": {cid: vars(m) for cid, m in self.per_case.items()},
            "summary": {
                "dsc_mean": self.dsc_mean, "dsc_std": self.dsc_std,
                "recall_mean": self.recall_mean, "recall_std": self.recall_std,
                "precision_mean": self.precision_mean,
                "precision_std": self.precision_std,
                "dsc_global": self.dsc_global,
                "dsc_boxplot": list(self.boxplot),
            },
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def table_row(self, method: str, total_parameters: int | None = None) -> str:
        """One delimited row: DSC, DSC(global), Recall, Precision, parameters."""
        cells = [
            method,
            f"{self.dsc_mean:.4f}±{self.dsc_std:.4f}",
            f"{self.dsc_global:.4f}",
            f"{self.recall_mean:.4f}±{self.recall_std:.4f}",
            f"{self.precision_mean:.4f}±{self.precision_std:.4f}",
            "" if total_parameters is None else f"{total_parameters:,}",
        ]
        return "\t".join(cells)

    @staticmethod
    def table_header() -> str:
        return "\t".join(["Method", "DSC", "DSC(global)", "Recall",
                          "Precision", "Total parameters"])


def aggregate(case_counts: dict[str, ConfusionCounts]) -> MetricsReport:
    """Summarize per-case confusion counts into a full report.

    Raises if given no cases, or if any case violates the dice/precision/
    recall harmonic-mean identity (an internal consistency guard).
    """
    if not case_counts:
        raise ValueError("aggregate needs at least one case")
    per_case: dict[str, CaseMetrics] = {}
    pooled = ConfusionCounts(0, 0, 0, 0)
    for cid, c in case_counts.items():
        m = CaseMetrics(dsc=dsc(c), recall=recall(c), precision=precision(c))
        if m.precision + m.recall > 0:
            harmonic = 2 * m.precision * m.recall / (m.precision + m.recall)
            if abs(m.dsc - harmonic) > 1e-12:
                raise AssertionError(
                    f"case {cid}: DSC {m.dsc} != harmonic mean {harmonic}")
        per_case[cid] = m
        pooled = pooled + c
    d = np.array([m.dsc for m in per_case.values()])
    r = np.array([m.recall for m in per_case.values()])
    p = np.array([m.precision for m in per_case.values()])
    five = tuple(float(v) for v in np.percentile(d, [0, 25, 50, 75, 100]))
    return MetricsReport(
        per_case=per_case,
        dsc_mean=float(d.mean()), dsc_std=float(d.std()),
        recall_mean=float(r.mean()), recall_std=float(r.std()),
        precision_mean=float(p.mean()), precision_std=float(p.std()),
        dsc_global=dsc(pooled),
        boxplot=five,
        pooled=pooled,
    )
