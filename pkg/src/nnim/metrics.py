"""Evaluation of score matrices against binary ground truth."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class DegenerateMetricError(ValueError):
    """The selected cells hold a single class, so AUC is undefined."""


@dataclass
class EvalReport:
    auc_all: float | None = None
    auc_top50: float | None = None
    rmse_macro: float | None = None
    f1_micro: float | None = None
    coverage: float | None = None
    core_fraction: float | None = None
    bipartite_edge_fraction: float | None = None
    runtime_s: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(truth, scores):
    truth = np.asarray(truth)
    scores = np.asarray(scores, dtype=np.float64)
    if truth.shape != scores.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape} vs scores {scores.shape}")
    return truth, scores


def auc_micro(truth, scores, label_subset=None) -> float:
    """Micro-averaged AUC-ROC in percent, ties counted as one half.

    Uses the Mann-Whitney rank statistic over all selected (user, label) cells.
    """
    truth, scores = _pair(truth, scores)
    if label_subset is not None:
        cols = np.asarray(sorted(label_subset), dtype=np.int64)
        truth, scores = truth[..., cols], scores[..., cols]
    y = truth.ravel().astype(bool)
    s = scores.ravel()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMetricError("AUC needs at least one positive and one negative cell")
    ranks = rankdata(s, method="average")
    u_stat = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(100.0 * u_stat / (n_pos * n_neg))


def rmse_macro(truth, scores) -> float:
    """RMSE between the per-label means (over users) of truth and scores."""
    truth, scores = _pair(truth, scores)
    diff = truth.astype(np.float64).mean(axis=0) - scores.mean(axis=0)
    return float(np.linalg.norm(diff) / math.sqrt(diff.size))


def f1_micro(truth, binary_pred) -> float:
    truth, pred = _pair(truth, binary_pred)
    t = truth.astype(bool)
    p = pred.astype(bool)
    tp = int((t & p).sum())
    fp = int((~t & p).sum())
    fn = int((t & ~p).sum())
    if tp + fp + fn == 0:
        warnings.warn("no positive cells in truth or prediction; F1 set to 0", stacklevel=2)
        return 0.0
    return 100.0 * 2 * tp / (2 * tp + fp + fn)


def top50_label_set(truth) -> list[int]:
    """The ``ceil(d/2)`` most prevalent labels; ties go to the lower index."""
    counts = np.asarray(truth).sum(axis=0)
    order = np.lexsort((np.arange(len(counts)), -counts))
    return sorted(order[: math.ceil(len(counts) / 2)].tolist())


def evaluate(truth, scores, binary: bool = False) -> EvalReport:
    truth, scores = _pair(truth, scores)
    report = EvalReport(rmse_macro=rmse_macro(truth, scores))
    if binary:
        report.f1_micro = f1_micro(truth, scores)
    for name, subset in (("auc_all", None), ("auc_top50", top50_label_set(truth))):
        try:
            setattr(report, name, auc_micro(truth, scores, subset))
        except DegenerateMetricError as exc:
            warnings.warn(f"{name} skipped: {exc}", stacklevel=2)
    return report
