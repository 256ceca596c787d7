"""Accuracy, calibration, uncertainty decomposition and discrimination metrics.

Expected calibration error bins the predicted-class confidence into
half-open intervals ((m-1)/N_b, m/N_b] and averages |accuracy - confidence|
weighted by bin occupancy. Uncertainties use natural-log entropies with
0 * log 0 = 0: total from the ensemble marginal, aleatoric as the mean
member entropy, epistemic as their difference. ROC AUC is the
Mann-Whitney rank statistic with ties counted 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .inference import PredictionRecord


def _entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def uncertainties(record: PredictionRecord) -> tuple[float, float, float]:
    """(U_tot, U_a, U_e) for one prediction record."""
    probs = record.member_probs
    u_tot = _entropy(record.marginal)
    u_a = float(np.mean([_entropy(p) for p in probs]))
    u_e = u_tot - u_a
    assert u_e >= -1e-9, "epistemic uncertainty must be nonnegative (Jensen)"
    return u_tot, u_a, u_e


def ece(records: list[PredictionRecord], n_bins: int = 10) -> float:
    """Expected calibration error over the predicted-class confidences."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if not records:
        raise ValueError("empty record set")
    conf = np.array([rec.marginal[rec.pred] for rec in records])
    correct = np.array([rec.pred == rec.label for rec in records], dtype=float)
    # Half-open bins ((m-1)/N_b, m/N_b]: ceil maps a confidence to its bin.
    bins = np.ceil(conf * n_bins).astype(int) - 1
    bins = np.clip(bins, 0, n_bins - 1)
    total = len(records)
    out = 0.0
    for m in range(n_bins):
        mask = bins == m
        count = int(mask.sum())
        if count == 0:
            continue
        acc = correct[mask].mean()
        avg_conf = conf[mask].mean()
        out += (count / total) * abs(acc - avg_conf)
    return float(out)


def accuracy(records: list[PredictionRecord]) -> float:
    labeled = [r for r in records if r.label is not None]
    if not labeled:
        raise ValueError("no labeled records")
    return float(np.mean([r.pred == r.label for r in labeled]))


def roc_auc(scores, positives) -> float:
    """Area under the ROC curve via the rank statistic; ties count 0.5."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = int((~positives).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative")
    ranks = rankdata(scores)
    r_pos = ranks[positives].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auc_bruteforce(scores, positives) -> float:
    """Independent O(n^2) pair-counting oracle for the rank implementation."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    pos = scores[positives]
    neg = scores[~positives]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative")
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


@dataclass
class MetricReport:
    accuracy: float
    ece: float
    ece_by_bins: dict = field(default_factory=dict)
    auc_aleatoric: float | None = None
    auc_epistemic: float | None = None
    mean_u_tot: float = 0.0
    mean_u_a: float = 0.0
    mean_u_e: float = 0.0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "ece": self.ece,
            "ece_by_bins": self.ece_by_bins,
            "auc_aleatoric": self.auc_aleatoric,
            "auc_epistemic": self.auc_epistemic,
            "mean_u_tot": self.mean_u_tot,
            "mean_u_a": self.mean_u_a,
            "mean_u_e": self.mean_u_e,
        }


def summarize(
    records: list[PredictionRecord],
    ood_records: list[PredictionRecord] | None = None,
    n_bins: int = 10,
    sensitivity_bins: tuple[int, ...] = (10, 15, 20),
) -> MetricReport:
    """Aggregate metrics for a labeled evaluation set (plus optional OOD set).

    Aleatoric AUC scores correct-vs-incorrect discrimination by U_a on the
    in-distribution records; epistemic AUC scores IND-vs-OOD discrimination
    by U_e with the OOD records as positives.
    """
    u = np.array([uncertainties(r) for r in records])
    report = MetricReport(
        accuracy=accuracy(records),
        ece=ece(records, n_bins),
        ece_by_bins={str(b): ece(records, b) for b in sensitivity_bins},
        mean_u_tot=float(u[:, 0].mean()),
        mean_u_a=float(u[:, 1].mean()),
        mean_u_e=float(u[:, 2].mean()),
    )
    incorrect = np.array([r.pred != r.label for r in records], dtype=bool)
    if incorrect.any() and (~incorrect).any():
        report.auc_aleatoric = roc_auc(u[:, 1], incorrect)
    if ood_records:
        u_ood = np.array([uncertainties(r) for r in ood_records])
        scores = np.concatenate([u[:, 2], u_ood[:, 2]])
        positives = np.concatenate(
            [np.zeros(len(records), dtype=bool), np.ones(len(ood_records), dtype=bool)]
        )
        report.auc_epistemic = roc_auc(scores, positives)
    return report
