"""Post-processing logit correction.

Per class k, the logits of true-class samples and other-class samples each
form a unimodal distribution; both are fit as Gaussians on a calibration
subset, once for the clean (device-noise-free software) reference and once
for the deployed hardware. A hardware logit is then mapped back by
blending the two per-mode affine estimates

    (l - mu~_{k,c}) / sd~_{k,c} * sd_{k,c} + mu_{k,c}

with Bayes-posterior weights Pr(y = k | l) computed from the hardware-mode
densities under balanced priors (1/n, (n-1)/n). The correction is applied
independently to every ensemble member's logit vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .inference import PredictionRecord, record_from_logits

SIGMA_FLOOR = 1e-6


class CalibrationError(ValueError):
    pass


@dataclass
class ModeStats:
    """Per-class Gaussian parameters for the two logit modes."""

    mu1: np.ndarray  # true-class mode, per class
    sd1: np.ndarray
    mu0: np.ndarray  # other-class mode, per class
    sd0: np.ndarray


@dataclass
class LogitModeFit:
    clean: ModeStats
    hardware: ModeStats
    n_classes: int
    class_frequency_priors: bool = False
    counts: np.ndarray | None = None  # per-class true-mode sample counts

    def priors(self, k: int) -> tuple[float, float]:
        if self.class_frequency_priors and self.counts is not None:
            total = float(self.counts.sum())
            p1 = float(self.counts[k]) / total
            return p1, 1.0 - p1
        n = self.n_classes
        return 1.0 / n, (n - 1.0) / n

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "class_frequency_priors": self.class_frequency_priors,
            "counts": None if self.counts is None else self.counts.tolist(),
            "clean": _stats_to_dict(self.clean),
            "hardware": _stats_to_dict(self.hardware),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogitModeFit":
        return cls(
            clean=_stats_from_dict(d["clean"]),
            hardware=_stats_from_dict(d["hardware"]),
            n_classes=int(d["n_classes"]),
            class_frequency_priors=bool(d.get("class_frequency_priors", False)),
            counts=None if d.get("counts") is None else np.asarray(d["counts"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "LogitModeFit":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _stats_to_dict(s: ModeStats) -> dict:
    return {
        "mu1": s.mu1.tolist(), "sd1": s.sd1.tolist(),
        "mu0": s.mu0.tolist(), "sd0": s.sd0.tolist(),
    }


def _stats_from_dict(d: dict) -> ModeStats:
    return ModeStats(
        mu1=np.asarray(d["mu1"], dtype=float), sd1=np.asarray(d["sd1"], dtype=float),
        mu0=np.asarray(d["mu0"], dtype=float), sd0=np.asarray(d["sd0"], dtype=float),
    )


def fit_modes(logits, labels) -> ModeStats:
    """Fit per-class Gaussians to the two logit modes.

    ``logits`` is (samples, classes); for class k the true mode pools
    ``l_k`` where ``y == k`` and the other mode pools ``l_k`` where
    ``y != k``. Population std estimator, floored at ``SIGMA_FLOOR``.
    Every class needs at least two samples in each mode.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n_classes = logits.shape[1]
    mu1 = np.empty(n_classes)
    sd1 = np.empty(n_classes)
    mu0 = np.empty(n_classes)
    sd0 = np.empty(n_classes)
    for k in range(n_classes):
        own = logits[labels == k, k]
        other = logits[labels != k, k]
        if own.size < 2:
            raise CalibrationError(f"class {k}: need >= 2 true-mode samples, got {own.size}")
        if other.size < 2:
            raise CalibrationError(f"class {k}: need >= 2 other-mode samples, got {other.size}")
        mu1[k], sd1[k] = own.mean(), max(own.std(), SIGMA_FLOOR)
        mu0[k], sd0[k] = other.mean(), max(other.std(), SIGMA_FLOOR)
    return ModeStats(mu1=mu1, sd1=sd1, mu0=mu0, sd0=sd0)


def _log_normal_pdf(x, mu, sd):
    return -np.log(sd) - 0.5 * math.log(2.0 * math.pi) - 0.5 * ((x - mu) / sd) ** 2


def posterior_label_prob(fit: LogitModeFit, k: int, l_tilde) -> np.ndarray | float:
    """Pr(y = k | hardware logit), densities evaluated in log space."""
    hw = fit.hardware
    p1, p0 = fit.priors(k)
    l = np.asarray(l_tilde, dtype=float)
    log1 = _log_normal_pdf(l, hw.mu1[k], hw.sd1[k]) + math.log(p1)
    log0 = _log_normal_pdf(l, hw.mu0[k], hw.sd0[k]) + math.log(p0)
    out = 1.0 / (1.0 + np.exp(log0 - log1))
    return float(out) if np.ndim(l_tilde) == 0 else out


def correct_logit(fit: LogitModeFit, k: int, l_tilde) -> np.ndarray | float:
    """Posterior-weighted affine correction of one class's hardware logit."""
    cl, hw = fit.clean, fit.hardware
    l = np.asarray(l_tilde, dtype=float)
    w1 = posterior_label_prob(fit, k, l)
    est1 = (l - hw.mu1[k]) / hw.sd1[k] * cl.sd1[k] + cl.mu1[k]
    est0 = (l - hw.mu0[k]) / hw.sd0[k] * cl.sd0[k] + cl.mu0[k]
    out = w1 * est1 + (1.0 - w1) * est0
    return float(out) if np.ndim(l_tilde) == 0 else out


def correct_logit_matrix(fit: LogitModeFit, logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    out = np.empty_like(logits)
    for k in range(fit.n_classes):
        out[..., k] = correct_logit(fit, k, logits[..., k])
    return out


def pooled_member_logits(records: list[PredictionRecord]):
    """Stack every member's logit vector; labels repeat per member."""
    logit_rows = []
    label_rows = []
    for rec in records:
        if rec.label is None:
            raise CalibrationError("calibration records must carry labels")
        for row in rec.member_logits:
            logit_rows.append(row)
            label_rows.append(rec.label)
    return np.asarray(logit_rows), np.asarray(label_rows)


def calibrate_network(
    clean_records: list[PredictionRecord],
    hardware_records: list[PredictionRecord],
    calib_size: int | None = None,
    class_frequency_priors: bool = False,
) -> LogitModeFit:
    """Fit the clean and hardware mode Gaussians on the same calibration subset."""
    if calib_size is None:
        calib_size = len(clean_records)
    if calib_size < 1:
        raise CalibrationError("calib_size must be >= 1")
    if calib_size > len(clean_records) or calib_size > len(hardware_records):
        raise CalibrationError("calib_size exceeds available calibration samples")
    clean_records = clean_records[:calib_size]
    hardware_records = hardware_records[:calib_size]

    clean_logits, clean_labels = pooled_member_logits(clean_records)
    hw_logits, hw_labels = pooled_member_logits(hardware_records)
    n_classes = clean_logits.shape[1]
    counts = np.bincount(clean_labels, minlength=n_classes).astype(float)
    return LogitModeFit(
        clean=fit_modes(clean_logits, clean_labels),
        hardware=fit_modes(hw_logits, hw_labels),
        n_classes=n_classes,
        class_frequency_priors=class_frequency_priors,
        counts=counts,
    )


def apply_correction(records: list[PredictionRecord], fit: LogitModeFit):
    """Correct every member's logits and rebuild the ensemble records."""
    out = []
    for rec in records:
        corrected = correct_logit_matrix(fit, rec.member_logits)
        out.append(record_from_logits(rec.input_id, rec.label, corrected))
    return out
