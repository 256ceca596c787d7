"""Conductance-drift time sweeps.

A deployment is programmed once; the sweep re-reads it at a grid of
wall-clock times under three scenarios: raw (no mitigation), compensated
(noise-plane pulse rescaled by the single coefficient alpha_t), and
compensated plus logit correction (refit at each time point on the
calibration subset by default). The same master seed is reused at every
time point so scenario differences isolate drift effects rather than
sampling noise.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .calibration import apply_correction, calibrate_network
from .crossbar import compensation_alpha
from .device import T0_SECONDS
from .inference import (
    STAGE_CALIB,
    STAGE_CLEAN,
    STAGE_INFER,
    STAGE_OOD,
    run_ensemble,
)
from .metrics import MetricReport, summarize
from .network import Deployment

DEFAULT_TIME_GRID = (20.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7)
DEFAULT_NU_C = 0.06
SCENARIOS = ("raw", "compensated", "compensated+corrected")


def alpha(t: float, nu_c: float = DEFAULT_NU_C) -> float:
    """Drift-correction coefficient (t / T0) ** nu_c."""
    return compensation_alpha(t, nu_c)


@dataclass
class SweepRow:
    time: float
    scenario: str
    np_weight: float
    report: MetricReport

    def to_dict(self) -> dict:
        d = {"time": self.time, "scenario": self.scenario, "np_weight": self.np_weight}
        d.update(self.report.to_dict())
        return d


def sweep(
    deployment: Deployment,
    X_test,
    y_test,
    times=DEFAULT_TIME_GRID,
    scenarios=SCENARIOS,
    seed: int = 0,
    n_mc: int = 10,
    X_ood=None,
    X_calib=None,
    y_calib=None,
    nu_c: float = DEFAULT_NU_C,
    refit_each_time: bool = True,
    workers: int = 1,
    n_bins: int = 10,
) -> list[SweepRow]:
    times = sorted(float(t) for t in times)
    if times[0] < T0_SECONDS:
        raise ValueError(f"sweep times must be >= {T0_SECONDS} s")
    for s in scenarios:
        if s not in SCENARIOS:
            raise ValueError(f"unknown scenario {s!r}")

    needs_correction = "compensated+corrected" in scenarios
    clean_calib = None
    t0_fit = None
    if needs_correction:
        if X_calib is None or y_calib is None:
            raise ValueError("corrected scenario requires calibration data")
        clean_calib = run_ensemble(
            deployment, X_calib, n_mc, t=T0_SECONDS, seed=seed,
            labels=y_calib, backend="software", stage=STAGE_CLEAN, workers=workers,
        )

    rows: list[SweepRow] = []
    for t in times:
        per_scenario_records: dict[str, tuple] = {}

        if "raw" in scenarios:
            deployment.clear_compensation()
            per_scenario_records["raw"] = self_records = _evaluate(
                deployment, X_test, y_test, X_ood, t, seed, n_mc, workers
            )
            rows.append(SweepRow(t, "raw", deployment.np_weight, _summarize(*self_records, n_bins)))

        if "compensated" in scenarios or needs_correction:
            deployment.set_compensation(t, nu_c=nu_c, quantize=True)
            comp_records = _evaluate(deployment, X_test, y_test, X_ood, t, seed, n_mc, workers)
            np_weight = deployment.np_weight
            if "compensated" in scenarios:
                rows.append(SweepRow(t, "compensated", np_weight, _summarize(*comp_records, n_bins)))
            if needs_correction:
                hw_calib = run_ensemble(
                    deployment, X_calib, n_mc, t=t, seed=seed, labels=y_calib,
                    backend="hardware", stage=STAGE_CALIB, workers=workers,
                )
                if refit_each_time or t0_fit is None:
                    fit = calibrate_network(clean_calib, hw_calib)
                    if t0_fit is None:
                        t0_fit = fit
                else:
                    fit = t0_fit
                test_rec, ood_rec = comp_records
                corrected = apply_correction(test_rec, fit)
                corrected_ood = None if ood_rec is None else apply_correction(ood_rec, fit)
                rows.append(
                    SweepRow(
                        t, "compensated+corrected", np_weight,
                        _summarize(corrected, corrected_ood, n_bins),
                    )
                )
            deployment.clear_compensation()
    return rows


def _evaluate(deployment, X_test, y_test, X_ood, t, seed, n_mc, workers):
    test = run_ensemble(
        deployment, X_test, n_mc, t=t, seed=seed, labels=y_test,
        backend="hardware", stage=STAGE_INFER, workers=workers,
    )
    ood = None
    if X_ood is not None:
        ood = run_ensemble(
            deployment, X_ood, n_mc, t=t, seed=seed, labels=None,
            backend="hardware", stage=STAGE_OOD, workers=workers,
        )
    return test, ood


def _summarize(test_records, ood_records, n_bins) -> MetricReport:
    return summarize(test_records, ood_records, n_bins=n_bins)


def write_rows_jsonl(rows: list[SweepRow], path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_dict()))
            fh.write("\n")


def write_rows_csv(rows: list[SweepRow], path) -> None:
    if not rows:
        return
    keys = [k for k in rows[0].to_dict().keys() if k != "ece_by_bins"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_dict())
