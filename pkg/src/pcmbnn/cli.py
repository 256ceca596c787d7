"""Command-line front door.

Subcommands: train, program, infer, calibrate, drift-sweep, hw-model,
sample-check. Every command with a fixed ``--seed`` is bit-reproducible,
including across ``--workers`` settings; output files carry the resolved
configuration and seed. Exit codes: 0 ok, 2 config error, 3 infeasible
noise-plane sizing, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import LogitModeFit, apply_correction, calibrate_network
from .crossbar import CoreConfig
from .device import (
    DEFAULT_PROGRAM_MAX_ITERS,
    DEFAULT_PROGRAM_TOLERANCE,
    T0_SECONDS,
    NoiseModel,
)
from .drift import DEFAULT_NU_C, DEFAULT_TIME_GRID, SCENARIOS, sweep, write_rows_csv, write_rows_jsonl
from .hwmodel import ComponentBudget, compare, evaluate, load_builtin_budget
from .inference import (
    STAGE_CALIB,
    STAGE_CLEAN,
    run_ensemble,
    write_records_jsonl,
)
from .metrics import summarize
from .network import NetworkModel, deploy, load_deployment, save_deployment
from .reparam import NoisePlaneInfeasibleError, normal_cdf
from .trainer import (
    TrainConfig,
    TrainingDivergedError,
    load_csv_dataset,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


def _common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-model", type=Path, default=None,
                   help="JSON noise-model config (defaults built in)")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON run config overriding core defaults")
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--n-mc", type=int, default=10)
    p.add_argument("--nr", type=int, choices=(1, 2), default=1)
    p.add_argument("--no-noise", action="store_true",
                   help="disable programming and read noise")
    p.add_argument("--frequentist", action="store_true")
    p.add_argument("--time", type=float, default=T0_SECONDS,
                   help="read time in seconds (>= 20)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcmbnn")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a binary-weight MLP and emit a manifest")
    _common_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--arch", type=str, required=True, help="comma-separated layer sizes")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--kl-weight", type=float, default=1.0)
    p.add_argument("--hardware-aware", action="store_true")

    p = sub.add_parser("program", help="map a manifest onto crossbar cores")
    _common_args(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--calib", type=Path, required=True,
                   help="calibration CSV for input-scale calibration")
    p.add_argument("--program-tolerance", type=float, default=DEFAULT_PROGRAM_TOLERANCE)
    p.add_argument("--program-max-iters", type=int, default=DEFAULT_PROGRAM_MAX_ITERS)

    p = sub.add_parser("infer", help="run the ensemble and report metrics")
    _common_args(p)
    p.add_argument("--deployment", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ood", type=Path, default=None)
    p.add_argument("--backend", choices=("hardware", "software"), default="hardware")
    p.add_argument("--correction", type=Path, default=None,
                   help="logit-correction fit JSON to apply")
    p.add_argument("--compensate", action="store_true",
                   help="apply drift compensation at --time")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("calibrate", help="fit the logit correction")
    _common_args(p)
    p.add_argument("--deployment", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--calib-size", type=int, default=None)
    p.add_argument("--compensate", action="store_true")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("drift-sweep", help="evaluate a deployment over a time grid")
    _common_args(p)
    p.add_argument("--deployment", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ood", type=Path, default=None)
    p.add_argument("--calib", type=Path, default=None)
    p.add_argument("--times", type=str, default=",".join(str(t) for t in DEFAULT_TIME_GRID))
    p.add_argument("--scenarios", type=str, default="raw,compensated,compensated+corrected")
    p.add_argument("--nu-c", type=float, default=DEFAULT_NU_C)
    p.add_argument("--reuse-fit", action="store_true",
                   help="reuse the first time point's logit fit")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("hw-model", help="evaluate a hardware budget")
    _common_args(p)
    p.add_argument("--budget", type=str, required=True,
                   help="budget JSON path or builtin name (pcm, sram)")
    p.add_argument("--mode", type=int, choices=(8, 4, 2), required=True)
    p.add_argument("--baseline", type=str, default=None,
                   help="second budget for efficiency ratios")

    p = sub.add_parser("sample-check", help="empirical P(w=+1) vs the normal CDF")
    _common_args(p)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--n-samples", type=int, default=100000)
    p.add_argument("--read-noise", action="store_true",
                   help="include read noise in the check")
    p.add_argument("--exact-compensation", action="store_true",
                   help="apply the unquantized coefficient at --time")

    return parser


def _load_noise_model(args) -> NoiseModel:
    model = NoiseModel.from_json_file(args.noise_model) if args.noise_model else NoiseModel()
    if args.no_noise:
        model = model.without_noise()
    return model


def _load_run_config(args) -> dict:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    return cfg


def _core_config(args, run_cfg: dict) -> CoreConfig:
    n_r = int(run_cfg.get("n_r", args.nr))
    return CoreConfig(
        wp_rows=int(run_cfg.get("wp_rows", 128)),
        np_rows=int(run_cfg.get("np_rows", 16)),
        cols=int(run_cfg.get("cols", 128)),
        kappa=float(run_cfg.get("kappa", 8.0)),
        n_r=n_r,
        t_ratio=int(run_cfg.get("t_ratio", 0)),
        frequentist=bool(args.frequentist or run_cfg.get("frequentist", False)),
    )


def _provenance(args, extra: dict | None = None) -> dict:
    doc = {
        "command": args.command,
        "seed": args.seed,
        "version": __version__,
        "args": {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(vars(args).items())
            if k != "command" and v is not None
        },
    }
    if extra:
        doc.update(extra)
    return doc


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _cmd_train(args) -> int:
    X, y = load_csv_dataset(args.data)
    if y is None:
        raise ConfigError("training data must carry a label column")
    arch = tuple(int(v) for v in args.arch.split(","))
    cfg = TrainConfig(
        arch=arch, epochs=args.epochs, batch_size=args.batch, lr=args.lr,
        tau=args.tau, kl_weight=args.kl_weight, seed=args.seed,
        hardware_aware=args.hardware_aware,
        noise_model=_load_noise_model(args) if args.hardware_aware else None,
    )
    network, history = train(X, y, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    network.save(args.out / "manifest.json")
    _write_json(args.out / "train_log.json", _provenance(args, {"history": history[-5:]}))
    print(json.dumps({"manifest": str(args.out / "manifest.json"), "epochs": args.epochs}))
    return EXIT_OK


def _cmd_program(args) -> int:
    run_cfg = _load_run_config(args)
    model = _load_noise_model(args)
    config = _core_config(args, run_cfg)
    network = NetworkModel.load(args.manifest)
    X_calib, _ = load_csv_dataset(args.calib)
    from .inference import compute_scales

    scales = compute_scales(network, X_calib, seed=args.seed)
    dep = deploy(
        network, config, model, seed=args.seed, scales=scales,
        tolerance=float(run_cfg.get("program_tolerance", args.program_tolerance)),
        max_iters=int(run_cfg.get("program_max_iters", args.program_max_iters)),
    )
    dep.meta = _provenance(args)
    args.out.mkdir(parents=True, exist_ok=True)
    save_deployment(dep, args.out / "deployment.json")
    print(json.dumps({"deployment": str(args.out / "deployment.json"), "scales": scales}))
    return EXIT_OK


def _cmd_infer(args) -> int:
    dep = load_deployment(args.deployment)
    if args.no_noise:
        dep.model = dep.model.without_noise()
        for layer in dep.layers:
            for tile in layer.tiles:
                tile.core.model = dep.model
    X, y = load_csv_dataset(args.data)
    if args.compensate:
        dep.set_compensation(args.time)
    records = run_ensemble(
        dep, X, args.n_mc, t=args.time, seed=args.seed, labels=y,
        backend=args.backend, workers=args.workers,
    )
    if args.correction:
        fit = LogitModeFit.load(args.correction)
        records = apply_correction(records, fit)
    ood_records = None
    if args.ood:
        X_ood, _ = load_csv_dataset(args.ood)
        from .inference import STAGE_OOD

        ood_records = run_ensemble(
            dep, X_ood, args.n_mc, t=args.time, seed=args.seed, labels=None,
            backend=args.backend, stage=STAGE_OOD, workers=args.workers,
        )
        if args.correction:
            ood_records = apply_correction(ood_records, fit)
    args.out.mkdir(parents=True, exist_ok=True)
    write_records_jsonl(records, args.out / "records.jsonl")
    summary = {"provenance": _provenance(args)}
    if y is not None:
        summary["metrics"] = summarize(records, ood_records).to_dict()
    _write_json(args.out / "summary.json", summary)
    print(json.dumps(summary.get("metrics", {"records": len(records)})))
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    dep = load_deployment(args.deployment)
    X, y = load_csv_dataset(args.data)
    if y is None:
        raise ConfigError("calibration data must carry labels")
    size = args.calib_size if args.calib_size is not None else len(X)
    if size < 1 or size > len(X):
        raise ConfigError(f"calib size {size} outside [1, {len(X)}]")
    if args.compensate:
        dep.set_compensation(args.time)
    clean = run_ensemble(
        dep, X[:size], args.n_mc, t=T0_SECONDS, seed=args.seed, labels=y[:size],
        backend="software", stage=STAGE_CLEAN, workers=args.workers,
    )
    hw = run_ensemble(
        dep, X[:size], args.n_mc, t=args.time, seed=args.seed, labels=y[:size],
        backend="hardware", stage=STAGE_CALIB, workers=args.workers,
    )
    fit = calibrate_network(clean, hw)
    args.out.mkdir(parents=True, exist_ok=True)
    fit.save(args.out / "logit_fit.json")
    _write_json(args.out / "calibrate_provenance.json", _provenance(args))
    print(json.dumps({"fit": str(args.out / "logit_fit.json"), "samples": size}))
    return EXIT_OK


def _cmd_drift_sweep(args) -> int:
    dep = load_deployment(args.deployment)
    X, y = load_csv_dataset(args.data)
    X_ood = None
    if args.ood:
        X_ood, _ = load_csv_dataset(args.ood)
    X_calib = y_calib = None
    if args.calib:
        X_calib, y_calib = load_csv_dataset(args.calib)
    times = [float(v) for v in args.times.split(",") if v]
    scenarios = tuple(s.strip() for s in args.scenarios.split(",") if s.strip())
    rows = sweep(
        dep, X, y, times=times, scenarios=scenarios, seed=args.seed,
        n_mc=args.n_mc, X_ood=X_ood, X_calib=X_calib, y_calib=y_calib,
        nu_c=args.nu_c, refit_each_time=not args.reuse_fit, workers=args.workers,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows_jsonl(rows, args.out / "drift_rows.jsonl")
    write_rows_csv(rows, args.out / "drift_summary.csv")
    _write_json(args.out / "drift_provenance.json", _provenance(args))
    print(json.dumps({"rows": len(rows)}))
    return EXIT_OK


def _resolve_budget(name: str) -> ComponentBudget:
    if name in ("pcm", "sram"):
        return load_builtin_budget(name)
    return ComponentBudget.from_json_file(name)


def _cmd_hw_model(args) -> int:
    budget = _resolve_budget(args.budget)
    result = evaluate(budget, args.mode)
    if args.baseline:
        result["versus"] = compare(budget, _resolve_budget(args.baseline), args.mode)
    print(json.dumps(result))
    if args.out != Path("."):
        args.out.mkdir(parents=True, exist_ok=True)
        _write_json(args.out / "hw_model.json", {**result, "provenance": _provenance(args)})
    return EXIT_OK


def _cmd_sample_check(args) -> int:
    from .crossbar import compensation_alpha, empirical_sign_probability

    model = _load_noise_model(args)
    config = _core_config(args, _load_run_config(args))
    rng = np.random.default_rng([args.seed, 0xC1EC])
    np_weight = None
    if args.exact_compensation:
        np_weight = config.t_ratio / compensation_alpha(args.time)
    empirical = empirical_sign_probability(
        args.z, config, model, n_samples=args.n_samples, rng=rng,
        t=args.time, np_weight=np_weight, read_noise=args.read_noise,
    )
    expected = float(normal_cdf(args.z))
    ci = 3.0 * float(np.sqrt(max(expected * (1 - expected), 1e-12) / args.n_samples))
    print(json.dumps({
        "z": args.z, "empirical": empirical, "expected": expected,
        "ci99_7": ci, "n_samples": args.n_samples, "n_r": config.n_r,
        "t_ratio": config.t_ratio,
    }))
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "program": _cmd_program,
    "infer": _cmd_infer,
    "calibrate": _cmd_calibrate,
    "drift-sweep": _cmd_drift_sweep,
    "hw-model": _cmd_hw_model,
    "sample-check": _cmd_sample_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NoisePlaneInfeasibleError as exc:
        print(json.dumps({"error": {"code": EXIT_INFEASIBLE, "message": str(exc)}}),
              file=sys.stderr)
        return EXIT_INFEASIBLE
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(json.dumps({"error": {"code": EXIT_NUMERIC, "message": str(exc)}}),
              file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": {"code": EXIT_CONFIG, "message": str(exc)}}),
              file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
