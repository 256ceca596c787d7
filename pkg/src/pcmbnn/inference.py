"""Ensembling-in-time inference over a deployed network.

Each of the ``n_mc`` ensemble members re-samples every weight on the fly
during its forward pass. RNG streams are derived per (member, input) from
the master seed with a counter-based split, so results are bit-identical
for a fixed seed regardless of evaluation order or worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import multiprocessing as mp

import numpy as np

from .device import T0_SECONDS
from .lfsr import Lfsr32
from .network import Deployment, NetworkModel

# Stream-split tags: one per pipeline stage so no two stages share draws.
STAGE_PROGRAM = 11
STAGE_INFER = 22
STAGE_CLEAN = 33
STAGE_SCALES = 44
STAGE_CALIB = 55
STAGE_OOD = 66


def member_rng(seed: int, stage: int, member: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stage), int(member), int(index)])


def quantize_input(x, scale: float):
    """Round to int8 steps of ``scale``; clamps to the 8-bit signed range."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    q = np.rint(np.asarray(x, dtype=float) / scale)
    return np.clip(q, -128, 127).astype(np.int64)


def softmax(logits):
    """Numerically stabilized softmax in 64-bit floating point."""
    l = np.asarray(logits, dtype=float)
    if np.any(np.isnan(l)):
        raise ValueError("NaN logits")
    shifted = l - l.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PredictionRecord:
    input_id: int
    label: int | None
    member_logits: np.ndarray  # (n_mc, n_classes)
    marginal: np.ndarray  # (n_classes,)
    pred: int

    @property
    def member_probs(self) -> np.ndarray:
        return softmax(self.member_logits)

    def to_dict(self) -> dict:
        return {
            "id": int(self.input_id),
            "label": None if self.label is None else int(self.label),
            "member_logits": self.member_logits.tolist(),
            "marginal": self.marginal.tolist(),
            "pred": int(self.pred),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRecord":
        return cls(
            input_id=d["id"],
            label=d.get("label"),
            member_logits=np.asarray(d["member_logits"], dtype=float),
            marginal=np.asarray(d["marginal"], dtype=float),
            pred=d["pred"],
        )


def record_from_logits(input_id, label, member_logits) -> PredictionRecord:
    member_logits = np.asarray(member_logits, dtype=float)
    probs = softmax(member_logits)
    marginal = probs.mean(axis=0)
    pred = int(np.argmax(marginal))  # argmax breaks ties toward the lower index
    return PredictionRecord(
        input_id=input_id, label=label, member_logits=member_logits,
        marginal=marginal, pred=pred,
    )


def compute_scales(network: NetworkModel, X_calib, seed: int, n_mc: int = 3) -> list[float]:
    """Per-layer input quantization scales: max|x| / 127 over the calibration batch.

    The maxima are taken over a few sampled software passes so the observed
    activation ranges include sampling spread, not just the mean network.
    """
    maxima: list[float] = []

    def record(i, value):
        if i >= len(maxima):
            maxima.extend([0.0] * (i + 1 - len(maxima)))
        maxima[i] = max(maxima[i], value)

    from .network import PARAM_KINDS, _apply_nonparam, conv_output_hw, im2col

    for member in range(n_mc):
        for idx, x in enumerate(X_calib):
            rng = member_rng(seed, STAGE_SCALES, member, idx)
            h = np.asarray(x, dtype=float)
            li = 0
            for layer in network.layers:
                if layer.kind in PARAM_KINDS:
                    record(li, float(np.max(np.abs(h))) if h.size else 0.0)
                    z = network.z_for_layer(layer)
                    if layer.kind == "conv2d":
                        stride = layer.shape.get("stride", 1)
                        padding = layer.shape.get("padding", 0)
                        out_hw = conv_output_hw(h.shape, layer.shape["kernel"], stride, padding)
                        cols = im2col(h, layer.shape["kernel"], stride, padding)
                        z2d = z.reshape(z.shape[0], -1).T
                        zs = z2d + rng.normal(0.0, 1.0, size=z2d.shape)
                        w = np.where(zs >= 0.0, 1.0, -1.0)
                        h = (w.T @ cols).reshape(z.shape[0], *out_hw)
                    else:
                        zs = z + rng.normal(0.0, 1.0, size=z.shape)
                        w = np.where(zs >= 0.0, 1.0, -1.0)
                        h = h @ w
                    li += 1
                else:
                    h = _apply_nonparam(layer, h)
    return [m / 127.0 if m > 0 else 1.0 for m in maxima]


# --- ensemble runner ------------------------------------------------------------

_WORKER_DEPLOYMENT: Deployment | None = None
_WORKER_ARGS: dict = {}


def _init_worker(deployment, args):
    global _WORKER_DEPLOYMENT, _WORKER_ARGS
    _WORKER_DEPLOYMENT = deployment
    _WORKER_ARGS = args


def _eval_one_input(deployment, args, idx, x, label) -> PredictionRecord:
    t = args["t"]
    n_mc = args["n_mc"]
    seed = args["seed"]
    stage = args["stage"]
    backend = args["backend"]
    logits = []
    if backend == "hardware":
        states = args["states"]
        for member in range(n_mc):
            rng = member_rng(seed, stage, member, idx)
            lfsr = Lfsr32(int(rng.integers(1, 2**32)))
            logits.append(deployment.forward_member(x, t, rng, lfsr, states))
    elif backend == "software":
        for member in range(n_mc):
            rng = member_rng(seed, stage, member, idx)
            logits.append(deployment.network.forward_software(x, rng))
    elif backend == "software-deterministic":
        logits = [deployment.network.forward_software(x, None) for _ in range(n_mc)]
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return record_from_logits(idx, label, np.stack(logits))


def _eval_chunk(payload):
    indices = payload
    out = []
    for idx in indices:
        x = _WORKER_ARGS["X"][idx]
        label = _WORKER_ARGS["labels"][idx] if _WORKER_ARGS["labels"] is not None else None
        out.append(_eval_one_input(_WORKER_DEPLOYMENT, _WORKER_ARGS, idx, x, label))
    return out


def run_ensemble(
    deployment: Deployment,
    X,
    n_mc: int,
    t: float = T0_SECONDS,
    seed: int = 0,
    labels=None,
    backend: str = "hardware",
    stage: int = STAGE_INFER,
    workers: int = 1,
) -> list[PredictionRecord]:
    """Evaluate the ensemble on a batch of inputs.

    ``backend`` selects the fixed-point hardware path, the sampled
    floating-point software reference, or its deterministic sign-weight
    variant. Parallel workers partition the inputs; record content is
    independent of the partitioning.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    X = [np.asarray(x, dtype=float) for x in X]
    states = deployment.read_states(t) if backend == "hardware" else None
    args = {
        "t": t,
        "n_mc": n_mc,
        "seed": seed,
        "stage": stage,
        "backend": backend,
        "states": states,
        "X": X,
        "labels": None if labels is None else list(labels),
    }

    if workers <= 1 or len(X) < 2:
        records = []
        for idx, x in enumerate(X):
            label = args["labels"][idx] if args["labels"] is not None else None
            records.append(_eval_one_input(deployment, args, idx, x, label))
        return records

    chunks = [list(range(len(X)))[i::workers] for i in range(workers)]
    chunks = [c for c in chunks if c]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(
        max_workers=len(chunks), mp_context=ctx,
        initializer=_init_worker, initargs=(deployment, args),
    ) as pool:
        results = list(pool.map(_eval_chunk, chunks))
    by_index: dict[int, PredictionRecord] = {}
    for chunk in results:
        for rec in chunk:
            by_index[rec.input_id] = rec
    return [by_index[i] for i in range(len(X))]


# --- persistence ---------------------------------------------------------------


def write_records_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()))
            fh.write("\n")


def read_records_jsonl(path) -> list[PredictionRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(PredictionRecord.from_dict(json.loads(line)))
    return out
