"""Single-device model for analog conductance storage cells.

All conductances are in microsiemens (uS), all times in seconds. Three
state-dependent non-idealities are modeled:

* programming (write) noise -- Gaussian with a state-dependent standard
  deviation ``sigma_p(G)``, quadratic in the target conductance,
* read noise -- Gaussian with ``sigma_r(G) = max(r0, r1 * sqrt(G))``,
* conductance drift -- power-law decay ``G(t) = G(T0) * (t / T0)**-nu(G)``
  with a state-dependent exponent ``nu(G) = nu0 * exp(-G / g_scale)``.

The reference time ``T0 = 20 s`` is the instant after programming at which
the noise curves are defined; reads before ``T0`` are rejected rather than
extrapolated. Curve coefficients live in :class:`NoiseModel` and can be
loaded from a small JSON config, so measured device data can be swapped in
without touching any code.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

T0_SECONDS = 20.0

DEFAULT_PROGRAM_TOLERANCE = 0.25  # uS
DEFAULT_PROGRAM_MAX_ITERS = 20


@dataclass(frozen=True)
class NoiseModel:
    """State-dependent noise and drift curves for a conductance device.

    ``prog_noise`` / ``read_noise`` gate the stochastic terms so experiments
    can switch individual non-idealities off; the deterministic drift law is
    always active (evaluate at ``t = T0`` for an undrifted read).
    """

    prog_c2: float = -0.0012
    prog_c1: float = 0.065
    prog_c0: float = 0.26
    prog_floor: float = 0.1
    read_r0: float = 0.05
    read_r1: float = 0.04
    drift_nu0: float = 0.08
    drift_gscale: float = 28.0
    g_max: float = 25.0
    nu_max: float = 0.2
    prog_noise: bool = True
    read_noise: bool = True

    def __post_init__(self):
        if self.g_max <= 0:
            raise ValueError("g_max must be positive")
        if self.prog_floor <= 0:
            raise ValueError("prog_floor must be positive")

    # --- noise curves -----------------------------------------------------

    def sigma_prog(self, g):
        """Programming-noise std (uS) at conductance ``g``."""
        g = self._check_domain(g)
        quad = self.prog_c0 + self.prog_c1 * g + self.prog_c2 * g * g
        return np.maximum(quad, self.prog_floor)

    def sigma_read(self, g):
        """Read-noise std (uS) at conductance ``g``."""
        g = self._check_domain(g)
        return np.maximum(self.read_r0, self.read_r1 * np.sqrt(g))

    def drift_nu(self, g):
        """Drift exponent at conductance ``g``, clamped to [0, nu_max]."""
        g = self._check_domain(g)
        nu = self.drift_nu0 * np.exp(-g / self.drift_gscale)
        return np.clip(nu, 0.0, self.nu_max)

    def _check_domain(self, g):
        g = np.asarray(g, dtype=float)
        if np.any(np.isnan(g)) or np.any(g < 0) or np.any(g > self.g_max):
            raise ValueError(
                f"conductance outside [0, {self.g_max}] uS: {g!r}"
            )
        return g

    # --- switches ---------------------------------------------------------

    def without_prog_noise(self) -> "NoiseModel":
        return dataclasses.replace(self, prog_noise=False)

    def without_read_noise(self) -> "NoiseModel":
        return dataclasses.replace(self, read_noise=False)

    def without_noise(self) -> "NoiseModel":
        return dataclasses.replace(self, prog_noise=False, read_noise=False)

    # --- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "prog": {
                "c2": self.prog_c2,
                "c1": self.prog_c1,
                "c0": self.prog_c0,
                "floor": self.prog_floor,
            },
            "read": {"r0": self.read_r0, "r1": self.read_r1},
            "drift": {"nu0": self.drift_nu0, "gscale": self.drift_gscale},
            "g_max": self.g_max,
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> "NoiseModel":
        prog = cfg.get("prog", {})
        read = cfg.get("read", {})
        drift = cfg.get("drift", {})
        return cls(
            prog_c2=float(prog.get("c2", cls.prog_c2)),
            prog_c1=float(prog.get("c1", cls.prog_c1)),
            prog_c0=float(prog.get("c0", cls.prog_c0)),
            prog_floor=float(prog.get("floor", cls.prog_floor)),
            read_r0=float(read.get("r0", cls.read_r0)),
            read_r1=float(read.get("r1", cls.read_r1)),
            drift_nu0=float(drift.get("nu0", cls.drift_nu0)),
            drift_gscale=float(drift.get("gscale", cls.drift_gscale)),
            g_max=float(cfg.get("g_max", cls.g_max)),
        )

    @classmethod
    def from_json_file(cls, path) -> "NoiseModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def eval_noise_model(model: NoiseModel, g, which: str):
    """Evaluate one of the model's curves at conductance ``g``.

    ``which`` is one of ``prog`` (sigma_p, uS), ``read`` (sigma_r, uS) or
    ``drift_exp`` (unitless nu). Deterministic; raises ``ValueError`` for
    conductances outside ``[0, g_max]``.
    """
    if which == "prog":
        return model.sigma_prog(g)
    if which == "read":
        return model.sigma_read(g)
    if which == "drift_exp":
        return model.drift_nu(g)
    raise ValueError(f"unknown curve {which!r}")


@dataclass
class PcmDevice:
    """One device: the intended target and the noise-bearing programmed value."""

    g_target: float
    g_programmed: float
    t_ref: float = T0_SECONDS


@dataclass
class DifferentialCell:
    """Differential pair storing a signed value as a conductance difference.

    The one-sided mapping puts the full magnitude on the sign-matching
    device and zero on the other, maximizing margin within the available
    dynamic range.
    """

    pos: PcmDevice
    neg: PcmDevice


# --- programming ------------------------------------------------------------


def program_values(
    targets,
    model: NoiseModel,
    rng: np.random.Generator,
    tolerance: float = DEFAULT_PROGRAM_TOLERANCE,
    max_iters: int = DEFAULT_PROGRAM_MAX_ITERS,
):
    """Program an array of nonnegative conductance targets.

    Models the iterative program-and-verify loop: each attempt draws a fresh
    write error at ``sigma_p(target)`` and a verify read is taken with read
    noise; the write is accepted once the verify lands within ``tolerance``
    of the target, and the last attempt is kept if ``max_iters`` is
    exhausted (imperfect convergence is not an error). Returns programmed
    conductances clamped to ``[0, g_max]``.
    """
    targets = np.asarray(targets, dtype=float)
    if np.any(targets < 0) or np.any(targets > model.g_max):
        raise ValueError("targets must lie in [0, g_max]")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if not model.prog_noise:
        return targets.copy()

    flat = targets.reshape(-1)
    programmed = np.empty_like(flat)
    active = np.ones(flat.shape, dtype=bool)
    for _ in range(max(1, int(max_iters))):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        t = flat[idx]
        draw = t + rng.normal(0.0, 1.0, size=idx.size) * model.sigma_prog(t)
        draw = np.clip(draw, 0.0, model.g_max)
        programmed[idx] = draw
        verify = draw.copy()
        if model.read_noise:
            verify = draw + rng.normal(0.0, 1.0, size=idx.size) * model.sigma_read(draw)
            verify = np.clip(verify, 0.0, model.g_max)
        active[idx] = np.abs(verify - t) > tolerance
    return programmed.reshape(targets.shape)


def program_cell(
    target: float,
    model: NoiseModel,
    rng: np.random.Generator,
    tolerance: float = DEFAULT_PROGRAM_TOLERANCE,
    max_iters: int = DEFAULT_PROGRAM_MAX_ITERS,
) -> DifferentialCell:
    """Program a signed target (uS) onto a differential cell.

    The sign-matching device receives ``|target|``; the opposite device is
    driven to zero (and still carries clamped write noise near zero).
    """
    if abs(target) > model.g_max:
        raise ValueError("|target| exceeds g_max")
    pos_t = max(float(target), 0.0)
    neg_t = max(-float(target), 0.0)
    pos_g, neg_g = program_values(
        np.array([pos_t, neg_t]), model, rng, tolerance=tolerance, max_iters=max_iters
    )
    return DifferentialCell(
        pos=PcmDevice(g_target=pos_t, g_programmed=float(pos_g)),
        neg=PcmDevice(g_target=neg_t, g_programmed=float(neg_g)),
    )


# --- readout ----------------------------------------------------------------


def drifted_values(g_programmed, model: NoiseModel, t: float):
    """Deterministic drifted conductance of programmed values at time ``t``."""
    if t < T0_SECONDS:
        raise ValueError(f"read time {t} s precedes reference time {T0_SECONDS} s")
    g = np.asarray(g_programmed, dtype=float)
    nu = model.drift_nu(g)
    drifted = g * (t / T0_SECONDS) ** (-nu)
    return np.clip(drifted, 0.0, model.g_max)


def drifted_conductance(dev: PcmDevice, model: NoiseModel, t: float) -> float:
    return float(drifted_values(dev.g_programmed, model, t))


def read_values(g_programmed, model: NoiseModel, t: float, rng: np.random.Generator):
    """One noisy read of programmed values: drift plus read noise, clamped."""
    drifted = drifted_values(g_programmed, model, t)
    if not model.read_noise:
        return drifted
    noisy = drifted + rng.normal(0.0, 1.0, size=drifted.shape) * model.sigma_read(drifted)
    return np.clip(noisy, 0.0, model.g_max)


def read_device(dev: PcmDevice, model: NoiseModel, t: float, rng: np.random.Generator) -> float:
    return float(read_values(np.asarray(dev.g_programmed), model, t, rng))
