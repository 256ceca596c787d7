"""One weight-plane / noise-plane crossbar core.

The crossbar is split into a weight plane (WP) storing reparametrized
parameters as differential conductance targets ``kappa * z`` and a noise
plane (NP) whose cells sit at a common conductance ``G_n`` chosen so their
summed stochasticity is a standard normal in z units. An MVM runs row by
row: each WP row is read together with an LFSR-arbitrated NP row, the
summed charge is binarized into a weight sample ``w = sign(.)``, and the
8-bit input element is added or subtracted in a 16-bit saturating
accumulator.

Read-pulse bookkeeping: the WP pulse has unit duration and the NP pulse is
``np_weight`` times longer, so a cell's charge contribution scales with its
duration weight. ``np_weight`` starts at the nominal ``t_ratio`` and is the
single actuator the drift compensation rescales.

Noise-plane stochasticity is modeled as cycle-to-cycle: both NP devices of
a cell hold the mean ``G_n`` (and drift identically, so the differential
mean stays zero), while each read draws a fresh write-noise deviate at
``sigma_p(G_n)`` per device. Freezing one deviate per device instead would
quantize every column's noise to ``np_rows`` values; that neither
reproduces the intended per-read sampling distribution nor admits a pure
pulse-width drift compensation, so the per-read form is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .device import (
    DEFAULT_PROGRAM_MAX_ITERS,
    DEFAULT_PROGRAM_TOLERANCE,
    T0_SECONDS,
    DifferentialCell,
    NoiseModel,
    PcmDevice,
    drifted_values,
    program_values,
)
from .lfsr import Lfsr32
from .reparam import KAPPA, Z_CLIP, required_np_sigma, solve_np_conductance

ACC_MIN = -32768
ACC_MAX = 32767
INPUT_MIN = -128
INPUT_MAX = 127


def default_t_ratio(n_r: int) -> int:
    return 8 if n_r == 1 else 4


@dataclass
class CoreConfig:
    wp_rows: int = 128
    np_rows: int = 16
    cols: int = 128
    kappa: float = KAPPA
    n_r: int = 1
    t_ratio: int = 0  # 0 -> default for n_r
    input_bits: int = 8
    acc_bits: int = 16
    frequentist: bool = False

    def __post_init__(self):
        if self.n_r not in (1, 2):
            raise ValueError("n_r must be 1 or 2")
        if self.t_ratio == 0:
            self.t_ratio = default_t_ratio(self.n_r)
        if self.t_ratio < 1:
            raise ValueError("t_ratio must be >= 1")
        if self.np_rows & (self.np_rows - 1):
            raise ValueError("np_rows must be a power of two")

    @property
    def total_rows(self) -> int:
        return self.wp_rows + self.np_rows

    def to_dict(self) -> dict:
        return {
            "wp_rows": self.wp_rows,
            "np_rows": self.np_rows,
            "cols": self.cols,
            "kappa": self.kappa,
            "n_r": self.n_r,
            "t_ratio": self.t_ratio,
            "input_bits": self.input_bits,
            "acc_bits": self.acc_bits,
            "frequentist": self.frequentist,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoreConfig":
        return cls(**d)


@dataclass
class Core:
    """Programmed conductance state of one crossbar core.

    WP grids hold per-device programmed conductances (uS); NP cells all
    target the solved ``g_n``. ``np_weight`` is the runtime NP pulse
    duration in WP-pulse units (nominal ``t_ratio`` until compensation).
    """

    config: CoreConfig
    model: NoiseModel
    wp_pos: np.ndarray
    wp_neg: np.ndarray
    wp_pos_target: np.ndarray
    wp_neg_target: np.ndarray
    g_n: float | None
    np_weight: float = 0.0
    saturation_events: int = 0

    def __post_init__(self):
        if self.np_weight == 0.0:
            self.np_weight = float(self.config.t_ratio)

    def cell(self, row: int, col: int) -> DifferentialCell:
        """Differential-cell view of one WP position."""
        return DifferentialCell(
            pos=PcmDevice(
                g_target=float(self.wp_pos_target[row, col]),
                g_programmed=float(self.wp_pos[row, col]),
            ),
            neg=PcmDevice(
                g_target=float(self.wp_neg_target[row, col]),
                g_programmed=float(self.wp_neg[row, col]),
            ),
        )

    # --- read-time state ---------------------------------------------------

    def read_state(self, t: float) -> "CoreReadState":
        """Deterministic per-time read quantities (drifted means, noise stds)."""
        m = self.model
        pos_mean = drifted_values(self.wp_pos, m, t)
        neg_mean = drifted_values(self.wp_neg, m, t)
        if m.read_noise:
            wp_sigma = np.sqrt(m.sigma_read(pos_mean) ** 2 + m.sigma_read(neg_mean) ** 2)
        else:
            wp_sigma = None
        np_sigma = 0.0
        if self.g_n is not None:
            var = 0.0
            if m.prog_noise:
                var += 2.0 * float(m.sigma_prog(self.g_n)) ** 2
            if m.read_noise:
                g_n_drifted = float(drifted_values(self.g_n, m, t))
                var += 2.0 * float(m.sigma_read(g_n_drifted)) ** 2
            np_sigma = math.sqrt(var)
        return CoreReadState(
            core=self,
            t=t,
            wp_diff_mean=pos_mean - neg_mean,
            wp_sigma=wp_sigma,
            np_cell_sigma=np_sigma,
        )


@dataclass
class CoreReadState:
    core: Core
    t: float
    wp_diff_mean: np.ndarray
    wp_sigma: np.ndarray | None
    np_cell_sigma: float

    def sample_signs(
        self, rng: np.random.Generator, lfsr: Lfsr32, n_row_reads: int | None = None
    ) -> np.ndarray:
        """Binary weight samples for ``n_row_reads`` WP row reads.

        Returns an int8 matrix of {-1, +1} with shape (rows, cols);
        sign(0) = +1 by convention (measure zero under continuous noise).
        """
        core = self.core
        cfg = core.config
        rows = cfg.wp_rows if n_row_reads is None else n_row_reads
        cols = cfg.cols
        kappa = cfg.kappa

        s = self.wp_diff_mean[:rows].copy()
        if self.wp_sigma is not None:
            s += rng.normal(0.0, 1.0, size=(rows, cols)) * self.wp_sigma[:rows]
        s /= kappa

        if core.g_n is not None:
            # One arbitration draw per row read; the selected cells differ
            # per column, so their deviates are independent across columns.
            lfsr.draw_row_block(rows, cfg.np_rows, cfg.n_r)
            if self.np_cell_sigma > 0.0:
                np_sum = rng.normal(
                    0.0, self.np_cell_sigma, size=(cfg.n_r, rows, cols)
                ).sum(axis=0)
                s += (core.np_weight / kappa) * np_sum

        signs = np.where(s >= 0.0, 1, -1).astype(np.int8)
        return signs


def program_core(
    z_matrix: np.ndarray,
    config: CoreConfig,
    model: NoiseModel,
    rng: np.random.Generator,
    tolerance: float = DEFAULT_PROGRAM_TOLERANCE,
    max_iters: int = DEFAULT_PROGRAM_MAX_ITERS,
) -> Core:
    """Map a z-parameter block (or {-1,+1} weights in frequentist mode) onto a core.

    The block may be smaller than the core; remaining WP positions are
    padded with zero targets and excluded from accumulation by zero inputs.
    """
    z_matrix = np.asarray(z_matrix, dtype=float)
    rows, cols = z_matrix.shape
    if rows > config.wp_rows or cols > config.cols:
        raise ValueError("z block exceeds core geometry")

    full = np.zeros((config.wp_rows, config.cols))
    if config.frequentist:
        if not np.all(np.isin(z_matrix, (-1.0, 1.0))):
            raise ValueError("frequentist mode expects weights in {-1, +1}")
        full[:rows, :cols] = z_matrix * model.g_max
        g_n = None
    else:
        if np.any(np.abs(z_matrix) > Z_CLIP + 1e-9):
            raise ValueError(f"|z| exceeds clip {Z_CLIP}")
        full[:rows, :cols] = config.kappa * z_matrix
        sigma_req = required_np_sigma(config.kappa, config.t_ratio, config.n_r)
        g_n = solve_np_conductance(model, sigma_req)

    pos_target = np.maximum(full, 0.0)
    neg_target = np.maximum(-full, 0.0)
    wp_pos = program_values(pos_target, model, rng, tolerance=tolerance, max_iters=max_iters)
    wp_neg = program_values(neg_target, model, rng, tolerance=tolerance, max_iters=max_iters)

    return Core(
        config=config,
        model=model,
        wp_pos=wp_pos,
        wp_neg=wp_neg,
        wp_pos_target=pos_target,
        wp_neg_target=neg_target,
        g_n=g_n,
    )


def sample_sign_row(
    core: Core, wp_row: int, t: float, rng: np.random.Generator, lfsr: Lfsr32
) -> np.ndarray:
    """Weight samples for a single WP row read (length ``cols``)."""
    state = core.read_state(t)
    sub = CoreReadState(
        core=core,
        t=t,
        wp_diff_mean=state.wp_diff_mean[wp_row : wp_row + 1],
        wp_sigma=None if state.wp_sigma is None else state.wp_sigma[wp_row : wp_row + 1],
        np_cell_sigma=state.np_cell_sigma,
    )
    return sub.sample_signs(rng, lfsr, n_row_reads=1)[0]


def saturating_accumulate(contributions: np.ndarray) -> tuple[np.ndarray, int]:
    """Sum signed contributions row by row in 16-bit saturating arithmetic.

    Returns the int16 accumulator vector and the number of saturation
    events. With <= 128 rows of 8-bit inputs the exact range is +/-16256,
    so the fast path is a plain sum.
    """
    contributions = contributions.astype(np.int32, copy=False)
    rows = contributions.shape[0]
    if rows * INPUT_MAX <= ACC_MAX:
        return contributions.sum(axis=0).astype(np.int16), 0

    running = np.cumsum(contributions, axis=0)
    if running.max(initial=0) <= ACC_MAX and running.min(initial=0) >= ACC_MIN:
        return running[-1].astype(np.int16), 0

    acc = np.zeros(contributions.shape[1], dtype=np.int64)
    events = 0
    for j in range(rows):
        acc += contributions[j]
        over = (acc > ACC_MAX) | (acc < ACC_MIN)
        events += int(over.sum())
        np.clip(acc, ACC_MIN, ACC_MAX, out=acc)
    return acc.astype(np.int16), events


def mvm(
    core: Core,
    x: np.ndarray,
    t: float,
    rng: np.random.Generator,
    lfsr: Lfsr32,
    read_state: CoreReadState | None = None,
) -> np.ndarray:
    """Row-by-row signed-accumulate MVM with on-the-fly weight sampling.

    ``x`` is an int8 vector of length ``wp_rows``; every row read uses a
    fresh arbitration draw. Saturation is silent but counted on the core.
    """
    x = np.asarray(x)
    if x.shape != (core.config.wp_rows,):
        raise ValueError("input length must equal wp_rows")
    if x.min(initial=0) < INPUT_MIN or x.max(initial=0) > INPUT_MAX:
        raise ValueError("input entries must fit in int8")

    state = read_state if read_state is not None else core.read_state(t)
    signs = state.sample_signs(rng, lfsr)
    contributions = signs.astype(np.int32) * x.astype(np.int32)[:, None]
    acc, events = saturating_accumulate(contributions)
    core.saturation_events += events
    return acc


def compensation_alpha(t: float, nu_c: float = 0.06) -> float:
    """Drift-compensation coefficient ``(t / T0) ** nu_c``."""
    if t < T0_SECONDS:
        raise ValueError(f"t must be >= {T0_SECONDS} s")
    return (t / T0_SECONDS) ** nu_c


def set_drift_compensation(
    core: Core, t: float, nu_c: float = 0.06, quantize: bool = True
) -> float:
    """Rescale the NP pulse duration to counter weight-plane drift.

    The hardware actuator is quantized (the NP pulse is an integer multiple
    of the WP pulse, never below 1); ``quantize=False`` applies the exact
    coefficient, isolating the compensation law from its quantization.
    """
    alpha = compensation_alpha(t, nu_c)
    exact = core.config.t_ratio / alpha
    if quantize:
        core.np_weight = float(max(1, int(math.floor(exact + 0.5))))
    else:
        core.np_weight = exact
    return core.np_weight


def clear_drift_compensation(core: Core) -> None:
    core.np_weight = float(core.config.t_ratio)


def empirical_sign_probability(
    z: float,
    config: CoreConfig,
    model: NoiseModel,
    n_samples: int,
    rng: np.random.Generator,
    t: float = T0_SECONDS,
    np_weight: float | None = None,
    wp_prog_noise: bool = False,
    read_noise: bool = False,
) -> float:
    """Empirical P(w = +1) for one stored parameter over fresh device draws.

    Characterization harness for the sampling mechanism: each sample sees a
    freshly drawn noise-plane deviate (per device, at sigma_p(G_n)), so the
    10^5-sample estimate converges on the underlying sampling law rather
    than on one deployment's frozen realization. WP programming noise and
    read noise default to off; the law being checked is the write-noise
    budget of the noise plane.
    """
    if abs(z) > Z_CLIP + 1e-9:
        raise ValueError(f"|z| exceeds clip {Z_CLIP}")
    kappa = config.kappa
    sigma_req = required_np_sigma(kappa, config.t_ratio, config.n_r)
    g_n = solve_np_conductance(model, sigma_req)
    weight = float(config.t_ratio) if np_weight is None else float(np_weight)

    # Weight-plane device: one-sided |kappa z| target, drifted to time t.
    target = kappa * abs(z)
    g_w = target
    if wp_prog_noise and model.prog_noise:
        g_w = program_values(np.full(n_samples, target), model, rng, max_iters=1)
    g_w_t = drifted_values(np.asarray(g_w, dtype=float), model, t)
    s = np.sign(z) * g_w_t / kappa
    if np.ndim(s) == 0:
        s = np.full(n_samples, float(s))

    if read_noise and model.read_noise:
        sig = np.sqrt(model.sigma_read(g_w_t) ** 2 + model.sigma_read(0.0) ** 2)
        s = s + rng.normal(0.0, 1.0, n_samples) * sig / kappa

    cell_var = 2.0 * float(model.sigma_prog(g_n)) ** 2
    if read_noise and model.read_noise:
        g_n_t = float(drifted_values(g_n, model, t))
        cell_var += 2.0 * float(model.sigma_read(g_n_t)) ** 2
    np_sum = rng.normal(0.0, math.sqrt(cell_var), size=(config.n_r, n_samples)).sum(axis=0)
    s = s + (weight / kappa) * np_sum

    return float(np.mean(s >= 0.0))
