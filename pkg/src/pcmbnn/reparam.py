"""Parameter reparametrization and noise-plane sizing.

Trained natural parameters ``lambda`` define per-weight probabilities
``p = 1 / (1 + exp(-2 * lambda))``. For sampling against Gaussian device
noise the probability is transformed to ``z = Phi^-1(p)`` and scaled by
``kappa`` to a signed conductance target. The noise plane is sized so that
the summed device stochasticity seen by the sign comparator is a standard
normal: with ``n_r`` noise rows read in parallel at a pulse-width ratio
``t_ratio``, each noise device must contribute a programming-noise std of
``kappa / (t_ratio * sqrt(2 * n_r))``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .device import NoiseModel

KAPPA = 8.0
Z_CLIP = 3.0
LAMBDA_CLIP = 3.3

_EPS = 1e-15


class NoisePlaneInfeasibleError(RuntimeError):
    """No conductance state provides the required programming-noise std."""


def lambda_to_p(lam, lambda_clip: float = LAMBDA_CLIP):
    """Probability of the +1 weight value from the natural parameter."""
    lam = np.clip(np.asarray(lam, dtype=float), -lambda_clip, lambda_clip)
    return 1.0 / (1.0 + np.exp(-2.0 * lam))


def p_to_z(p, z_clip: float = Z_CLIP):
    """Inverse standard-normal CDF of ``p``, clipped to ``[-z_clip, z_clip]``.

    Uses a rational approximation refined by one Halley step; absolute error
    is below 1e-9 over the open unit interval. Exact 0/1 inputs are nudged
    by an epsilon guard (they cannot arise from clipped lambdas, but the
    guard keeps the function total).
    """
    p = np.asarray(p, dtype=float)
    if np.any(np.isnan(p)):
        raise ValueError("p contains NaN")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p outside [0, 1]")
    p = np.clip(p, _EPS, 1.0 - _EPS)
    z = _norm_ppf(p)
    return np.clip(z, -z_clip, z_clip)


def z_to_target(z, kappa: float = KAPPA, z_clip: float = Z_CLIP):
    """Signed conductance target (uS) for a reparametrized value."""
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(z) > z_clip + 1e-12):
        raise ValueError(f"|z| exceeds clip {z_clip}")
    return kappa * z


def required_np_sigma(kappa: float = KAPPA, t_ratio: float = 8, n_r: int = 1) -> float:
    """Per-device programming-noise std (uS) each noise cell must supply."""
    if t_ratio < 1:
        raise ValueError("t_ratio must be >= 1")
    if n_r not in (1, 2):
        raise ValueError("n_r must be 1 or 2")
    return kappa / (t_ratio * math.sqrt(2.0 * n_r))


def solve_np_conductance(
    model: NoiseModel, sigma_req: float, tol: float = 1e-4
) -> float:
    """Smallest conductance in ``[0, g_max]`` with ``sigma_p(G) == sigma_req``.

    The lower root is preferred since a lower conductance state draws less
    read power. Raises :class:`NoisePlaneInfeasibleError` when the device
    noise cannot reach the requested level anywhere in range.
    """
    if sigma_req <= 0:
        raise ValueError("sigma_req must be positive")

    def f(g):
        return float(model.sigma_prog(g)) - sigma_req

    grid = np.linspace(0.0, model.g_max, 513)
    vals = np.array([f(g) for g in grid])
    hit = np.flatnonzero(np.abs(vals) < 1e-12)
    if hit.size:
        return float(grid[hit[0]])
    sign_change = np.flatnonzero(np.diff(np.sign(vals)) != 0)
    if sign_change.size == 0:
        raise NoisePlaneInfeasibleError(
            f"sigma_p never reaches {sigma_req:.4f} uS on [0, {model.g_max}] uS"
        )
    lo, hi = grid[sign_change[0]], grid[sign_change[0] + 1]
    return float(brentq(f, lo, hi, xtol=tol))


def normal_cdf(x):
    """Standard normal CDF (convenience wrapper used throughout)."""
    return ndtr(np.asarray(x, dtype=float))


# --- inverse normal CDF -------------------------------------------------------

_PPF_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_PPF_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_PPF_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_PPF_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_PPF_P_LOW = 0.02425


def _norm_ppf(p) -> np.ndarray:
    p_in = np.asarray(p, dtype=float)
    p = np.atleast_1d(p_in)
    x = np.empty_like(p)

    lo = p < _PPF_P_LOW
    hi = p > 1.0 - _PPF_P_LOW
    mid = ~(lo | hi)

    if np.any(lo):
        q = np.sqrt(-2.0 * np.log(p[lo]))
        x[lo] = _tail_poly(q)
    if np.any(hi):
        q = np.sqrt(-2.0 * np.log(1.0 - p[hi]))
        x[hi] = -_tail_poly(q)
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        a, b = _PPF_A, _PPF_B
        num = ((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]
        den = ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        x[mid] = q * num / den

    # One Halley refinement against the exact CDF.
    e = ndtr(x) - p
    u = e * np.sqrt(2.0 * np.pi) * np.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    if p_in.ndim == 0:
        return x[0]
    return x.reshape(p_in.shape)


def _tail_poly(q: np.ndarray) -> np.ndarray:
    """Acklam tail branch: negative quantiles for the lower tail."""
    c, d = _PPF_C, _PPF_D
    num = ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
    den = (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
    return num / den
