"""Desk-scale mean-field variational trainer for binary-weight MLPs.

Weights are Bernoulli variables over {-1, +1} with natural parameters
``lambda``; training minimizes mean negative log-likelihood plus the KL
divergence to the uniform prior (weighted by ``kl_weight``). Gradients
flow through a concrete-style relaxation: with logistic noise ``L`` the
relaxed weight is ``tanh((2 * lambda + L) / (2 * tau))``, which hardens to
the exact Bernoulli sign sample as ``tau -> 0``. Each hidden linear layer
is followed by batch norm and ReLU; the output linear layer is followed by
batch norm only, so logits arrive at a calibration-friendly scale.
Inference-time batch-norm coefficients are frozen from the final epoch's
running statistics.

The optional hardware-aware mode perturbs each batch's parameters with
write-noise of the magnitude the devices would add to the reparametrized
values (std ``sigma_p(kappa * z) / kappa`` mapped into the natural domain),
so the trained network tolerates mapping errors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .device import NoiseModel
from .network import LayerSpec, NetworkModel
from .reparam import KAPPA, LAMBDA_CLIP, lambda_to_p, p_to_z

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class TrainingDivergedError(RuntimeError):
    pass


def kl_bernoulli(p):
    """KL divergence of Bernoulli(p) from the uniform Bernoulli(1/2) prior."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("p must lie strictly inside (0, 1)")
    return p * np.log(2.0 * p) + (1.0 - p) * np.log(2.0 * (1.0 - p))


@dataclass
class TrainConfig:
    arch: tuple[int, ...]
    epochs: int = 200
    batch_size: int = 64
    lr: float = 0.02
    tau: float = 1.0
    kl_weight: float = 1.0
    seed: int = 0
    init_std: float = 0.3
    lambda_clip: float = LAMBDA_CLIP
    hardware_aware: bool = False
    noise_model: NoiseModel | None = None
    kappa: float = KAPPA


@dataclass
class _Params:
    lambdas: list[np.ndarray]
    gammas: list[np.ndarray]
    betas: list[np.ndarray]
    run_mean: list[np.ndarray]
    run_var: list[np.ndarray]


def _init_params(cfg: TrainConfig, rng: np.random.Generator) -> _Params:
    lambdas, gammas, betas, means, variances = [], [], [], [], []
    for fan_in, fan_out in zip(cfg.arch[:-1], cfg.arch[1:]):
        lam = np.clip(rng.normal(0.0, cfg.init_std, (fan_in, fan_out)),
                      -cfg.lambda_clip, cfg.lambda_clip)
        lambdas.append(lam)
        gammas.append(np.ones(fan_out))
        betas.append(np.zeros(fan_out))
        means.append(np.zeros(fan_out))
        variances.append(np.ones(fan_out))
    return _Params(lambdas, gammas, betas, means, variances)


def sample_logistic(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(1e-12, 1.0 - 1e-12, size=shape)
    return np.log(u) - np.log1p(-u)


def _hardware_aware_shift(lam, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Additive natural-parameter noise equivalent to write noise on kappa*z."""
    model = cfg.noise_model or NoiseModel()
    p = lambda_to_p(lam, cfg.lambda_clip)
    z = p_to_z(p)
    g = np.clip(np.abs(cfg.kappa * z), 0.0, model.g_max)
    dz = rng.normal(0.0, 1.0, size=lam.shape) * model.sigma_prog(g) / cfg.kappa
    # d(lambda)/dz = phi(z) / (2 p (1 - p)); chain-rule the z-domain noise
    # into the natural domain so the relaxation below stays untouched.
    phi = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    return dz * phi / (2.0 * p * (1.0 - p))


def relaxed_forward(params: _Params, X, tau: float, noises: list[np.ndarray],
                    train: bool = True, hard: bool = False):
    """Forward pass with relaxed binary weights; returns (logits, cache).

    ``noises`` holds one logistic draw per weight matrix. ``hard`` swaps in
    the sign of the relaxed weight (straight-through evaluation).
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    h = np.asarray(X, dtype=float)
    cache = []
    n_layers = len(params.lambdas)
    for i in range(n_layers):
        lam = params.lambdas[i]
        w_soft = np.tanh((2.0 * lam + noises[i]) / (2.0 * tau))
        w = np.where(w_soft >= 0.0, 1.0, -1.0) if hard else w_soft
        pre = h @ w
        if train:
            mu = pre.mean(axis=0)
            var = pre.var(axis=0)
        else:
            mu = params.run_mean[i]
            var = params.run_var[i]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (pre - mu) * inv_std
        out = params.gammas[i] * xhat + params.betas[i]
        act = np.maximum(out, 0.0) if i < n_layers - 1 else out
        cache.append(
            {"h": h, "w_soft": w_soft, "w": w, "pre": pre, "mu": mu, "var": var,
             "inv_std": inv_std, "xhat": xhat, "out": out}
        )
        h = act
    return h, cache


def _softmax_ce(logits, y):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.log(probs[np.arange(n), y] + 1e-300).mean()
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    return loss, dlogits / n, probs


def loss_and_grads(params: _Params, X, y, cfg: TrainConfig, noises: list[np.ndarray],
                   n_train: int):
    """ELBO-style loss (CE + weighted KL), gradients, and batch BN statistics."""
    logits, cache = relaxed_forward(params, X, cfg.tau, noises, train=True)
    ce, dlogits, _ = _softmax_ce(logits, y)

    p = [lambda_to_p(lam, cfg.lambda_clip) for lam in params.lambdas]
    kl_total = float(sum(kl_bernoulli(pi).sum() for pi in p))
    loss = ce + cfg.kl_weight * kl_total / n_train

    g_lam = [np.zeros_like(lam) for lam in params.lambdas]
    g_gamma = [np.zeros_like(g) for g in params.gammas]
    g_beta = [np.zeros_like(b) for b in params.betas]

    grad = dlogits
    for i in reversed(range(len(params.lambdas))):
        c = cache[i]
        if i < len(params.lambdas) - 1:
            grad = grad * (c["out"] > 0.0)
        g_gamma[i] = (grad * c["xhat"]).sum(axis=0)
        g_beta[i] = grad.sum(axis=0)
        dxhat = grad * params.gammas[i]
        m = grad.shape[0]
        dpre = (
            dxhat - dxhat.mean(axis=0) - c["xhat"] * (dxhat * c["xhat"]).mean(axis=0)
        ) * c["inv_std"]
        dw = c["h"].T @ dpre
        grad = dpre @ c["w"].T
        dw_dlam = (1.0 - c["w_soft"] ** 2) / cfg.tau
        g_lam[i] = dw * dw_dlam

    for i, lam in enumerate(params.lambdas):
        inside = np.abs(lam) < cfg.lambda_clip
        dkl_dlam = 4.0 * lam * p[i] * (1.0 - p[i]) * inside
        g_lam[i] += cfg.kl_weight * dkl_dlam / n_train

    bn_stats = [(c["mu"], c["var"]) for c in cache]
    return loss, ce, kl_total, g_lam, g_gamma, g_beta, bn_stats


class _Adam:
    def __init__(self, shapes, lr):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params_list, grads, b1=0.9, b2=0.999, eps=1e-8):
        self.t += 1
        for i, (p, g) in enumerate(zip(params_list, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + eps)


def train(X, y, cfg: TrainConfig) -> tuple[NetworkModel, list[dict]]:
    """Train an MLP on (X, y); returns the network and a per-epoch history."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[0] == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng([cfg.seed, 0x7124])
    params = _init_params(cfg, rng)
    n_train = X.shape[0]

    flat = params.lambdas + params.gammas + params.betas
    opt = _Adam([p.shape for p in flat], cfg.lr)
    history = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        ep_loss, ep_ce, n_batches = 0.0, 0.0, 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue  # batch-norm needs at least two samples
            lambdas_step = params.lambdas
            if cfg.hardware_aware:
                shifted = [
                    lam + _hardware_aware_shift(lam, cfg, rng) for lam in params.lambdas
                ]
                lambdas_step = shifted
            noises = [sample_logistic(rng, lam.shape) for lam in params.lambdas]
            step_params = _Params(
                lambdas_step, params.gammas, params.betas, params.run_mean, params.run_var
            )
            loss, ce, kl, g_lam, g_gamma, g_beta, bn_stats = loss_and_grads(
                step_params, X[idx], y[idx], cfg, noises, n_train
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss diverged at epoch {epoch}, step {n_batches}"
                )
            opt.step(flat, g_lam + g_gamma + g_beta)
            for lam in params.lambdas:
                np.clip(lam, -cfg.lambda_clip, cfg.lambda_clip, out=lam)
            for i, (mu, var) in enumerate(bn_stats):
                params.run_mean[i] *= 1 - BN_MOMENTUM
                params.run_mean[i] += BN_MOMENTUM * mu
                params.run_var[i] *= 1 - BN_MOMENTUM
                params.run_var[i] += BN_MOMENTUM * var
            ep_loss += loss
            ep_ce += ce
            n_batches += 1
        if n_batches:
            history.append(
                {"epoch": epoch, "loss": ep_loss / n_batches, "ce": ep_ce / n_batches,
                 "kl": kl}
            )
    return _export(params, cfg), history


def _export(params: _Params, cfg: TrainConfig) -> NetworkModel:
    layers = []
    n = len(params.lambdas)
    for i in range(n):
        fan_in, fan_out = params.lambdas[i].shape
        layers.append(
            LayerSpec(
                name=f"fc{i}", kind="linear",
                shape={"in_features": fan_in, "out_features": fan_out},
                params={"lambda": params.lambdas[i].copy()},
            )
        )
        layers.append(
            LayerSpec(
                name=f"bn{i}", kind="batchnorm", shape={"features": fan_out},
                params={
                    "gamma": params.gammas[i].copy(),
                    "beta": params.betas[i].copy(),
                    "mean": params.run_mean[i].copy(),
                    "sigma": np.sqrt(params.run_var[i] + BN_EPS),
                },
            )
        )
        if i < n - 1:
            layers.append(LayerSpec(name=f"relu{i}", kind="relu", shape={}))
    return NetworkModel(layers)


# --- CSV dataset interchange -----------------------------------------------------


def load_csv_dataset(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a dataset CSV: feature columns followed by an integer ``label`` column.

    A file without a ``label`` column yields labels ``None`` (OOD sets).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    has_label = header[-1].strip().lower() == "label"
    data = np.asarray([[float(v) for v in row] for row in rows])
    if has_label:
        return data[:, :-1], data[:, -1].astype(int)
    return data, None


def save_csv_dataset(path, X, y=None) -> None:
    X = np.asarray(X)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = [f"f{i}" for i in range(X.shape[1])]
        if y is not None:
            writer.writerow(cols + ["label"])
            for row, label in zip(X, y):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])
        else:
            writer.writerow(cols)
            for row in X:
                writer.writerow([repr(float(v)) for v in row])
