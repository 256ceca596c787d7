"""Behavioral simulator for binary Bayesian neural networks on PCM crossbars."""

__version__ = "0.1.0"

from .calibration import LogitModeFit, apply_correction, calibrate_network, correct_logit
from .crossbar import Core, CoreConfig, mvm, program_core, sample_sign_row, set_drift_compensation
from .device import NoiseModel, PcmDevice, DifferentialCell, T0_SECONDS
from .drift import alpha, sweep
from .hwmodel import ComponentBudget, compare, evaluate, load_builtin_budget
from .inference import PredictionRecord, quantize_input, run_ensemble, softmax
from .lfsr import Lfsr32
from .metrics import ece, roc_auc, summarize, uncertainties
from .network import Deployment, NetworkModel, deploy, im2col, partition_layer
from .reparam import (
    lambda_to_p,
    p_to_z,
    required_np_sigma,
    solve_np_conductance,
    z_to_target,
)
from .trainer import TrainConfig, kl_bernoulli, train

__all__ = [
    "CoreConfig", "Core", "Deployment", "DifferentialCell", "ComponentBudget",
    "Lfsr32", "LogitModeFit", "NetworkModel", "NoiseModel", "PcmDevice",
    "PredictionRecord", "T0_SECONDS", "TrainConfig", "alpha", "apply_correction",
    "calibrate_network", "compare", "correct_logit", "deploy", "ece", "evaluate",
    "im2col", "kl_bernoulli", "lambda_to_p", "load_builtin_budget", "mvm",
    "p_to_z", "partition_layer", "program_core", "quantize_input",
    "required_np_sigma", "roc_auc", "run_ensemble", "sample_sign_row",
    "set_drift_compensation", "softmax", "solve_np_conductance", "summarize",
    "sweep", "train", "uncertainties", "z_to_target",
]
