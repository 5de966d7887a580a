"""Simulation, privacy accounting and bound checking for private federated multi-task learning."""

from .accountant import PrivacyBudget, TradeoffCurve, compose_clt, gaussian_tradeoff, subsample, to_eps_delta
from .mechanism import DpConfig, clip, perturb, sensitivity, sigma_from_epsilon
from .objectives import SyntheticConfig, TaskSpec, estimate_constants, generate_synthetic
from .params import BlockLayout, ClientState, GlobalParam, interpolate, restrict, virtual_average
from .simulator import RunMetrics, SimConfig, run, sweep

__version__ = "0.1.0"

__all__ = [
    "BlockLayout",
    "ClientState",
    "DpConfig",
    "GlobalParam",
    "PrivacyBudget",
    "RunMetrics",
    "SimConfig",
    "SyntheticConfig",
    "TaskSpec",
    "TradeoffCurve",
    "clip",
    "compose_clt",
    "estimate_constants",
    "gaussian_tradeoff",
    "generate_synthetic",
    "interpolate",
    "perturb",
    "restrict",
    "run",
    "sensitivity",
    "sigma_from_epsilon",
    "subsample",
    "sweep",
    "to_eps_delta",
    "virtual_average",
]
