"""Neural reactive-power policies for grid-connected inverters.

Policies are trained by stochastic primal-dual updates through the AC power
flow, under averaged voltage constraints or a CVaR restriction of per-bus
chance constraints, with analytic or two-point zeroth-order sensitivities.
"""
from .estimator import ProxyMasker, VoltVarPolicy, ZeroPolicy
from .feeder import FeederModel, bundled_feeder_path, load_feeder
from .powerflow import GridConditions, sensitivities, solve
from .scenarios import MeterMask, ScenarioSet, generate_dataset, load_profiles, split
from .training import TrainConfig

__all__ = [
    "FeederModel",
    "GridConditions",
    "MeterMask",
    "ProxyMasker",
    "ScenarioSet",
    "TrainConfig",
    "VoltVarPolicy",
    "ZeroPolicy",
    "bundled_feeder_path",
    "generate_dataset",
    "load_feeder",
    "load_profiles",
    "sensitivities",
    "solve",
    "split",
]

__version__ = "0.1.0"
