"""Simulator and toolkit for desynced low-communication adaptive optimizers."""

from desloc.kernels import BACKEND
from desloc.optim import OptimizerKind, OptimizerSpec, OptimizerState
from desloc.sim import ConstantLR, MembershipEvent, Objective, SimConfig, WSD, run
from desloc.sync import SyncPolicy

__all__ = [
    "BACKEND",
    "ConstantLR",
    "MembershipEvent",
    "Objective",
    "OptimizerKind",
    "OptimizerSpec",
    "OptimizerState",
    "SimConfig",
    "SyncPolicy",
    "WSD",
    "run",
]

__version__ = "0.1.0"
