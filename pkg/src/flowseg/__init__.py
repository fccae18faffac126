"""Continuous max-flow segmentation with learned capacities and a flow-regularized loss."""

from .capnet import HandcraftedParams, NetConfig, NetParams, OptimConfig
from .field import TvMode, divergence, gradient
from .levelset import extract_contour, sweep, threshold
from .losses import FlowLossForm, HuberParams, energy, flow_loss, train_loss
from .solver import CapacityMaps, FlowState, SolverConfig, SolverResult, solve

__version__ = "0.1.0"

__all__ = [
    "CapacityMaps",
    "FlowLossForm",
    "FlowState",
    "HandcraftedParams",
    "HuberParams",
    "NetConfig",
    "NetParams",
    "OptimConfig",
    "SolverConfig",
    "SolverResult",
    "TvMode",
    "divergence",
    "energy",
    "extract_contour",
    "flow_loss",
    "gradient",
    "solve",
    "sweep",
    "threshold",
    "train_loss",
]
