"""Cell-free massive MIMO power control by multi-objective Bayesian optimization."""

from .bo_loop import BoConfig, DecisionCodec, make_codec, replicate, run
from .config import PRESETS, ExperimentConfig, parse_config, preset
from .link_metrics import PowerAllocation, build_state, objectives
from .topology import NetworkConfig, generate_topology

__all__ = [
    "BoConfig",
    "DecisionCodec",
    "ExperimentConfig",
    "NetworkConfig",
    "PRESETS",
    "PowerAllocation",
    "build_state",
    "generate_topology",
    "make_codec",
    "objectives",
    "parse_config",
    "preset",
    "replicate",
    "run",
]
