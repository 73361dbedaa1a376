"""Cycle-accurate simulator of a wide-link 2D-mesh NoC with AXI-ordering endpoints."""

from .config import ExperimentConfig, parse_config
from .engine import ExitStatus, Simulation
from .fabric import MeshConfig, Network, build_mesh
from .presets import run_preset

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "ExitStatus",
    "MeshConfig",
    "Network",
    "Simulation",
    "build_mesh",
    "parse_config",
    "run_preset",
    "__version__",
]
