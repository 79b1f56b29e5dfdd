"""Tiered semi-asynchronous federated learning (FedAT) and baselines on a simulated clock."""

from .config import ExperimentConfig, load_config
from .sim import Simulation, run

__all__ = ["ExperimentConfig", "Simulation", "load_config", "run"]
