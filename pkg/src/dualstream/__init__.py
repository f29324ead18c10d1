"""Dual-stream interactive video delivery simulator."""

from .config import ExperimentConfig, load_config, save_config, config_hash

__all__ = ["ExperimentConfig", "load_config", "save_config", "config_hash"]
__version__ = "0.1.0"
