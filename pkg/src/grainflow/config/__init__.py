"""Settings for grainflow."""

from src.grainflow.config.settings import GrainflowSettings, config, get_gradcheck_config, get_training_config

__all__ = ["GrainflowSettings", "config", "get_gradcheck_config", "get_training_config"]
