"""
Process-level defaults for grainflow.

Values come from the environment (prefix ``GRAINFLOW_``) or a local ``.env`` file.
Command-line flags always win; these settings only fill in what was not given.
"""

from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class GrainflowSettings(BaseSettings):
    """grainflow configuration."""

    model_config = SettingsConfigDict(
        env_prefix="GRAINFLOW_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Logging
    log_level: str = Field(default="INFO")

    # Training defaults
    default_learning_rate: float = Field(default=0.01, gt=0)
    default_eval_every: int = Field(default=100, ge=1)
    default_input_size: str = Field(default="64x64")
    default_seed: int = Field(default=0, ge=0)
    default_val_fraction: float = Field(default=0.2, ge=0, lt=1)
    checkpoint_dir: Optional[str] = Field(default=None)

    # Gradient check
    gradcheck_tolerance: float = Field(default=1e-4, gt=0)
    gradcheck_step: float = Field(default=1e-6, gt=0)
    gradcheck_max_coords: int = Field(default=2000, ge=1)


# Global configuration instance
config = GrainflowSettings()


def get_training_config() -> dict:
    """Training defaults consumed by the CLI."""
    return {
        "learning_rate": config.default_learning_rate,
        "eval_every": config.default_eval_every,
        "input_size": config.default_input_size,
        "seed": config.default_seed,
        "val_fraction": config.default_val_fraction,
        "checkpoint_dir": config.checkpoint_dir,
    }


def get_gradcheck_config() -> dict:
    """Finite-difference settings for the gradient check harness."""
    return {
        "tolerance": config.gradcheck_tolerance,
        "step": config.gradcheck_step,
        "max_coords": config.gradcheck_max_coords,
    }
