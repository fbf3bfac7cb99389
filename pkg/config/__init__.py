"""Configuration package."""

from config.settings import RunConfig, load_run_config

__all__ = ["RunConfig", "load_run_config"]
