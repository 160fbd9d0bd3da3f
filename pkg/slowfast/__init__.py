"""Convenience imports for the slow-fast McKean-Vlasov toolkit."""

from .app import ExperimentApp
from .config import RunConfig, Settings, get_settings, parse_config

__all__ = ["ExperimentApp", "RunConfig", "Settings", "get_settings", "parse_config"]
