"""Reference values used by the experiment drivers."""

from . import oracles

__all__ = ["oracles"]
