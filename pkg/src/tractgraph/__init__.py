"""Anatomically informed graph + transformer classification of white-matter
fiber-cluster features, together with the synthetic-cohort harness used to
validate every piece of the pipeline end to end."""

__version__ = "0.1.0"

from .errors import ConfigError, InputError, TrainingError

__all__ = ["ConfigError", "InputError", "TrainingError", "__version__"]
