"""Configuration, experiment drivers, CSV reports and the ``dmden`` command."""

from .config import ExperimentConfig, load_config, parse_config
from .report import ExperimentReport, nmse, nmse_with_se, read_csv

__all__ = ["ExperimentConfig", "ExperimentReport", "load_config", "nmse", "nmse_with_se",
           "parse_config", "read_csv"]
