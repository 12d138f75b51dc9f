"""Config-driven command-line runner for the experiment suite.

Subcommands cover the information-gap evaluation, posterior-mean
estimation error, bandit and active-learning simulations, invariance
property checks, and transformer training/architecture comparison. All
artifacts are CSV/JSON files whose headers embed the resolved config
and its hash; reruns with the same config are byte-identical.
"""

from exchlab.cli.config import ConfigError, canonical_json, config_hash, load_config
from exchlab.cli.main import build_parser, main
from exchlab.cli.output import SCHEMA_VERSION, write_csv, write_json
from exchlab.cli.runners import BudgetExceededError, estimate_training_flops

__all__ = [
    "BudgetExceededError",
    "ConfigError",
    "SCHEMA_VERSION",
    "build_parser",
    "canonical_json",
    "config_hash",
    "estimate_training_flops",
    "load_config",
    "main",
    "write_csv",
    "write_json",
]
