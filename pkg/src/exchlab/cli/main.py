"""Command-line entry point for the experiment runner.

Usage::

    exchlab <subcommand> [--config FILE] [--set KEY=VALUE ...]
                         [--seed N] [--out PATH] [--workers N]

Subcommands: gap | uq | bandit | active | propcheck | arch | train.

Each subcommand is driven by a single JSON config file; every key has a
default, and ``--set`` overrides one key at a time via a dotted path
(values parse as JSON, bare words stay strings). ``--seed``, ``--out``
and ``--workers`` are one-to-one shorthands for the config keys of the
same name. Exit codes: 0 success, 2 configuration error, 3 refusal
because the estimated compute exceeds the configured budget.
"""

from __future__ import annotations

import argparse
import json
import sys

from exchlab.cli import runners
from exchlab.cli.config import ConfigError, load_config
from exchlab.cli.runners import BudgetExceededError

__all__ = ["build_parser", "main"]

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_BUDGET_REFUSED = 3

# name -> (defaults tree, implementation, open config subtrees, help line)
_COMMANDS: dict[str, tuple[dict, object, tuple[str, ...], str]] = {
    "gap": (
        runners.GAP_DEFAULTS,
        runners.cmd_gap,
        (),
        "closed-form vs Monte Carlo log-score gap over a parameter grid",
    ),
    "uq": (
        runners.UQ_DEFAULTS,
        runners.cmd_uq,
        (),
        "posterior-mean estimation error vs generation-chain length",
    ),
    "bandit": (
        runners.BANDIT_DEFAULTS,
        runners.cmd_bandit,
        (),
        "cumulative-regret curves for Thompson-style selection regimes",
    ),
    "active": (
        runners.ACTIVE_DEFAULTS,
        runners.cmd_active,
        (),
        "uncertainty-sampling test-loss curves on the clustered task",
    ),
    "propcheck": (
        runners.PROPCHECK_DEFAULTS,
        runners.cmd_propcheck,
        ("model_params",),
        "invariance-property reports for a configured model (JSON)",
    ),
    "arch": (
        runners.ARCH_DEFAULTS,
        runners.cmd_arch,
        (),
        "train both masking schemes on identical data and compare losses",
    ),
    "train": (
        runners.TRAIN_DEFAULTS,
        runners.cmd_train,
        (),
        "train one masking scheme; write an epoch log and a checkpoint",
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exchlab",
        description="Config-driven experiment runner; artifacts embed the resolved config.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (defaults, _, _, help_line) in _COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_line, description=help_line)
        sub.add_argument("--config", default=None, metavar="FILE", help="JSON config file")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (dotted path; value parsed as JSON)",
        )
        sub.add_argument("--seed", type=int, default=None, help="shorthand for seed=N")
        sub.add_argument("--out", default=None, metavar="PATH", help="shorthand for out=PATH")
        if "workers" in defaults:
            sub.add_argument(
                "--workers", type=int, default=None, help="shorthand for workers=N"
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    defaults, command, open_paths, _ = _COMMANDS[args.command]
    overrides = list(args.overrides)
    for flag in ("seed", "out", "workers"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{flag}={json.dumps(value)}")
    try:
        config = load_config(defaults, args.config, overrides, open_paths)
        command(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except BudgetExceededError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_BUDGET_REFUSED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
