#!/usr/bin/env python
"""
Run configuration: command-line flags merged over an optional flat
`key=value` config file. Explicit flags win; unknown keys are usage errors.
"""
from __future__ import annotations

# std-lib imports
import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

# 3 party imports
from dotenv import dotenv_values, load_dotenv

LOG_LEVEL_ENV = "SIMIC_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

# dests every subcommand carries that are not run settings
_RESERVED = {"command", "config", "handler", "verbose", "quiet"}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config_file(path: str) -> Dict[str, str]:
    """
    Parses a flat `key=value` file; keys may use `-` or `_`.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: On a key without a value.
    """
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file {path!r} does not exist")
    values = {}
    for key, value in dotenv_values(path).items():
        if value is None:
            raise ValueError(f"config key {key!r} in {path} has no value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _action_for(parser: argparse.ArgumentParser, dest: str) -> Optional[argparse.Action]:
    return next((a for a in parser._actions if a.dest == dest), None)


def _convert(parser: argparse.ArgumentParser, action: argparse.Action, key: str, raw: str) -> Any:
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        lowered = raw.lower()
        if lowered not in _TRUE | _FALSE:
            parser.error(f"config key {key}: expected a boolean, got {raw!r}")
        flag = lowered in _TRUE
        return flag if isinstance(action, argparse._StoreTrueAction) else not flag
    items: List[str] = raw.replace(",", " ").split() if action.nargs not in (None, "?") else [raw]
    converted = []
    for item in items:
        try:
            value = action.type(item) if action.type is not None else item
        except (argparse.ArgumentTypeError, TypeError, ValueError) as e:
            parser.error(f"config key {key}: {e}")
        if action.choices is not None and value not in action.choices:
            parser.error(f"config key {key}: {value!r} is not one of {sorted(action.choices)}")
        converted.append(value)
    return converted if action.nargs not in (None, "?") else converted[0]


@dataclass
class RunConfig:
    """The parsed flags of one invocation plus where file values came from."""

    command: str
    options: Dict[str, Any] = field(default_factory=dict)
    config_file: Optional[str] = None
    from_file: List[str] = field(default_factory=list)

    def __getattr__(self, name: str) -> Any:
        options = self.__dict__.get("options", {})
        if name in options:
            return options[name]
        raise AttributeError(name)

    @classmethod
    def parse(
        cls,
        parser: argparse.ArgumentParser,
        subparsers: Dict[str, argparse.ArgumentParser],
        argv: Optional[Sequence[str]] = None,
    ) -> RunConfig:
        """
        Parses `argv`; with `--config FILE`, file values become the subcommand
        defaults before the flags are parsed, so explicit flags override them.

        Exits with status 2 (argparse usage error) on unknown keys or
        unconvertible values.
        """
        argv = list(sys.argv[1:] if argv is None else argv)
        pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        # subcommands take no positionals before their flags
        command = next((token for token in argv if not token.startswith("-")), None)
        from_file: List[str] = []
        if known.config and command in subparsers:
            sub = subparsers[command]
            try:
                values = read_config_file(known.config)
            except (OSError, ValueError) as e:
                sub.error(str(e))
            defaults = {}
            for key, raw in values.items():
                action = _action_for(sub, key)
                if action is None or key in _RESERVED:
                    sub.error(f"unknown config key {key!r} for '{command}'")
                defaults[key] = _convert(sub, action, key, raw)
                # a required flag satisfied from the file is no longer required
                action.required = False
            sub.set_defaults(**defaults)
            from_file = sorted(defaults)
        args = parser.parse_args(argv)
        options = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        return cls(command=args.command, options=options, config_file=getattr(args, "config", None),
                   from_file=from_file)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Root logger on stderr; flags beat the SIMIC_LOG_LEVEL environment variable (also read from .env)."""
    load_dotenv()
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, os.environ.get(LOG_LEVEL_ENV, "INFO").upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
