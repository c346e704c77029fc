"""Run configuration recorded in every output header."""

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from sdmnav import __version__

# Options that change where or how loudly a run writes, never what it computes.
NON_SEMANTIC_OPTIONS = frozenset({"command", "out", "workers", "quiet", "verbose", "func"})


def _plain(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass(frozen=True)
class RunConfig:
    """Subcommand, semantic options and seed of one CLI invocation."""
    command: str
    options: tuple[tuple[str, Any], ...]
    seed: Optional[int] = None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        values = vars(args)
        options = tuple(
            (key, _plain(values[key]))
            for key in sorted(values)
            if key not in NON_SEMANTIC_OPTIONS and key != "seed"
        )
        return cls(command=args.command, options=options, seed=values.get("seed"))

    def as_header(self) -> dict:
        return {
            "tool": "sdmnav",
            "version": __version__,
            "command": self.command,
            "config": dict(self.options),
            "seed": self.seed,
        }
