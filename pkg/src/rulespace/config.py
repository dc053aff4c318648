"""Run configuration files.

The format is flat ``key = value`` text.  ``#`` starts a comment, lists are
written ``key = [a, b]``, and scalars are parsed as bool, int, float or
string in that order::

    train = data/train.txt
    rules = data/rules.txt
    d = 16
    eta = [0.003, 0.01]      # a list on a hyperparameter means grid search
"""

from __future__ import annotations

import ast
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .training import TrainConfig

PATH_KEYS = ("train", "valid", "test", "rules", "model_out")
GRID_KEYS = ("eta", "gamma", "d", "alpha")
EVAL_KEYS = ("setting", "hits")


class ConfigError(ValueError):
    pass


def parse_value(text: str) -> Any:
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [parse_value(part) for part in inner.split(",")] if inner else []
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return ast.literal_eval(text)
    return text


def parse_config(text: str, source="<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load_config(path) -> dict[str, Any]:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path)


@dataclass
class RunConfig:
    """Paths, base training settings, evaluation flags and hyperparameter grid."""

    paths: dict[str, str | None] = field(default_factory=lambda: dict.fromkeys(PATH_KEYS))
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: dict[str, list] = field(default_factory=dict)
    setting: str = "filtered"
    hits: tuple = (1, 3, 5, 10)

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "RunConfig":
        known = set(PATH_KEYS) | set(TrainConfig.field_names()) | set(EVAL_KEYS)
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        paths = {k: (None if values.get(k) is None else str(values[k])) for k in PATH_KEYS}
        grid, base = {}, {}
        for key in TrainConfig.field_names():
            if key not in values:
                continue
            value = values[key]
            if key in GRID_KEYS and isinstance(value, list):
                if not value:
                    raise ConfigError(f"grid list for {key!r} is empty")
                grid[key] = value
            else:
                base[key] = tuple(value) if isinstance(value, list) else value
        try:
            train = TrainConfig(**base)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        hits = values.get("hits", [1, 3, 5, 10])
        hits = tuple(int(h) for h in (hits if isinstance(hits, list) else [hits]))
        return cls(paths, train, grid, str(values.get("setting", "filtered")), hits)

    def grid_points(self) -> list[TrainConfig]:
        """Every combination of the grid lists applied to the base settings (one point if no grid)."""
        if not self.grid:
            return [self.train]
        keys = [k for k in GRID_KEYS if k in self.grid]
        return [self.train.with_(**dict(zip(keys, combo))) for combo in itertools.product(*(self.grid[k] for k in keys))]
