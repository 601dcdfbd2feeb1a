"""Run configuration: one JSON document validated before any work starts.

Sections mirror the library config dataclasses (game, belief, train) plus a
run section owned by the command line. Unknown keys are rejected with the
precise offending path so a typo never silently trains the wrong thing.
"""

from __future__ import annotations

import dataclasses
import difflib
import json
from dataclasses import dataclass

from .beliefs import BeliefConfig
from .hanabi import GameConfig
from .learner import TrainConfig

VARIANTS = ("v0", "v1", "v2")
MATRIX_MODES = ("bad", "pg")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending path."""


@dataclass(frozen=True)
class RunSettings:
    """CLI-owned knobs: seeds, budgets, cadence, output locations."""

    seed: int = 0
    updates: int = 500
    max_env_steps: int | None = None
    checkpoint_every: int = 0          # 0 = final checkpoint only
    out: str | None = None
    variant: str = "v2"
    mode: str = "bad"                  # matrix-game training mode
    sample_count: int | None = None    # belief-transition hand samples
    horizon: int = 65
    log_every: int = 20
    games: int = 1000                  # evaluation/report game count
    eval_inv_temp: float = 100.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.mode not in MATRIX_MODES:
            raise ValueError(f"mode must be one of {MATRIX_MODES}")
        if self.updates < 0:
            raise ValueError("updates must be >= 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.games < 1:
            raise ValueError("games must be >= 1")
        if self.eval_inv_temp <= 0:
            raise ValueError("eval_inv_temp must be positive")
        if self.sample_count is not None and self.sample_count < 1:
            raise ValueError("sample_count must be >= 1 when set")
        if self.max_env_steps is not None and self.max_env_steps < 1:
            raise ValueError("max_env_steps must be >= 1 when set")


@dataclass(frozen=True)
class RunConfig:
    game: GameConfig
    belief: BeliefConfig
    train: TrainConfig
    run: RunSettings


SECTIONS = ("game", "belief", "train", "run")

# JSON arrays arrive as lists; these dataclass fields want tuples
_TUPLE_FIELDS = {"hidden_sizes", "pbt_perturb"}


def _unknown_key(path: str, key: str, allowed) -> ConfigError:
    msg = f"{path}.{key}: unknown key" if path else f"{key}: unknown key"
    close = difflib.get_close_matches(key, allowed, n=1)
    if close:
        msg += f" (did you mean {close[0]!r}?)"
    return ConfigError(msg)


def _build(cls, section, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = [f.name for f in dataclasses.fields(cls)]
    kwargs = {}
    for key, value in section.items():
        if key not in allowed:
            raise _unknown_key(path, key, allowed)
        if key in _TUPLE_FIELDS:
            if not isinstance(value, list):
                raise ConfigError(f"{path}.{key}: expected an array")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def parse_run_config(doc) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    for key in doc:
        if key not in SECTIONS:
            raise _unknown_key("", key, SECTIONS)
    return RunConfig(
        game=_build(GameConfig, doc.get("game", {}), "game"),
        belief=_build(BeliefConfig, doc.get("belief", {}), "belief"),
        train=_build(TrainConfig, doc.get("train", {}), "train"),
        run=_build(RunSettings, doc.get("run", {}), "run"),
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return parse_run_config(doc)


def effective_dict(rc: RunConfig) -> dict:
    """All defaults materialised, JSON-ready; feeding this back through
    parse_run_config reproduces the run."""
    out = {}
    for name, cfg in (("game", rc.game), ("belief", rc.belief),
                      ("train", rc.train), ("run", rc.run)):
        d = dataclasses.asdict(cfg)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        out[name] = d
    return out
