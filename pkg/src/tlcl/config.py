"""Run configuration: one JSON document, schema-checked against the
module config dataclasses.

The schema is the dataclasses themselves: every key must name a field,
nested sections recurse, and anything unknown is an error rather than a
silent ignore.  Values run through the same range checks the dataclass
constructors enforce, so a config file cannot smuggle in a state the
library would reject.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .crl import CrlConfig
from .mining import MiningConfig
from .nav import EnvSpec


class ConfigError(ValueError):
    """Malformed document, unknown key, or a value the schema rejects."""


@dataclass
class GameConfig:
    """Outer-loop knobs for the mining/training alternation."""

    iterations: int = 3
    bootstrap_m: int = 10
    select_samples: int = 8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.bootstrap_m < 1:
            raise ValueError("bootstrap_m must be >= 1")
        if self.select_samples < 1:
            raise ValueError("select_samples must be >= 1")


@dataclass
class RunConfig:
    """Top-level document: task, master seed, and one section per
    pipeline stage.  env = None means the task's built-in layout."""

    task: str = "nav1"
    seed: int = 0
    out: str | None = None
    mining: MiningConfig = field(default_factory=MiningConfig)
    crl: CrlConfig = field(default_factory=CrlConfig)
    ilcl: GameConfig = field(default_factory=GameConfig)
    env: EnvSpec | None = None


# bool is an int subclass; schema checks must not let true/false pass
# as numbers
_PRIMITIVE_OK = {
    int: lambda v: isinstance(v, int) and not isinstance(v, bool),
    float: lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    str: lambda v: isinstance(v, str),
    bool: lambda v: isinstance(v, bool),
}


def _union_members(hint):
    if typing.get_origin(hint) in (typing.Union, types.UnionType):
        return typing.get_args(hint)
    return (hint,)


def _check_value(value, hint, path: str):
    members = _union_members(hint)
    if value is None:
        if type(None) in members:
            return None
        raise ConfigError(f"{path}: null is not allowed")
    for m in members:
        # JSON has no tuples; lists coerce into tuple-typed fields
        if typing.get_origin(m) is tuple and isinstance(value, list):
            elt = (typing.get_args(m) or (int,))[0]
            ok = _PRIMITIVE_OK.get(elt, lambda v: True)
            if all(ok(v) for v in value):
                return tuple(value)
        check = _PRIMITIVE_OK.get(m)
        if check is not None and check(value):
            return value
    names = "/".join(getattr(m, "__name__", str(m)) for m in members
                     if m is not type(None))
    raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")


def _build_env(doc, path: str) -> EnvSpec:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    try:
        return EnvSpec.from_json(json.dumps(doc))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def _build(cls, doc, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(
            f"unknown key{'s' if len(unknown) > 1 else ''} "
            + ", ".join(f"{path}{k}" for k in unknown)
        )
    kwargs = {}
    for key, value in doc.items():
        hint = hints[key]
        sub = f"{path}{key}"
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, sub + ".")
        elif EnvSpec in _union_members(hint):
            kwargs[key] = None if value is None else _build_env(value, sub)
        else:
            kwargs[key] = _check_value(value, hint, sub)
    try:
        return cls(**kwargs)
    except ValueError as e:
        where = path[:-1] if path else "config"
        raise ConfigError(f"{where}: {e}") from e


def loads(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"not valid JSON: {e}") from e
    return _build(RunConfig, doc, "")


def load(path) -> RunConfig:
    try:
        text = open(path).read()
    except OSError as e:
        raise ConfigError(str(e)) from e
    return loads(text)


def to_doc(cfg: RunConfig) -> dict:
    """Round-trippable plain-dict form, as written into run records."""
    doc = {
        "task": cfg.task,
        "seed": cfg.seed,
        "out": cfg.out,
        "mining": dataclasses.asdict(cfg.mining),
        "crl": dataclasses.asdict(cfg.crl),
        "ilcl": dataclasses.asdict(cfg.ilcl),
        "env": None if cfg.env is None else json.loads(cfg.env.to_json()),
    }
    return doc


def default_doc() -> dict:
    """The published schema by example: every key with its default."""
    return to_doc(RunConfig())
