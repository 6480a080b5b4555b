"""Run configuration: a strict INI-style file with env/agent/attack/io
sections.  Unknown sections or keys are errors so typos fail fast."""

from __future__ import annotations

import configparser
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .agent import AgentConfig
from .env import EnvConfig


class ConfigError(ValueError):
    pass


def substream(seed: int, name: str):
    """Named RNG substream: one root seed fans out into independent streams
    so one component's draws never perturb another's."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def make_rngs(seed: int) -> dict:
    return {name: substream(seed, name)
            for name in ("jobs", "weights", "epsilon", "schedule",
                         "synthesis", "evaluation")}


@dataclass(frozen=True)
class AttackConfig:
    trigger_file: str = ""
    duration: int = 0          # 0 means "use the trigger file's declared duration"
    poisoning_rate: float = 0.05
    delta: float = 0.3
    synth_lower: float = 1.0
    synth_upper: float = 10000.0

    @property
    def synth_bounds(self):
        return (self.synth_lower, self.synth_upper)


@dataclass(frozen=True)
class IoConfig:
    out_dir: str = "runs/out"
    checkpoint_interval: int = 50
    seed: int = -1


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    agent: AgentConfig
    attack: AttackConfig
    io: IoConfig


_SECTION_TYPES = {"env": EnvConfig, "agent": AgentConfig,
                  "attack": AttackConfig, "io": IoConfig}


def _coerce(value: str, target_type):
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    if target_type is bool:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return value


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Parse and validate a run-configuration file.

    ``overrides`` maps ``section.key`` to replacement values (already typed
    or as strings), used by CLI flags like ``--seed``.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    raw = {name: dict(parser[name]) for name in parser.sections()}
    for section in raw:
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
    for key, value in (overrides or {}).items():
        section, _, field_name = key.partition(".")
        raw.setdefault(section, {})[field_name] = value

    built = {}
    for section, cls in _SECTION_TYPES.items():
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in raw.get(section, {}).items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            target = cls.__dataclass_fields__[key].default
            target_type = type(target) if target is not None else str
            try:
                kwargs[key] = (value if not isinstance(value, str)
                               else _coerce(value, target_type))
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
        try:
            built[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [{section}] section: {exc}") from exc

    run = RunConfig(env=built["env"], agent=built["agent"],
                    attack=built["attack"], io=built["io"])
    if run.io.seed < 0:
        raise ConfigError("io.seed is mandatory (nonnegative integer)")
    if run.attack.trigger_file and not Path(run.attack.trigger_file).is_file():
        raise ConfigError(f"trigger file not found: {run.attack.trigger_file}")
    return run


def config_text(run: RunConfig) -> str:
    """Canonical text form of a config, written into run manifests."""
    lines = []
    for section, obj in (("env", run.env), ("agent", run.agent),
                         ("attack", run.attack), ("io", run.io)):
        lines.append(f"[{section}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {getattr(obj, f.name)}")
        lines.append("")
    return "\n".join(lines)
