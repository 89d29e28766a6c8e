"""Run configuration: YAML parsing, strict validation, resolved-default echo.

Every section has defaults, so an empty file is a valid config.  Unknown
keys are rejected, and every validation error names the offending field
path (for example ``budget.max_cost``).  ``to_dict`` echoes the fully
resolved configuration; feeding that echo back through ``from_dict``
reproduces the identical config, which is what checkpoints rely on.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .controller import LoopConfig, TrainConfig, active_levels_for_mode
from .generation import GenObjectiveConfig
from .model import ModelConfig
from .oracles import (
    ExternalEnvironment,
    ExternalOracleSpec,
    SyntheticEnvConfig,
    SyntheticEnvironment,
)
from .sequences import Alphabet

VALID_SECTIONS = ("seeds", "mode", "environment", "model", "training",
                  "generation", "escalation", "budget", "controller")


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


def _reject_unknown(data: dict, allowed, prefix: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{prefix}: unknown key(s) {', '.join(unknown)}")


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected a mapping")
    return dict(value)


def _build_dataclass(cls, data: dict, prefix: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _reject_unknown(data, fields, prefix)
    kwargs = {}
    for name, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        obj = cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"{prefix}: {err}") from None
    try:
        obj.validate(prefix)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return obj


@dataclass
class ExternalEnvSection:
    alphabet_size: int = 12
    length: int = 10
    oracles: tuple[ExternalOracleSpec, ...] = ()

    def validate(self, prefix: str = "environment") -> None:
        if self.alphabet_size < 2:
            raise ValueError(f"{prefix}.alphabet_size: must be >= 2")
        if self.length < 2:
            raise ValueError(f"{prefix}.length: must be >= 2")
        if not self.oracles:
            raise ValueError(f"{prefix}.oracles: at least one oracle required")
        for i, spec in enumerate(self.oracles):
            spec.validate(f"{prefix}.oracles[{i}]")
        costs = [o.cost for o in self.oracles]
        if any(b <= a for a, b in zip(costs, costs[1:])):
            raise ValueError(f"{prefix}.oracles: costs must be strictly increasing")


class RunConfig:
    """Fully resolved configuration for one experiment."""

    def __init__(self, *, seeds, mode, environment_kind, environment,
                 external_env, model, training, generation, escalation_gamma,
                 max_cost, controller):
        self.seeds = seeds
        self.mode = mode
        self.environment_kind = environment_kind
        self.environment = environment
        self.external_env = external_env
        self.model = model
        self.training = training
        self.generation = generation
        self.escalation_gamma = escalation_gamma
        self.max_cost = max_cost
        self.controller = controller

    @property
    def n_fidelities(self) -> int:
        if self.environment_kind == "synthetic":
            return len(self.environment.rho)
        return len(self.external_env.oracles)

    # -- construction -------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        _reject_unknown(data, VALID_SECTIONS, "config")

        seeds = data.get("seeds", [0])
        if isinstance(seeds, int):
            seeds = [seeds]
        if (not isinstance(seeds, (list, tuple)) or not seeds
                or not all(isinstance(s, int) and s >= 0 for s in seeds)):
            raise ConfigError("seeds: expected a non-empty list of integers >= 0")
        seeds = [int(s) for s in seeds]
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds: duplicate seed values")

        mode = data.get("mode", "full")
        if not isinstance(mode, str):
            raise ConfigError("mode: expected a string")

        env_data = _section(data, "environment")
        kind = env_data.pop("kind", "synthetic")
        if kind == "synthetic":
            environment = _build_dataclass(SyntheticEnvConfig, env_data, "environment")
            external_env = None
        elif kind == "external":
            oracle_dicts = env_data.pop("oracles", [])
            if not isinstance(oracle_dicts, (list, tuple)):
                raise ConfigError("environment.oracles: expected a list")
            oracles = tuple(
                _build_dataclass(ExternalOracleSpec, dict(o), f"environment.oracles[{i}]")
                for i, o in enumerate(oracle_dicts))
            env_data["oracles"] = oracles
            environment = None
            external_env = _build_dataclass(ExternalEnvSection, env_data, "environment")
        else:
            raise ConfigError(f"environment.kind: expected synthetic or external, got {kind!r}")

        model = _build_dataclass(ModelConfig, _section(data, "model"), "model")
        training = _build_dataclass(TrainConfig, _section(data, "training"), "training")
        generation = _build_dataclass(GenObjectiveConfig, _section(data, "generation"),
                                      "generation")

        budget_data = _section(data, "budget")
        _reject_unknown(budget_data, ("max_cost",), "budget")
        max_cost = float(budget_data.get("max_cost", 20000.0))
        if max_cost <= 0:
            raise ConfigError("budget.max_cost: must be > 0")

        loop = _build_dataclass(LoopConfig, _section(data, "controller"), "controller")

        n_fid = (len(environment.rho) if environment is not None
                 else len(external_env.oracles))
        escalation = _section(data, "escalation")
        _reject_unknown(escalation, ("gamma",), "escalation")
        gamma = escalation.get("gamma")
        if gamma is None:
            gamma = tuple(0.5 for _ in range(n_fid - 1))
        else:
            if not isinstance(gamma, (list, tuple)):
                raise ConfigError("escalation.gamma: expected a list of floats")
            gamma = tuple(float(g) for g in gamma)
            if n_fid == 1:
                raise ConfigError(
                    "escalation.gamma: no thresholds possible with a single fidelity")
            if len(gamma) != n_fid - 1:
                raise ConfigError(
                    f"escalation.gamma: expected {n_fid - 1} thresholds, got {len(gamma)}")
            if any(g < 0 for g in gamma):
                raise ConfigError("escalation.gamma: thresholds must be >= 0")

        try:
            active_levels_for_mode(mode, n_fid)
        except ValueError as err:
            raise ConfigError(str(err)) from None

        return cls(seeds=seeds, mode=mode, environment_kind=kind,
                   environment=environment, external_env=external_env,
                   model=model, training=training, generation=generation,
                   escalation_gamma=gamma, max_cost=max_cost, controller=loop)

    # -- echo ---------------------------------------------------------------------

    def to_dict(self) -> dict:
        if self.environment_kind == "synthetic":
            env = {"kind": "synthetic", **dataclasses.asdict(self.environment)}
            env["rho"] = list(env["rho"])
            env["noise"] = list(env["noise"])
            env["cost"] = list(env["cost"])
        else:
            env = {
                "kind": "external",
                "alphabet_size": self.external_env.alphabet_size,
                "length": self.external_env.length,
                "oracles": [dataclasses.asdict(o) for o in self.external_env.oracles],
            }
        return {
            "seeds": list(self.seeds),
            "mode": self.mode,
            "environment": env,
            "model": dataclasses.asdict(self.model),
            "training": dataclasses.asdict(self.training),
            "generation": dataclasses.asdict(self.generation),
            "escalation": {"gamma": list(self.escalation_gamma)},
            "budget": {"max_cost": self.max_cost},
            "controller": dataclasses.asdict(self.controller),
        }

    def with_overrides(self, *, seed: int | None = None, mode: str | None = None,
                       budget: float | None = None) -> "RunConfig":
        data = self.to_dict()
        if seed is not None:
            data["seeds"] = [seed]
        if mode is not None:
            data["mode"] = mode
        if budget is not None:
            data["budget"]["max_cost"] = budget
        return RunConfig.from_dict(data)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"config file not parseable: {err}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return RunConfig.from_dict(data)


def build_environment(config: RunConfig):
    if config.environment_kind == "synthetic":
        return SyntheticEnvironment(config.environment)
    ext = config.external_env
    return ExternalEnvironment(list(ext.oracles), Alphabet.default(ext.alphabet_size),
                               ext.length)
