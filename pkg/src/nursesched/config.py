"""Run configuration: defaults < JSON config file < command-line flags."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from typing import Any, Optional

from .domain import ArrivalModel, ConstraintConfig, ValidationError
from .env import EnvConfig
from .policy import PolicyConfig
from .ppo import TrainConfig

SEED_ENV_VAR = "NURSESCHED_SEED"

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_POLICY_KEYS = {"hidden_dim": "d_h", "n_heads": "n_heads", "n_layers": "n_layers", "standard_block": "standard_block"}
_ENV_KEYS = {"horizon", "step_minutes", "travel_speed_kmh", "fatigue_decay"}
_ARRIVAL_KEYS = {"lam", "continuity_prob", "revisit_prob"}
_CONSTRAINT_KEYS = {"d_max_km", "max_shift_minutes", "continuity_weight"}
_PATH_KEYS = {"nurses", "constraints", "out_dir"}
KNOWN_KEYS = _TRAIN_KEYS | set(_POLICY_KEYS) | _ENV_KEYS | _ARRIVAL_KEYS | _CONSTRAINT_KEYS | _PATH_KEYS | {"seed"}


class ConfigError(ValidationError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    policy: PolicyConfig
    env: EnvConfig
    nurses: Optional[str] = None
    constraints: Optional[str] = None
    out_dir: str = "runs/default"

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict:
        c, a = self.env.constraints, self.env.arrivals
        out: dict[str, Any] = {"seed": self.seed}
        out.update({k: getattr(self.train, k) for k in sorted(_TRAIN_KEYS)})
        out.update({k: getattr(self.policy, v) for k, v in _POLICY_KEYS.items()})
        out.update({k: getattr(self.env, k) for k in sorted(_ENV_KEYS)})
        out.update({k: getattr(a, k) for k in sorted(_ARRIVAL_KEYS)})
        out.update({k: getattr(c, k) for k in sorted(_CONSTRAINT_KEYS)})
        out.update(max_nurses=self.env.max_nurses, max_patients=self.env.max_patients)
        out.update(nurses=self.nurses, constraints=self.constraints, out_dir=self.out_dir)
        return out


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError([f"{SEED_ENV_VAR}={raw!r} is not an integer"]) from None


def read_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config {path} is not valid JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError([f"config {path} must be a JSON object"])
    return doc


def build_run_config(file_values: dict, overrides: dict) -> RunConfig:
    """Merge file values and non-``None`` overrides over the defaults, reporting every problem at once."""
    merged: dict[str, Any] = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    errors = [f"unknown config key {k!r}" for k in sorted(set(merged) - KNOWN_KEYS)]
    if "seed" not in merged:
        try:
            merged["seed"] = default_seed()
        except ConfigError as exc:
            errors.extend(exc.errors)
            merged["seed"] = 0
    if not isinstance(merged["seed"], int) or isinstance(merged["seed"], bool):
        errors.append(f"seed must be an integer, got {merged['seed']!r}")
        merged["seed"] = 0

    train = TrainConfig(seed=merged["seed"], **{k: merged[k] for k in _TRAIN_KEYS if k in merged})
    errors.extend(train.validate())

    def attempt(factory, **kw):
        try:
            return factory(**kw)
        except (ValueError, TypeError) as exc:
            errors.append(str(exc))
            return None

    policy = attempt(PolicyConfig, **{v: merged[k] for k, v in _POLICY_KEYS.items() if k in merged})
    constraints = attempt(ConstraintConfig, **{k: merged[k] for k in _CONSTRAINT_KEYS if k in merged})
    arrivals = attempt(ArrivalModel, **{k: merged[k] for k in _ARRIVAL_KEYS if k in merged})
    env = None
    if constraints is not None and arrivals is not None:
        env = attempt(EnvConfig, constraints=constraints, arrivals=arrivals, **{k: merged[k] for k in _ENV_KEYS if k in merged})
    if env is not None and train.rollout_len != env.horizon:
        errors.append(f"rollout_len ({train.rollout_len}) must equal horizon ({env.horizon}): one rollout is one episode")
    if errors:
        raise ConfigError(errors)
    return RunConfig(train, policy, env, merged.get("nurses"), merged.get("constraints"), merged.get("out_dir", "runs/default"))


def with_constraints(cfg: RunConfig, constraints: ConstraintConfig) -> RunConfig:
    """Replace the constraint block with one loaded from a ``constraints.json`` file."""
    return replace(cfg, env=replace(cfg.env, constraints=constraints))
