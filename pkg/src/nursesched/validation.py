"""Input checks shared by the estimator front-end."""

from __future__ import annotations

from os import PathLike
from typing import Iterable

from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .domain import Roster, ValidationError, load_roster, roster_from_dict
from .env import EnvConfig, EnvState

__all__ = ["check_roster", "check_states", "check_env_config", "check_is_fitted", "NotFittedError"]


def check_roster(X, min_size: int = 1) -> Roster:
    """Accept a Roster, a path to ``nurses.json``, or its parsed dict."""
    if isinstance(X, Roster):
        roster = X
    elif isinstance(X, (str, PathLike)):
        roster = load_roster(X)
    elif isinstance(X, dict):
        roster = roster_from_dict(X)
    else:
        raise ValidationError(f"expected a Roster, a nurses.json path or dict, got {type(X).__name__}")
    if len(roster) < min_size:
        raise ValidationError(f"roster has {len(roster)} nurses, need at least {min_size}")
    return roster


def check_states(X) -> list[EnvState]:
    """Normalise a single state or an iterable of states to a list."""
    if isinstance(X, EnvState):
        return [X]
    if isinstance(X, Iterable):
        states = list(X)
        bad = [type(s).__name__ for s in states if not isinstance(s, EnvState)]
        if bad:
            raise ValidationError(f"expected EnvState items, got {sorted(set(bad))}")
        return states
    raise ValidationError(f"expected EnvState or an iterable of them, got {type(X).__name__}")


def check_env_config(config) -> EnvConfig:
    if config is None:
        return EnvConfig()
    if not isinstance(config, EnvConfig):
        raise ValidationError(f"env_config must be an EnvConfig, got {type(config).__name__}")
    return config
