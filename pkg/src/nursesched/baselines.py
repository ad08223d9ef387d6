"""Heuristic reference policies. All share the ``policy(state, rng) -> Action`` signature."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .domain import skill_match
from .env import NULL, Action, Assign, EnvState, distance_km, enumerate_actions, feasibility_mask
from .rng import Rng


def _feasible_pairs(state: EnvState):
    m = feasibility_mask(state).mask
    for n, p in zip(*np.nonzero(m)):
        n, p = int(n), int(p)
        yield n, p, skill_match(state.nurses[n].nurse, state.patients[p].patient), distance_km(state, n, p)


def greedy_skill(state: EnvState, rng: Optional[Rng] = None) -> Action:
    """Highest skill match; ties go to the shorter distance, then the lower nurse index."""
    best = min(_feasible_pairs(state), key=lambda c: (-c[2], c[3], c[0], c[1]), default=None)
    return NULL if best is None else Assign(best[0], best[1])


def greedy_nearest(state: EnvState, rng: Optional[Rng] = None) -> Action:
    """Shortest distance; ties go to the higher skill match, then the lower nurse index."""
    best = min(_feasible_pairs(state), key=lambda c: (c[3], -c[2], c[0], c[1]), default=None)
    return NULL if best is None else Assign(best[0], best[1])


def random_feasible(state: EnvState, rng: Rng) -> Action:
    """Uniform over every feasible assignment plus the null action."""
    actions = enumerate_actions(state)
    return actions[rng.randbelow(len(actions))]


BASELINES = {
    "greedy_skill": greedy_skill,
    "greedy_nearest": greedy_nearest,
    "random": random_feasible,
}
