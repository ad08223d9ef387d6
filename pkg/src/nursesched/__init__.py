"""Constrained nurse-patient scheduling with a graph-attention PPO agent."""

from .domain import (
    ArrivalModel,
    BoundingBox,
    ConstraintConfig,
    GeoPoint,
    Nurse,
    Patient,
    Roster,
    generate_patient,
    generate_roster,
    load_roster,
    skill_match,
)
from .env import NULL, Assign, EnvConfig, EnvState, SchedulingEnv, Null
from .estimator import HeuristicScheduler, PPOScheduler
from .geo import haversine_km
from .policy import PolicyConfig
from .ppo import TrainConfig, evaluate, train
from .rng import Rng

__version__ = "0.1.0"
