"""scikit-learn style front-end: ``fit`` trains on a roster, ``predict`` schedules states."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import numcore as nc
from .baselines import BASELINES
from .env import EnvConfig
from .policy import PolicyConfig, act, policy_output
from .ppo import GreedyPolicy, TrainConfig, evaluate, train
from .rng import Rng
from .validation import check_env_config, check_is_fitted, check_roster, check_states


class _SchedulerMixin:
    def predict(self, X) -> list:
        """Action for each state in ``X``."""
        check_is_fitted(self)
        return [self._policy()(s, self._predict_rng()) for s in check_states(X)]

    def score(self, X, y=None, episodes: int = 20, seed: int = 0) -> float:
        """Mean episodic reward over ``episodes`` seeded episodes on roster ``X``."""
        check_is_fitted(self)
        roster = check_roster(X, self.env_config_.max_nurses)
        return evaluate(self._policy(), roster, self.env_config_, episodes, seed)["mean_reward"]

    def evaluate(self, X, episodes: int = 100, seed: int = 0) -> dict:
        check_is_fitted(self)
        roster = check_roster(X, self.env_config_.max_nurses)
        return evaluate(self._policy(), roster, self.env_config_, episodes, seed)


class PPOScheduler(_SchedulerMixin, BaseEstimator):
    """Graph-attention actor-critic trained with masked PPO.

    Parameters mirror the training and architecture hyperparameters; the
    defaults are the full-scale settings (5000 epochs). After ``fit`` the
    learned weights live in ``params_`` and per-epoch statistics in
    ``metrics_``.
    """

    def __init__(
        self,
        hidden_dim: int = 128,
        n_heads: int = 4,
        n_layers: int = 2,
        standard_block: bool = False,
        epochs: int = 5000,
        rollout_len: int = 32,
        ppo_epochs: int = 4,
        lr: float = 3e-4,
        gamma: float = 0.99,
        clip_eps: float = 0.2,
        c_v: float = 0.5,
        c_e: float = 0.01,
        gae_lambda: float = 0.95,
        clip_norm: float = 0.5,
        value_scale: float = 0.05,
        random_state: int = 0,
        env_config: Optional[EnvConfig] = None,
    ):
        self.hidden_dim = hidden_dim
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.standard_block = standard_block
        self.epochs = epochs
        self.rollout_len = rollout_len
        self.ppo_epochs = ppo_epochs
        self.lr = lr
        self.gamma = gamma
        self.clip_eps = clip_eps
        self.c_v = c_v
        self.c_e = c_e
        self.gae_lambda = gae_lambda
        self.clip_norm = clip_norm
        self.value_scale = value_scale
        self.random_state = random_state
        self.env_config = env_config

    def _configs(self):
        env_config = check_env_config(self.env_config)
        policy_config = PolicyConfig(
            d_h=self.hidden_dim,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            standard_block=self.standard_block,
            max_nurses=env_config.max_nurses,
            max_patients=env_config.max_patients,
        )
        train_config = TrainConfig(
            epochs=self.epochs,
            rollout_len=self.rollout_len,
            ppo_epochs=self.ppo_epochs,
            minibatch_size=self.rollout_len,
            lr=self.lr,
            gamma=self.gamma,
            clip_eps=self.clip_eps,
            c_v=self.c_v,
            c_e=self.c_e,
            gae_lambda=self.gae_lambda,
            clip_norm=self.clip_norm,
            value_scale=self.value_scale,
            seed=self.random_state,
        )
        errors = train_config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        return env_config, policy_config, train_config

    def fit(self, X, y=None, out_dir=None):
        """Train on roster ``X`` (Roster, ``nurses.json`` path, or dict). ``y`` is ignored."""
        env_config, policy_config, train_config = self._configs()
        roster = check_roster(X, env_config.max_nurses)
        report = train(train_config, roster, env_config, policy_config, out_dir=out_dir)
        self.params_ = report.store
        self.metrics_ = report.metrics
        self.policy_config_ = policy_config
        self.env_config_ = env_config
        return self

    def _policy(self):
        return GreedyPolicy(self.params_, self.policy_config_)

    def _predict_rng(self):
        return None

    def predict_proba(self, X) -> list:
        """Per state, the probabilities over ``enumerate_actions(state)``."""
        check_is_fitted(self)
        return [policy_output(s, self.params_, self.policy_config_).action_probs for s in check_states(X)]

    def sample(self, X, seed: int = 0) -> list:
        """Stochastic actions from the masked policy."""
        check_is_fitted(self)
        rng = Rng(seed)
        return [act(s, self.params_, self.policy_config_, rng).action for s in check_states(X)]

    def save(self, path) -> None:
        check_is_fitted(self)
        nc.save_checkpoint(self.params_, path, {"policy": self.policy_config_.to_dict(), "estimator": self._param_meta()})

    def _param_meta(self) -> dict:
        return {k: v for k, v in self.get_params().items() if k != "env_config"}

    @classmethod
    def load(cls, path, env_config: Optional[EnvConfig] = None) -> "PPOScheduler":
        store, meta = nc.load_checkpoint(path)
        est = cls(**meta.get("estimator", {}), env_config=env_config)
        est.params_ = store
        est.policy_config_ = PolicyConfig(**meta["policy"])
        est.env_config_ = check_env_config(env_config)
        est.metrics_ = []
        return est


class HeuristicScheduler(_SchedulerMixin, BaseEstimator):
    """One of the fixed baselines behind the same estimator interface; ``fit`` only validates."""

    def __init__(self, strategy: str = "greedy_skill", random_state: int = 0, env_config: Optional[EnvConfig] = None):
        self.strategy = strategy
        self.random_state = random_state
        self.env_config = env_config

    def fit(self, X, y=None):
        if self.strategy not in BASELINES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {sorted(BASELINES)}")
        self.env_config_ = check_env_config(self.env_config)
        check_roster(X, self.env_config_.max_nurses)
        self.policy_ = BASELINES[self.strategy]
        self._rng = Rng(self.random_state)
        return self

    def _policy(self):
        return self.policy_

    def _predict_rng(self):
        return self._rng
