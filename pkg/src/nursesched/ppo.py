"""Rollouts, advantage estimation and the clipped PPO update.

Every source of randomness in a training run is derived from the root seed
and the epoch number (``Rng.derive(seed, epoch, stream)``), so an epoch can be
replayed in isolation and a resumed run matches an uninterrupted one.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import numcore as nc
from .domain import Roster
from .env import Action, EnvConfig, EnvState, SchedulingEnv, trace_record
from .policy import Batch, PolicyConfig, act, distribution, forward, init_params
from .rng import Rng

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "episodic_reward", "policy_loss", "value_loss", "entropy", "mean_ratio", "clip_fraction")

# stream ids for Rng.derive
_ENV, _ACT, _SHUFFLE = 0, 1, 2
_INIT = 0xC0FFEE


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    rollout_len: int = 32
    ppo_epochs: int = 4
    lr: float = 3e-4
    gamma: float = 0.99
    clip_eps: float = 0.2
    c_v: float = 0.5
    c_e: float = 0.01
    gae_lambda: float = 0.95
    minibatch_size: int = 32
    clip_norm: float = 0.5
    # the critic is fitted to returns multiplied by this factor; episodic returns are
    # O(100), so 0.05 keeps the value term from swamping the clipped gradient norm
    value_scale: float = 0.05
    seed: int = 0
    checkpoint_every: int = 500

    def validate(self) -> list[str]:
        errors = []
        for name in ("epochs", "rollout_len", "ppo_epochs", "minibatch_size", "checkpoint_every"):
            v = getattr(self, name)
            if not (isinstance(v, int) and not isinstance(v, bool) and v > 0):
                errors.append(f"{name} must be a positive integer, got {v!r}")
        for name in ("lr", "gamma", "c_v", "gae_lambda", "clip_norm", "value_scale"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                errors.append(f"{name} must be positive, got {v!r}")
        if not (isinstance(self.c_e, (int, float)) and self.c_e >= 0):
            errors.append(f"c_e must be non-negative, got {self.c_e!r}")
        if not (isinstance(self.clip_eps, (int, float)) and 0 < self.clip_eps < 1):
            errors.append(f"clip_eps must lie in (0, 1), got {self.clip_eps!r}")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            errors.append("gamma and gae_lambda must lie in (0, 1]")
        return errors


@dataclass
class RolloutBuffer:
    encodings: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    infos: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    def add(self, encoding, action_index, log_prob, reward, value, done, info=None, record=None):
        if not math.isfinite(log_prob):
            raise nc.TrainingError(f"non-finite log-probability at buffer step {len(self)}")
        self.encodings.append(encoding)
        self.actions.append(int(action_index))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))
        self.infos.append(info or {})
        if record is not None:
            self.trace.append(record)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def masks(self) -> np.ndarray:
        return np.stack([e.action_mask for e in self.encodings])

    def batch(self) -> Batch:
        return Batch.stack(self.encodings)

    def episodic_reward(self) -> float:
        return float(sum(self.rewards))


def collect_rollout(
    env: SchedulingEnv,
    store: nc.ParamStore,
    policy_config: PolicyConfig,
    rng: Rng,
    length: int = 32,
    reset_seed: Optional[int] = None,
) -> RolloutBuffer:
    """Run ``length`` policy-sampled steps. Re-seeds the env from ``rng`` when an episode ends early."""
    if reset_seed is not None:
        env.reset(reset_seed)
    buf = RolloutBuffer()
    while len(buf) < length:
        state = env.state
        res = act(state, store, policy_config, rng)
        out = env.step(res.action)
        buf.add(res.encoding, res.index, res.log_prob, out.reward, res.value, out.done, out.info, trace_record(state, res.action, out))
        if out.done and len(buf) < length:
            env.reset(rng.next_u64())
    return buf


def compute_gae(rewards, values, dones, gamma: float = 0.99, lam: float = 0.95, last_value: float = 0.0):
    """Generalised advantage estimates and returns (``advantages + values``).

    ``last_value`` bootstraps past the final step unless that step is terminal.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if not (r.shape == v.shape == d.shape) or r.ndim != 1:
        raise nc.ShapeError(f"length mismatch: rewards {r.shape}, values {v.shape}, dones {d.shape}")
    T = len(r)
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - d[t]
        next_value = v[t + 1] if t + 1 < T else last_value
        delta = r[t] + gamma * next_value * nonterminal - v[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + v


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + eps)


def clipped_surrogate(new_log_probs: nc.Tensor, old_log_probs, advantages, clip_eps: float = 0.2):
    """Per-sample ``min(r A, clip(r, 1-eps, 1+eps) A)`` and the ratio ``r``."""
    ratio = nc.exp(new_log_probs - np.asarray(old_log_probs, dtype=np.float64))
    adv = np.asarray(advantages, dtype=np.float64)
    return nc.minimum(ratio * adv, nc.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv), ratio


def ppo_loss(
    batch: Batch,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    store: nc.ParamStore,
    policy_config: PolicyConfig,
    clip_eps: float = 0.2,
    c_v: float = 0.5,
    c_e: float = 0.01,
):
    """Combined objective ``-clipped surrogate + c_v * value error - c_e * entropy``.

    The stored masks are reapplied so the recomputed distribution has the same support.
    """
    logits, values = forward(batch, store, policy_config)
    _, logp, entropy = distribution(logits, batch.action_mask)
    n = len(actions)
    new_lp = logp[np.arange(n), np.asarray(actions)]
    surrogate, ratio = clipped_surrogate(new_lp, old_log_probs, advantages, clip_eps)
    policy_loss = -surrogate.mean()
    value_loss = nc.square(values - np.asarray(returns)).mean()
    mean_entropy = entropy.mean()
    loss = policy_loss + c_v * value_loss - c_e * mean_entropy
    stats = {
        "policy_loss": policy_loss.item(),
        "value_loss": value_loss.item(),
        "entropy": mean_entropy.item(),
        "mean_ratio": float(ratio.data.mean()),
        "clip_fraction": float((np.abs(ratio.data - 1.0) > clip_eps).mean()),
    }
    return loss, stats


def ppo_update(
    buffer: RolloutBuffer,
    store: nc.ParamStore,
    policy_config: PolicyConfig,
    config: TrainConfig,
    rng: Rng,
) -> dict:
    """K epochs of shuffled minibatch updates; returns minibatch-averaged statistics."""
    scaled = np.asarray(buffer.rewards) * config.value_scale
    adv, returns = compute_gae(scaled, buffer.values, buffer.dones, config.gamma, config.gae_lambda)
    adv = normalize_advantages(adv)
    batch = buffer.batch()
    actions = np.asarray(buffer.actions)
    old_lp = np.asarray(buffer.log_probs)
    totals: dict[str, float] = {}
    n_updates = 0
    order = list(range(len(buffer)))
    for _ in range(config.ppo_epochs):
        rng.shuffle(order)
        for start in range(0, len(order), config.minibatch_size):
            idx = np.asarray(order[start : start + config.minibatch_size])
            loss, stats = ppo_loss(
                batch.take(idx), actions[idx], old_lp[idx], adv[idx], returns[idx],
                store, policy_config, config.clip_eps, config.c_v, config.c_e,
            )
            if not math.isfinite(loss.item()):
                raise nc.TrainingError(f"non-finite loss at update step {store.step + 1}")
            store.zero_grad()
            nc.backward(loss)
            nc.adam_step(store, lr=config.lr, clip_norm=config.clip_norm)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            n_updates += 1
    return {k: v / n_updates for k, v in totals.items()}


# -- training driver ---------------------------------------------------------

@dataclass
class TrainReport:
    store: nc.ParamStore
    metrics: list
    infeasible_assignments: int = 0
    start_epoch: int = 0

    @property
    def rewards(self) -> list[float]:
        return [row["episodic_reward"] for row in self.metrics]


def _format_row(row: dict) -> list[str]:
    return [str(row["epoch"])] + [repr(float(row[k])) for k in METRICS_HEADER[1:]]


def _read_metrics(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"epoch": int(r["epoch"]), **{k: float(r[k]) for k in METRICS_HEADER[1:]}} for r in rows]


def _checkpoint_meta(epoch, train_config, policy_config):
    return {"epoch": epoch, "train": asdict(train_config), "policy": policy_config.to_dict()}


def _count_infeasible(buf: RolloutBuffer) -> int:
    # post-hoc: every executed pair index must be set in the mask the step was taken under
    return int(sum(1 for a, e in zip(buf.actions, buf.encodings) if not e.action_mask[a]))


def train(
    config: TrainConfig,
    roster: Roster,
    env_config: EnvConfig = EnvConfig(),
    policy_config: PolicyConfig = PolicyConfig(),
    out_dir: Optional[str | os.PathLike] = None,
    resume: bool = False,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainReport:
    """Rollout -> GAE -> PPO update, once per epoch.

    With ``out_dir`` set, writes ``metrics.csv`` (one row per epoch, flushed as
    it goes), ``ckpt_XXXXX.bin`` every ``checkpoint_every`` epochs, and
    ``last.bin`` / ``final.bin``. ``resume`` restarts from ``last.bin``.
    """
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    out = Path(out_dir) if out_dir is not None else None
    start = 0
    metrics: list[dict] = []
    store = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume and (out / "last.bin").exists():
            store, meta = nc.load_checkpoint(out / "last.bin")
            start = int(meta["epoch"])
            if (out / "metrics.csv").exists():
                metrics = [r for r in _read_metrics(out / "metrics.csv") if r["epoch"] <= start]
            log.info("resuming from epoch %d", start)
    if store is None:
        store = init_params(policy_config, Rng.derive(config.seed, _INIT))

    fh = writer = None
    if out is not None:
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in metrics:
            writer.writerow(_format_row(row))
        fh.flush()

    env = SchedulingEnv(roster, env_config)
    infeasible = 0
    try:
        for epoch in range(start + 1, config.epochs + 1):
            env_seed = Rng.derive(config.seed, epoch, _ENV).next_u64()
            buf = collect_rollout(env, store, policy_config, Rng.derive(config.seed, epoch, _ACT), config.rollout_len, env_seed)
            infeasible += _count_infeasible(buf)
            stats = ppo_update(buf, store, policy_config, config, Rng.derive(config.seed, epoch, _SHUFFLE))
            row = {"epoch": epoch, "episodic_reward": buf.episodic_reward(), **stats}
            metrics.append(row)
            if writer is not None:
                writer.writerow(_format_row(row))
                fh.flush()
                if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                    meta = _checkpoint_meta(epoch, config, policy_config)
                    nc.save_checkpoint(store, out / "last.bin", meta)
                    if epoch % config.checkpoint_every == 0:
                        nc.save_checkpoint(store, out / f"ckpt_{epoch:05d}.bin", meta)
            if on_epoch is not None:
                on_epoch(row)
            if epoch % 50 == 0:
                log.info("epoch %d reward %.3f", epoch, row["episodic_reward"])
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        nc.save_checkpoint(store, out / "final.bin", _checkpoint_meta(config.epochs, config, policy_config))
    return TrainReport(store, metrics, infeasible, start)


# -- evaluation --------------------------------------------------------------

Policy = Callable[[EnvState, Rng], Action]


class GreedyPolicy:
    """Argmax action of a trained parameter set, wrapped in the baseline signature."""

    def __init__(self, store: nc.ParamStore, policy_config: PolicyConfig):
        self.store = store
        self.policy_config = policy_config

    def __call__(self, state: EnvState, rng: Rng) -> Action:
        return act(state, self.store, self.policy_config, greedy=True).action


def run_episode(policy: Policy, roster: Roster, env_config: EnvConfig, seed: int, rng: Rng, trace: Optional[list] = None) -> dict:
    env = SchedulingEnv(roster, env_config)
    state = env.reset(seed)
    total, matches, required, travel, assigned = 0.0, 0, 0, 0.0, 0
    while True:
        action = policy(state, rng)
        out = env.step(action)
        if trace is not None:
            trace.append(trace_record(state, action, out))
        total += out.reward
        if out.info["assigned"]:
            assigned += 1
            matches += out.info["skill_match"]
            required += out.info["requirements"]
            travel += out.info["travel_km"]
        state = out.next_state
        if out.done:
            break
    return {
        "reward": total,
        "assigned": assigned,
        "skill_matches": matches,
        "requirements": required,
        "travel_km": travel,
        "expired": state.total_expired,
        "final_fatigue": float(np.mean([n.fatigue for n in state.nurses])),
    }


def episode_seeds(seed: int, episode: int) -> tuple[int, Rng]:
    return Rng.derive(seed, episode, _ENV).next_u64(), Rng.derive(seed, episode, _ACT)


def summarize(episodes: Sequence[dict]) -> dict:
    assigned = sum(e["assigned"] for e in episodes)
    required = sum(e["requirements"] for e in episodes)
    return {
        "mean_reward": float(np.mean([e["reward"] for e in episodes])),
        "skill_match_rate": sum(e["skill_matches"] for e in episodes) / required if required else 0.0,
        "mean_travel_km": sum(e["travel_km"] for e in episodes) / assigned if assigned else 0.0,
        "expirations": float(np.mean([e["expired"] for e in episodes])),
        "mean_fatigue": float(np.mean([e["final_fatigue"] for e in episodes])),
    }


def evaluate(policy: Policy, roster: Roster, env_config: EnvConfig = EnvConfig(), episodes: int = 100, seed: int = 0) -> dict:
    """Aggregate metrics over ``episodes`` seeded episodes.

    ``skill_match_rate`` is matched requirements over all requirements of
    assigned patients; ``mean_travel_km`` is per assignment; ``expirations``
    is per episode; ``mean_fatigue`` is the end-of-episode mean nurse fatigue.
    """
    results = []
    for ep in range(episodes):
        env_seed, rng = episode_seeds(seed, ep)
        results.append(run_episode(policy, roster, env_config, env_seed, rng))
    return summarize(results)
