"""Command-line entry points: ``gen-data``, ``train``, ``eval``, ``export-curve``.

Exit status is 0 on success, 1 for invalid input or usage, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import numcore as nc
from .baselines import BASELINES
from .config import ConfigError, RunConfig, build_run_config, default_seed, read_config_file, with_constraints
from .curve import CurveParseError, read_rewards, write_curve
from .domain import (
    ConstraintConfig,
    ValidationError,
    generate_roster,
    load_constraints,
    load_roster,
    save_constraints,
    save_roster,
)
from .env import write_trace
from .policy import PolicyConfig
from .ppo import GreedyPolicy, episode_seeds, run_episode, summarize, train

log = logging.getLogger("nursesched")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
METRIC_KEYS = ("mean_reward", "skill_match_rate", "mean_travel_km", "expirations", "mean_fatigue")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _policy_names() -> list[str]:
    return sorted(BASELINES) + ["checkpoint:<path>"]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nursesched", description="Nurse-patient assignment with masked PPO.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic nurses.json and constraints.json")
    g.add_argument("--seed", type=int, default=None, help="generator seed (default: $NURSESCHED_SEED, else 0)")
    g.add_argument("--out-dir", required=True, help="directory for the two JSON files")
    g.add_argument("--count", type=int, default=40, help="number of nurses (default 40)")

    t = sub.add_parser("train", help="train the policy; writes metrics.csv and checkpoints")
    t.add_argument("--config", help="JSON run config; flags override its values")
    t.add_argument("--nurses", help="nurses.json (default: generated from --seed)")
    t.add_argument("--constraints", help="constraints.json")
    t.add_argument("--out-dir", help="output directory (default runs/default)")
    t.add_argument("--seed", type=int, help="root seed for init, rollouts and shuffling")
    t.add_argument("--epochs", type=int, help="rollout+update cycles (default 5000)")
    t.add_argument("--lr", type=float, help="Adam learning rate (default 3e-4)")
    t.add_argument("--gamma", type=float, help="discount factor (default 0.99)")
    t.add_argument("--clip-eps", type=float, help="PPO clip parameter (default 0.2)")
    t.add_argument("--c-v", type=float, help="value loss coefficient (default 0.5)")
    t.add_argument("--c-e", type=float, help="entropy coefficient (default 0.01)")
    t.add_argument("--gae-lambda", type=float, help="GAE lambda (default 0.95)")
    t.add_argument("--ppo-epochs", type=int, help="passes over each rollout (default 4)")
    t.add_argument("--rollout-len", type=int, help="steps per rollout (default 32)")
    t.add_argument("--minibatch-size", type=int, help="minibatch size (default 32)")
    t.add_argument("--clip-norm", type=float, help="global gradient-norm clip (default 0.5)")
    t.add_argument("--value-scale", type=float, help="reward multiplier for the critic's targets (default 0.05)")
    t.add_argument("--checkpoint-every", type=int, help="checkpoint period in epochs (default 500)")
    t.add_argument("--hidden-dim", type=int, help="encoder width (default 128)")
    t.add_argument("--n-heads", type=int, help="attention heads (default 4)")
    t.add_argument("--n-layers", type=int, help="encoder blocks (default 2)")
    t.add_argument("--standard-block", action="store_true", default=None, help="use the conventional post-norm encoder block")
    t.add_argument("--resume", action="store_true", help="continue from OUT_DIR/last.bin")

    e = sub.add_parser("eval", help="evaluate a baseline or a checkpoint")
    e.add_argument("--policy", required=True, help="greedy_skill | greedy_nearest | random | checkpoint:<path>")
    e.add_argument("--episodes", type=int, default=100, help="number of episodes (default 100)")
    e.add_argument("--seed", type=int, default=None, help="evaluation seed")
    e.add_argument("--config", help="JSON run config (environment settings)")
    e.add_argument("--nurses", help="nurses.json (default: generated from --data-seed)")
    e.add_argument("--constraints", help="constraints.json")
    e.add_argument("--data-seed", type=int, default=0, help="roster seed when --nurses is absent (default 0)")
    e.add_argument("--json", dest="json_out", help="also write the metrics JSON here")
    e.add_argument("--trace", help="write the first episode's step trace (JSON lines) here")
    e.add_argument("--workers", type=int, default=1, help="parallel episode workers (results are identical)")

    c = sub.add_parser("export-curve", help="smooth a metrics.csv and fit a linear trend")
    c.add_argument("metrics", help="metrics.csv written by train")
    c.add_argument("--window", type=int, default=50, help="moving-average window (default 50)")
    c.add_argument("--out", help="output CSV (default <metrics>_curve.csv)")
    return p


def _load_data(cfg: RunConfig, data_seed: int):
    roster = load_roster(cfg.nurses) if cfg.nurses else generate_roster(data_seed, 40)
    if cfg.constraints:
        cfg = with_constraints(cfg, load_constraints(cfg.constraints))
    return cfg, roster


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        roster = generate_roster(seed, args.count)
        save_roster(roster, out / "nurses.json")
        save_constraints(ConstraintConfig(), out / "constraints.json")
    except OSError as exc:
        print(f"error: cannot write {exc.filename or out}: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out / 'nurses.json'} ({len(roster)} nurses) and {out / 'constraints.json'}")
    return EXIT_OK


_TRAIN_FLAGS = (
    "epochs", "lr", "gamma", "clip_eps", "c_v", "c_e", "gae_lambda", "ppo_epochs", "rollout_len",
    "minibatch_size", "clip_norm", "value_scale", "checkpoint_every", "hidden_dim", "n_heads", "n_layers",
    "standard_block", "seed", "nurses", "constraints", "out_dir",
)


def cmd_train(args) -> int:
    cfg = build_run_config(read_config_file(args.config), {k: getattr(args, k) for k in _TRAIN_FLAGS})
    cfg, roster = _load_data(cfg, cfg.seed)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    report = train(cfg.train, roster, cfg.env, cfg.policy, out_dir=cfg.out_dir, resume=args.resume)
    if report.infeasible_assignments:
        print(f"error: {report.infeasible_assignments} infeasible assignments executed", file=sys.stderr)
        return EXIT_RUNTIME
    last = report.metrics[-1]["episodic_reward"] if report.metrics else float("nan")
    print(f"trained {cfg.train.epochs} epochs; final episodic reward {last:.3f}; outputs in {cfg.out_dir}")
    return EXIT_OK


def _resolve_policy(name: str):
    if name in BASELINES:
        return BASELINES[name], None
    if name.startswith("checkpoint:"):
        path = Path(name[len("checkpoint:") :])
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        store, meta = nc.load_checkpoint(path)
        pc = PolicyConfig(**meta["policy"]) if "policy" in meta else PolicyConfig()
        return GreedyPolicy(store, pc), pc
    raise UsageError(f"unknown policy {name!r}; valid: {', '.join(_policy_names())}")


def _episode_job(job):
    policy, roster, env_config, seed, ep = job
    env_seed, rng = episode_seeds(seed, ep)
    return run_episode(policy, roster, env_config, env_seed, rng)


def cmd_eval(args) -> int:
    policy, pc = _resolve_policy(args.policy)
    overrides = {"seed": args.seed, "nurses": args.nurses, "constraints": args.constraints}
    cfg = build_run_config(read_config_file(args.config), overrides)
    cfg, roster = _load_data(cfg, args.data_seed)
    env_config = cfg.env
    if pc is not None and (pc.max_nurses, pc.max_patients) != (env_config.max_nurses, env_config.max_patients):
        raise UsageError("checkpoint slot sizes do not match the environment")
    if args.episodes < 1 or args.workers < 1:
        raise UsageError("--episodes and --workers must be >= 1")

    trace: Optional[list] = [] if args.trace else None
    first_seed, first_rng = episode_seeds(cfg.seed, 0)
    results = [run_episode(policy, roster, env_config, first_seed, first_rng, trace)]
    jobs = [(policy, roster, env_config, cfg.seed, ep) for ep in range(1, args.episodes)]
    if args.workers > 1 and jobs:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results.extend(pool.map(_episode_job, jobs))
    else:
        results.extend(_episode_job(j) for j in jobs)
    if trace is not None:
        write_trace(trace, args.trace)

    metrics = summarize(results)
    doc = {"policy": args.policy, "episodes": args.episodes, "seed": cfg.seed, **{k: metrics[k] for k in METRIC_KEYS}}
    width = max(len(k) for k in METRIC_KEYS)
    print(f"policy {args.policy}  episodes {args.episodes}  seed {cfg.seed}")
    for k in METRIC_KEYS:
        print(f"  {k:<{width}}  {metrics[k]:.4f}")
    print(json.dumps(doc, sort_keys=True))
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_export_curve(args) -> int:
    if args.window < 1:
        raise UsageError("--window must be >= 1")
    epochs, rewards = read_rewards(args.metrics)
    src = Path(args.metrics)
    out = Path(args.out) if args.out else src.with_name(src.stem + "_curve.csv")
    summary = write_curve(out, epochs, rewards, args.window)
    print(json.dumps({"out": str(out), **summary}, sort_keys=True))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "export-curve": cmd_export_curve}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, CurveParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (nc.TrainingError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
