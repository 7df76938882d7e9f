"""Command-line entry point: ``d3rq train | eval | verify``.

Exit codes: 0 on success, 1 when a run fails, 2 for usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import netcore, verify
from .agent import policy_from_tensors
from .config import Config, ConfigError, load_config, loads_config, parse_overrides
from .training import (build_agent, build_env, eval_envs, evaluate, metrics_csv, networks_for,
                       schedule_for, train)

log = logging.getLogger("d3rq")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
NAMED_FLAGS = ("task", "seed", "total_frames", "mode", "workers")


class UsageError(Exception):
    pass


def cmd_train(config: Config, out_dir=None):
    """Train with ``config``; returns the metric rows. Uses the actor-learner runtime
    when more than one worker or lockstep scheduling is requested."""
    if config.workers > 1 or config.lockstep:
        from .distrib import run_distributed
        report = run_distributed(config, out_dir)
        if not report.audit.clean:
            raise RuntimeError(f"transition audit failed: {report.audit}")
        return report.rows
    return train(config, out_dir)


def _policy_and_config(checkpoint, config: Config | None):
    if checkpoint is None:
        config = config or Config()
        env = build_env(config)
        return build_agent(config, env).policy(), config
    tensors = netcore.load_checkpoint(checkpoint)
    saved = loads_config(bytes(tensors.pop("meta/config")).decode("utf-8")) if "meta/config" in tensors else None
    config = config or saved
    if config is None:
        raise ValueError(f"{checkpoint} carries no config; pass one explicitly")
    env = build_env(config)
    nets = networks_for(config, env)
    policy = policy_from_tensors(nets, tensors, schedule_for(config))
    expected = nets.actor.init(0, np.dtype(config.dtype)).shapes()
    if policy.actor.shapes() != expected:
        raise ValueError(f"checkpoint actor shapes {policy.actor.shapes()} do not match "
                         f"task {config.task!r} ({expected})")
    if nets.encoder is not None and policy.encoder.shapes() != nets.encoder.init(0).shapes():
        raise ValueError("checkpoint encoder does not match the task observations")
    return policy, config


def cmd_eval(checkpoint=None, task=None, episodes=10, seed=None, config: Config | None = None):
    """Deterministic returns of a saved (or, without a checkpoint, freshly initialised) actor.

    Returns ``(mean, std, returns)``.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    policy, config = _policy_and_config(checkpoint, config)
    changes = {}
    if task is not None and task != config.task:
        changes["task"] = task
    if seed is not None:
        changes["seed"] = seed
    config = config.replace(**changes)
    returns = evaluate(policy, eval_envs(config, episodes))
    return float(np.mean(returns)), float(np.std(returns)), returns


def cmd_verify(suite: str, out=None):
    """Run an invariant suite; returns (all_passed, results)."""
    out = out or sys.stdout
    results = verify.run_suite(suite)
    for r in results:
        print(r.line(), file=out)
    passed = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed", file=out)
    return passed, results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="d3rq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--task")
        p.add_argument("--seed")
        p.add_argument("--total-frames", dest="total_frames")
        p.add_argument("--mode", choices=("categorical", "scalar"))
        p.add_argument("--workers")

    train_p = sub.add_parser("train", help="train an agent; extra --key=value flags override config")
    run_flags(train_p)
    train_p.add_argument("--out", type=Path, default=None, help="output directory")

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint (or an untrained actor)")
    eval_p.add_argument("checkpoint", nargs="?", type=Path)
    run_flags(eval_p)
    eval_p.add_argument("--episodes", type=int, default=10)

    verify_p = sub.add_parser("verify", help="run an invariant suite")
    verify_p.add_argument("suite", help="one of: " + ", ".join(verify.SUITES + ("all",)))
    return parser


def _config_from(args, extra) -> Config:
    overrides = {k: getattr(args, k) for k in NAMED_FLAGS if getattr(args, k, None) is not None}
    overrides.update(parse_overrides(extra))
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            if extra:
                raise UsageError(f"unexpected arguments {extra}")
            if args.suite not in verify.SUITES + ("all",):
                raise UsageError(f"unknown suite {args.suite!r}; choose from "
                                 + ", ".join(verify.SUITES + ("all",)))
            passed, _ = cmd_verify(args.suite)
            return EXIT_OK if passed else EXIT_FAILURE
        config = _config_from(args, extra)
        if args.command == "train":
            out = args.out or Path("runs") / f"{config.task}-{config.mode}-seed{config.seed}"
            rows = cmd_train(config, out)
            print(f"wrote {out / 'metrics.csv'} ({len(rows)} rows)")
            if rows:
                print(metrics_csv(rows[-1:]).splitlines()[-1])
            return EXIT_OK
        if args.command == "eval":
            explicit = config if (args.config or extra or any(
                getattr(args, k) is not None for k in NAMED_FLAGS)) else None
            if args.checkpoint is not None and explicit is not None:
                # flags refine the config stored with the checkpoint
                _, saved = _policy_and_config(args.checkpoint, None)
                explicit = load_config(args.config, {**_dict(saved),
                                                     **_named(args), **parse_overrides(extra)})
            mean, std, returns = cmd_eval(args.checkpoint, episodes=args.episodes,
                                          config=explicit if args.checkpoint is not None else config)
            for i, r in enumerate(returns):
                print(f"episode {i} return {r:.6f}")
            print(f"mean {mean:.6f} std {std:.6f}")
            return EXIT_OK
    except (ConfigError, UsageError) as exc:
        print(f"d3rq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("d3rq: interrupted", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"d3rq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_USAGE


def _dict(config: Config) -> dict:
    from dataclasses import asdict
    return asdict(config)


def _named(args) -> dict:
    return {k: getattr(args, k) for k in NAMED_FLAGS if getattr(args, k, None) is not None}


if __name__ == "__main__":
    sys.exit(main())
