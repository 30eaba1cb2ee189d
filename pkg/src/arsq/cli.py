"""Command line entry point: ``arsq train|eval|case-study-toy|case-study-landscape|gen-demos``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .autodiff import DivergenceError
from .config import ConfigError, TrainConfig, load_config
from .envs import ENV_NAMES, POLICY_KINDS, generate_demos, make_env
from .replay import write_dataset
from .studies import case_study_landscape, case_study_toy, summarize
from .trainer import evaluate, train

log = logging.getLogger("arsq")


def _base_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _base_config(args)
    if args.env:
        cfg = cfg.replace(env=args.env)
    if args.steps is not None:
        cfg = cfg.replace(total_env_steps=args.steps)
    if args.offline_data:
        cfg = cfg.replace(offline_data=args.offline_data)
    trainer = train(cfg, args.out)
    last = trainer.rows[-1] if trainer.rows else None
    if last is not None:
        print(f"step {last.step} return {last.episode_return_mean:.4f} success {last.success_rate:.2f}")
    print(f"wrote {Path(args.out) / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _base_config(args)
    checkpoint = Path(args.checkpoint or Path(args.out) / "model.ckpt")
    if not checkpoint.exists():
        raise ConfigError(f"checkpoint {checkpoint} not found")
    if not args.config and (checkpoint.parent / "config.txt").exists():
        cfg = load_config(checkpoint.parent / "config.txt")
    res = evaluate(checkpoint, cfg, args.episodes, args.seed or 0, args.env)
    print(f"return_mean {res.return_mean:.6f} return_std {res.return_std:.6f} success_rate {res.success_rate:.4f}")
    return 0


def cmd_toy(args) -> int:
    for v in case_study_toy(args.out, args.seed or 0):
        print(f"{v.method}: cell {v.cell} optimal {v.optimal_cell} -> {'optimal' if v.is_optimal else 'not optimal'}")
    return 0


def cmd_landscape(args) -> int:
    seeds = tuple(args.seeds) if args.seeds else ((args.seed,) if args.seed is not None else (0, 1, 2))
    results = case_study_landscape(args.out, seeds, args.bins, args.levels, steps=args.fit_steps)
    for method, mae in summarize(results).items():
        print(f"{method}: mean mae {mae:.5f}")
    return 0


def cmd_gen_demos(args) -> int:
    env = make_env(args.env)
    data = generate_demos(env, args.policy, args.episodes, args.seed or 0)
    out = Path(args.out)
    path = out if out.suffix else out / f"{args.env}_{args.policy}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(path, data)
    print(f"wrote {len(data)} transitions from {data.num_episodes} episodes to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="arsq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="run online training with optional demonstrations")
    p.add_argument("--offline-data", help="JSON-lines demonstration file")
    p.add_argument("--env", choices=ENV_NAMES)
    p.add_argument("--steps", type=int, help="total environment steps (0 = offline only)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", help="defaults to OUT/model.ckpt")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--env", choices=ENV_NAMES)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("case-study-toy", parents=[common], help="two-bin motivating example")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("case-study-landscape", parents=[common], help="Q-landscape error comparison")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--bins", type=int, default=7, help="bins per level")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--fit-steps", type=int, default=1000)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("gen-demos", parents=[common], help="write scripted demonstrations as JSON lines")
    p.add_argument("--env", choices=ENV_NAMES, default="point_mass")
    p.add_argument("--policy", choices=POLICY_KINDS, default="medium")
    p.add_argument("--episodes", type=int, default=50)
    p.set_defaults(func=cmd_gen_demos)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
