"""Command-line front end.

Exit codes: 0 on success, 1 when a verification check fails, 2 for usage
errors (bad arguments, malformed configs, unreadable files).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import ConfigError, FanConfig, load_config
from .envs import (DatasetFormatError, generate_dataset, make_env, parse_mix,
                   read_dataset, write_dataset)
from .nets import CheckpointFormatError
from .trainer import (fan_train, evaluate, finetune_online, load_nets,
                      run_ablation, save_nets, write_metrics_csv)

USAGE_ERROR = 2
CHECK_FAILURE = 1


def _load_cfg(path: str | None) -> FanConfig:
    if path is None:
        return FanConfig()
    return load_config(path)


def _cmd_gen_data(args) -> int:
    env = make_env(args.env)
    mix = parse_mix(args.mix)
    ds = generate_dataset(env, mix, args.transitions, args.seed,
                          noise_std=args.noise)
    write_dataset(args.out, ds)
    print(f"wrote {ds.count} transitions to {args.out} "
          f"(env={args.env}, mix={args.mix}, seed={args.seed})")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    ds = read_dataset(args.data)
    nets, metrics = fan_train(ds, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_nets(out / "checkpoint", nets, cfg)
    write_metrics_csv(out / "metrics.csv", metrics.rows)
    last = metrics.rows[-1]
    print(f"finished {last.step} steps; final eval return {last.eval_return:.2f}, "
          f"success rate {last.eval_success_rate:.2f}")
    print(f"checkpoint and metrics under {out}")
    return 0


def _cmd_eval(args) -> int:
    nets, meta = load_nets(args.checkpoint)
    env = make_env(args.env if args.env is not None else meta["env"])
    ret, succ = evaluate(nets.pi, env, args.episodes,
                         rngmod.stream(args.seed, "cli-eval"))
    print(f"episodes={args.episodes} mean_return={ret:.3f} success_rate={succ:.3f}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _load_cfg(args.config)
    nets, meta = load_nets(args.checkpoint)
    ds = read_dataset(args.data)
    env = make_env(cfg.env)
    nets, metrics = finetune_online(nets, ds, env, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_nets(out / "checkpoint", nets, cfg)
    write_metrics_csv(out / "metrics.csv", metrics.rows)
    last = metrics.rows[-1]
    print(f"finished {last.step} online updates; final eval return "
          f"{last.eval_return:.2f}, success rate {last.eval_success_rate:.2f}")
    return 0


def _verify_records(suite: str, seed: int) -> list:
    from .verify import (TabularNoiseMDP, verify_contraction,
                         verify_expectile_limit, verify_anchoring_bound,
                         CheckRecord, finite_difference_grads,
                         max_relative_grad_error)

    rng = rngmod.stream(seed, f"verify-{suite}")
    if suite == "contraction":
        records = []
        for trial in range(5):
            n_s, n_a, n_m = 6, 4, 3
            mdp = TabularNoiseMDP(
                rewards=rng.uniform(-1.0, 1.0, size=(n_s, n_a)),
                next_state=rng.integers(0, n_s, size=(n_s, n_a)),
                policy=rng.integers(0, n_a, size=(n_s, n_m)),
                gamma=0.9,
            )
            records.append(verify_contraction(mdp, n_pairs=20, rng=rng))
        return records
    if suite == "expectile":
        records = []
        for trial in range(5):
            xs = rng.normal(0.0, 2.0, size=200)
            kappas = np.array([0.5, 0.7, 0.9, 0.99, 0.999, 0.9999])
            records.append(verify_expectile_limit(xs, kappas))
        return records
    if suite == "anchoring":
        from .envs import make_env, generate_dataset
        from .trainer import fan_train
        from dataclasses import replace

        env = make_env("twin_goal_1d")
        ds = generate_dataset(env, {"goal_a": 0.65, "goal_b": 0.35},
                              20_000, seed=seed)
        cfg = replace(FanConfig(), env="twin_goal_1d", total_steps=5_000,
                      eval_every=0, eval_episodes=0, alpha1=10.0, seed=seed)
        nets, _ = fan_train(ds, cfg)
        states = ds.states[rng.integers(0, ds.count, size=16)].astype(np.float64)
        return [verify_anchoring_bound(nets.pi, nets.v, states, n_noise=256,
                                       rng=rng)]
    if suite == "grad":
        from .nets import init_dense, forward, backward

        records = []
        for trial in range(10):
            sizes = [int(rng.integers(2, 9)) for _ in range(3)]
            net = init_dense(sizes, rng)
            x = rng.standard_normal((4, sizes[0]))
            coef = rng.standard_normal((4, sizes[-1]))

            def loss_of(n):
                y = forward(n, x)
                return float(np.sum(coef * y) + 0.5 * np.sum(y * y))

            y, cache = forward(net, x, want_cache=True)
            bundle, _ = backward(net, cache, coef + y)
            fd_w, fd_b = finite_difference_grads(loss_of, net)
            err = max_relative_grad_error(bundle.dweights, bundle.dbiases,
                                          fd_w, fd_b)
            records.append(CheckRecord(f"grad_check_{trial}", err, 1e-4,
                                       err <= 1e-4, {"sizes": sizes}))
        return records
    raise ConfigError(f"unknown verify suite {suite!r}")


def _cmd_verify(args) -> int:
    records = _verify_records(args.suite, args.seed)
    all_passed = True
    for rec in records:
        print(json.dumps({
            "check": rec.name,
            "observed": rec.observed,
            "bound": rec.bound,
            "passed": rec.passed,
            **rec.details,
        }))
        all_passed = all_passed and rec.passed
    return 0 if all_passed else CHECK_FAILURE


def _cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    ds = read_dataset(args.data)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("need at least one seed")
    table = run_ablation(args.suite, cfg, seeds, ds)
    for row in table:
        print(json.dumps(row))
    return 0


def _cmd_flops(args) -> int:
    from .flops import flop_estimate

    cfg = _load_cfg(args.config)
    env = make_env(cfg.env)
    report = flop_estimate(cfg, env.state_dim, env.action_dim)
    print(json.dumps(report.as_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fanrl",
        description="Flow-anchored offline RL on toy control tasks, with "
                    "verification checks for its guarantees.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="roll out scripted behaviors into a dataset")
    p.add_argument("--env", required=True)
    p.add_argument("--mix", default="expert:1.0",
                   help="behavior mix, e.g. expert:0.7,trap:0.3")
    p.add_argument("--transitions", type=int, default=50_000)
    p.add_argument("--noise", type=float, default=0.05,
                   help="behavior action noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="offline training run")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpointed policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default=None,
                   help="defaults to the env recorded in the checkpoint")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("finetune", help="online fine-tuning from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="offline dataset seeding the buffer")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("verify", help="run an oracle-backed check suite")
    p.add_argument("--suite", required=True,
                   choices=("contraction", "expectile", "anchoring", "grad"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("ablate", help="sweep one knob across seeds")
    p.add_argument("--suite", required=True,
                   choices=("kappa", "value_max", "noise_samples", "variant"))
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("flops", help="closed-form FLOP report for a config")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_flops)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, CheckpointFormatError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
