"""Command line interface: train, eval, relabel, train-offline, analyze.

Exit code 0 on success; on failure a line ``error [<category>] <message>``
goes to stderr and the exit code is 1 (2 for usage errors from argparse).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import analysis
from .errors import BofError, ConfigError
from .harness import (
    ExperimentConfig,
    evaluate_policy,
    load_config,
    load_policy_checkpoint,
    run_offline,
    run_online,
)
from .replay import LogWriter, read_log, relabel, write_log
from .tasks import TASK_IDS, TASK_NAMES, make_task, task_reward


def _base_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    updates = {}
    for field, attr in (("task", "task"), ("total_steps", "steps"),
                        ("seed", "seed"), ("out_dir", "out"),
                        ("data_path", "data")):
        v = getattr(args, attr, None)
        if v is not None:
            updates[field] = v
    return dataclasses.replace(cfg, **updates)


def cmd_train(args) -> int:
    cfg = _base_config(args)
    cfg = dataclasses.replace(cfg, algorithm="mpo")
    if args.fixed_beta is not None:
        cfg = dataclasses.replace(
            cfg, mpo=dataclasses.replace(cfg.mpo, fixed_beta=args.fixed_beta))
    if args.avg_q:
        cfg = dataclasses.replace(cfg, mpo=dataclasses.replace(cfg.mpo, avg_q=True))
    out = run_online(cfg)
    last = out["eval_returns"][-1] if out["eval_returns"] else (0, float("nan"))
    print(f"trained {out['env_steps']} env steps "
          f"({out['episodes']} episodes); final eval return {last[1]:.4f}")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def cmd_train_offline(args) -> int:
    cfg = _base_config(args)
    cfg = dataclasses.replace(cfg, algorithm="bc" if args.bc else "crr")
    out = run_offline(cfg, resume=args.resume)
    if out["eval_returns"]:
        print(f"final eval return {out['eval_returns'][-1][1]:.4f}")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _base_config(args)
    policy = None
    if not args.random:
        if not args.ckpt:
            raise ConfigError("eval needs --ckpt or --random")
        policy = load_policy_checkpoint(args.ckpt)
    writer = None
    if args.log_out:
        task = make_task(cfg.task, cfg.sim)
        writer = LogWriter(args.log_out, task.n_balls, cfg.sim.history_len,
                           task.task_id, task.obs_dim(cfg.sim.history_len))
    try:
        rets = evaluate_policy(cfg, policy, args.episodes, f"cli-eval-{cfg.seed}",
                               log_writer=writer)
    finally:
        if writer is not None:
            writer.close()
    print(f"episodes {args.episodes}  mean return {rets.mean():.4f}  "
          f"min {rets.min():.4f}  max {rets.max():.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval_stats.csv"), "w") as f:
            f.write("episode,mean_episode_return\n")
            for i, r in enumerate(rets):
                f.write(f"{i},{r:.10g}\n")
    return 0


def cmd_relabel(args) -> int:
    log = read_log(args.inp)
    if args.task not in TASK_IDS:
        raise ConfigError(f"unknown task {args.task!r}")
    spec = make_task(args.task)
    if spec.goal_conditioned and log.task_id != TASK_IDS["reach"]:
        raise ConfigError("cannot relabel to the goal-conditioned task: "
                          "source log carries no goals")
    if spec.n_balls > log.n_balls:
        raise ConfigError(
            f"task {args.task!r} needs {spec.n_balls} balls; log has {log.n_balls}")
    new_log = relabel(log, lambda pix: task_reward(spec, pix),
                      task_id=spec.task_id)
    write_log(args.out, new_log)
    print(f"relabeled {log.n_steps} steps "
          f"{TASK_NAMES[log.task_id]!r} -> {args.task!r} into {args.out}")
    return 0


def cmd_analyze(args) -> int:
    if args.mode == "visits":
        log = read_log(args.inp[0])
        h = analysis.visit_heatmap(log, args.ball, args.episodes,
                                   bin_px=args.bins or analysis.VISIT_BIN_PX)
        analysis.save_heatmap(h, args.out, f"visits_{args.ball}")
        print(f"visit heatmap over last {args.episodes} episodes "
              f"({int(h.n_samples)} samples) -> {args.out}")
    elif args.mode == "reach-error":
        log = read_log(args.inp[0])
        h = analysis.reach_error_heatmap(
            log, bin_px=args.bins or analysis.ERROR_BIN_PX)
        analysis.save_heatmap(h, args.out, "reach_error_cumulative")
        analysis.save_heatmap(analysis.count_normalized(h), args.out,
                              "reach_error_per_episode")
        print(f"reach-error heatmaps from {int(h.counts.sum())} episodes -> {args.out}")
    elif args.mode == "curve":
        curve = analysis.reward_curve(args.inp, window=args.window)
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "reward_curve.csv")
        with open(path, "w") as f:
            f.write("steps,mean,low,high\n")
            for i in range(len(curve["steps"])):
                f.write(f"{curve['steps'][i]:.10g},{curve['mean'][i]:.10g},"
                        f"{curve['low'][i]:.10g},{curve['high'][i]:.10g}\n")
        print(f"smoothed curve ({len(args.inp)} runs) -> {path}")
    elif args.mode == "frames":
        log = read_log(args.inp[0])
        paths = analysis.render_frames(log, args.episode, args.out,
                                       stride=args.stride)
        print(f"{len(paths)} frames -> {args.out}")
    else:
        raise ConfigError(f"unknown analyze mode {args.mode!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bof",
        description="Jet-box simulator + online MPO / offline CRR learning stack",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="online training on the simulator")
    t.add_argument("--task", choices=sorted(TASK_IDS), default=None)
    t.add_argument("--steps", type=int, default=None, help="environment steps")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--config", default=None, help="key = value config file")
    t.add_argument("--out", default=None, help="artifact directory")
    t.add_argument("--fixed-beta", type=float, default=None,
                   help="freeze the E-step temperature instead of the dual")
    t.add_argument("--avg-q", action="store_true",
                   help="average sampled next-action Q values in the TD target")
    t.set_defaults(fn=cmd_train)

    o = sub.add_parser("train-offline", help="offline training from a log")
    o.add_argument("--data", required=True, help="episode log (BOFL)")
    o.add_argument("--task", choices=sorted(TASK_IDS), default=None)
    o.add_argument("--steps", type=int, default=None, help="learner steps")
    o.add_argument("--seed", type=int, default=None)
    o.add_argument("--config", default=None)
    o.add_argument("--out", default=None)
    o.add_argument("--bc", action="store_true", help="pure behavior cloning")
    o.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in --out")
    o.set_defaults(fn=cmd_train_offline)

    e = sub.add_parser("eval", help="run evaluation episodes")
    e.add_argument("--ckpt", default=None, help="policy checkpoint (BOFP)")
    e.add_argument("--random", action="store_true", help="uniform-random policy")
    e.add_argument("--task", choices=sorted(TASK_IDS), default=None)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--log-out", default=None, help="write episodes to a BOFL log")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("relabel", help="recompute log rewards for a new task")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--task", required=True, choices=sorted(TASK_IDS))
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_relabel)

    a = sub.add_parser("analyze", help="heatmaps, curves, filmstrips")
    a.add_argument("mode", choices=["visits", "reach-error", "curve", "frames"])
    a.add_argument("--in", dest="inp", nargs="+", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--ball", default="orange")
    a.add_argument("--episodes", type=int, default=100, help="last K episodes")
    a.add_argument("--bins", type=int, default=None, help="bin size in pixels")
    a.add_argument("--window", type=int, default=10, help="curve smoothing")
    a.add_argument("--episode", type=int, default=0, help="episode for frames")
    a.add_argument("--stride", type=int, default=100, help="frame stride")
    a.set_defaults(fn=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BofError as e:
        print(f"error [{e.category}] {e.message}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error [io-error] {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
