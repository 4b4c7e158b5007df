#!/usr/bin/env python3
"""Produce the training artifacts the acceptance suite checks.

Each piece lands in runs/acceptance/<piece>/ with a .complete marker, so
re-running skips finished work.  Pieces:

  hover_s0 hover_s1 hover_s2        online hover runs, 300k env steps
  rearrange_s0 rearrange_s1 rearrange_s2
  reach_s0                          goal-conditioned run, 300k env steps
  hover_eval_s{0,1,2}               100 mean-mode eval episodes + logs
  crr8                              relabel -> offline CRR -> 100 eval episodes
  reach_eval                        200 eval episodes with goals + logs
  det_a det_b                       small determinism runs (criterion 3)

Run everything:   python3 scripts/run_acceptance_runs.py --piece all
(sequential; independent pieces can be run from parallel shells).
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bof.harness import (  # noqa: E402
    ExperimentConfig,
    evaluate_policy,
    load_policy_checkpoint,
    run_offline,
    run_online,
)
from bof.replay import LogWriter, read_log, relabel, write_log  # noqa: E402
from bof.sim import SimConfig  # noqa: E402
from bof.tasks import make_task, task_reward  # noqa: E402

ROOT = os.path.join(os.path.dirname(__file__), "..", "runs", "acceptance")
TRAIN_STEPS = 300_000
CRR_STEPS = 50_000
EVAL_EPISODES = 100
C8_SEED = 7000  # shared eval seeds so both policies face identical episodes


def piece_dir(name):
    return os.path.join(ROOT, name)


def done(name):
    return os.path.exists(os.path.join(piece_dir(name), ".complete"))


def mark(name):
    with open(os.path.join(piece_dir(name), ".complete"), "w") as f:
        f.write("ok\n")


def online_piece(name, task, seed, steps=TRAIN_STEPS):
    if done(name):
        return
    cfg = ExperimentConfig(task=task, algorithm="mpo", total_steps=steps,
                           seed=seed, out_dir=piece_dir(name))
    run_online(cfg)
    mark(name)


def eval_piece(name, policy_path, task, episodes, eval_seed, label):
    if done(name):
        return
    os.makedirs(piece_dir(name), exist_ok=True)
    cfg = ExperimentConfig(task=task, seed=eval_seed, out_dir=piece_dir(name))
    policy = load_policy_checkpoint(policy_path)
    spec = make_task(task, cfg.sim)
    writer = LogWriter(os.path.join(piece_dir(name), "eval_log.bofl"),
                       spec.n_balls, cfg.sim.history_len, spec.task_id,
                       spec.obs_dim(cfg.sim.history_len))
    try:
        rets = evaluate_policy(cfg, policy, episodes, label, log_writer=writer)
    finally:
        writer.close()
    np.savetxt(os.path.join(piece_dir(name), "returns.csv"), rets,
               header="mean_episode_return", comments="", fmt="%.10g")
    mark(name)


def mean_abs_center_offset(log_path) -> float:
    log = read_log(log_path)
    return float(np.abs(log.pixels[:, 0, 0].astype(np.float64) - 350.0).mean())


def crr8_piece():
    """Relabeled offline training against the most off-center hover run."""
    if done("crr8"):
        return
    for k in range(3):
        if not done(f"hover_s{k}") or not done(f"hover_eval_s{k}"):
            raise SystemExit("crr8 needs hover_s{0,1,2} and hover_eval_s{0,1,2}")
    os.makedirs(piece_dir("crr8"), exist_ok=True)
    offsets = [mean_abs_center_offset(
        os.path.join(piece_dir(f"hover_eval_s{k}"), "eval_log.bofl"))
        for k in range(3)]
    src = int(np.argmax(offsets))
    with open(os.path.join(piece_dir("crr8"), "source_seed.txt"), "w") as f:
        f.write(f"{src}\n")
        f.write(",".join(f"{o:.6f}" for o in offsets) + "\n")

    center = make_task("hover-center")
    log = read_log(os.path.join(piece_dir(f"hover_s{src}"), "train_log.bofl"))
    relabeled_path = os.path.join(piece_dir("crr8"), "relabeled_center.bofl")
    write_log(relabeled_path,
              relabel(log, lambda pix: task_reward(center, pix),
                      task_id=center.task_id))

    cfg = ExperimentConfig(task="hover-center", algorithm="crr",
                           total_steps=CRR_STEPS, seed=0,
                           out_dir=os.path.join(piece_dir("crr8"), "train"),
                           data_path=relabeled_path)
    run_offline(cfg)
    eval_piece("crr8_eval",
               os.path.join(piece_dir("crr8"), "train", "policy_final.bofp"),
               "hover-center", EVAL_EPISODES, C8_SEED, "c8-eval")
    mark("crr8")


def det_piece(name):
    """Criterion 3: full 50-episode hover run at a reduced learner size."""
    if done(name):
        return
    mpo = dataclasses.replace(ExperimentConfig().mpo, hidden=(64, 64),
                              batch_size=64, n_action_samples=8)
    cfg = ExperimentConfig(task="hover", algorithm="mpo", total_steps=50_000,
                           seed=11, out_dir=piece_dir(name), mpo=mpo)
    run_online(cfg)
    mark(name)


PIECES = {}
for _k in range(3):
    PIECES[f"hover_s{_k}"] = (lambda k=_k: online_piece(f"hover_s{k}", "hover", k))
    PIECES[f"rearrange_s{_k}"] = (
        lambda k=_k: online_piece(f"rearrange_s{k}", "rearrange", k))
    PIECES[f"hover_eval_s{_k}"] = (lambda k=_k: eval_piece(
        f"hover_eval_s{k}",
        os.path.join(piece_dir(f"hover_s{k}"), "policy_final.bofp"),
        "hover-center", EVAL_EPISODES, C8_SEED, "c8-eval"))
PIECES["reach_s0"] = lambda: online_piece("reach_s0", "reach", 0)
PIECES["reach_eval"] = lambda: eval_piece(
    "reach_eval", os.path.join(piece_dir("reach_s0"), "policy_final.bofp"),
    "reach", 200, 7100, "c9-eval")
PIECES["crr8"] = crr8_piece
PIECES["det_a"] = lambda: det_piece("det_a")
PIECES["det_b"] = lambda: det_piece("det_b")

ORDER = [
    "hover_s0", "hover_s1", "hover_s2",
    "rearrange_s0", "rearrange_s1", "rearrange_s2",
    "reach_s0",
    "hover_eval_s0", "hover_eval_s1", "hover_eval_s2",
    "crr8", "reach_eval", "det_a", "det_b",
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--piece", required=True,
                    help="piece name or 'all' (see ORDER in this file)")
    args = ap.parse_args()
    os.makedirs(ROOT, exist_ok=True)
    names = ORDER if args.piece == "all" else [args.piece]
    for name in names:
        if name not in PIECES:
            raise SystemExit(f"unknown piece {name!r}")
        print(f"[acceptance-runs] {name} ...", flush=True)
        PIECES[name]()
        print(f"[acceptance-runs] {name} done", flush=True)


if __name__ == "__main__":
    main()
