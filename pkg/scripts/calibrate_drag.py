#!/usr/bin/env python3
"""One-time calibration of SimConfig.drag_coeff (result is frozen there).

Bisects the quadratic-drag constant until a single noiseless ball centered
over the middle nozzle, with that valve fully open and the others closed,
settles at the target hover height.  The target leaves enough headroom
above mid-box that a well-trained height-maximizing policy can earn mean
rewards above 0.7.
"""

import argparse
import dataclasses
import sys

import numpy as np

sys.path.insert(0, "src")

from bof.sim import BoxSim, SimConfig


def hover_height(drag_coeff: float, seconds: float = 60.0) -> float:
    cfg = dataclasses.replace(
        SimConfig(),
        n_balls=1,
        drag_coeff=drag_coeff,
        ou_sigma_rel=0.0,
        episode_len=10 ** 9,
    )
    sim = BoxSim(cfg)
    state = sim.reset(seed=0)
    # center on the middle nozzle, start mid-box, kill reset velocity
    state.pos[0] = (cfg.nozzle_x[4], 0.40)
    state.vel[0] = 0.0
    state.ou[0] = 0.0
    action = np.zeros(9)
    action[4] = 1.0
    steps = int(seconds * cfg.control_rate_hz)
    tail_from = int(0.75 * steps)
    heights = []
    for t in range(steps):
        sim.step(state, action)
        if t >= tail_from:
            heights.append(state.pos[0, 1])
    return float(np.mean(heights))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--target", type=float, default=0.64, help="hover height, m")
    args = ap.parse_args()

    lo, hi = 0.05, 5.0  # stronger drag -> higher hover for a fixed jet
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        h = hover_height(mid)
        if h < args.target:
            lo = mid
        else:
            hi = mid
    cd = 0.5 * (lo + hi)
    print(f"drag_coeff = {cd:.6f}  (hover height {hover_height(cd):.4f} m, "
          f"target {args.target} m)")


if __name__ == "__main__":
    main()
