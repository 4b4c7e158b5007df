"""Hot inner loops of the jet-box simulator.

One kernel advances the rigid-ball state through all physics substeps of a
single control step: superposed jet field evaluation, turbulent forcing,
quadratic drag, semi-implicit Euler, and circle/wall collision resolution.

The kernel is plain scalar-loop numpy source, compiled with numba's @njit
when available.  Setting the environment variable ``BOF_NO_NUMBA=1``
selects the uncompiled fallback (identical source, identical arithmetic,
much slower).  ``benchmarks/sim_kernel_bench.py`` compares the two.
"""

from __future__ import annotations

import math
import os

import numpy as np

NUMBA_DISABLED = os.environ.get("BOF_NO_NUMBA", "").strip() not in ("", "0")

try:
    if NUMBA_DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def _advance_control_step(
    pos,  # (n, 2) ball centers, meters; mutated
    vel,  # (n, 2) ball velocities, m/s; mutated
    ou,   # (n, 2) unit-variance turbulence state; mutated
    flows,  # (9,) effective per-valve drive levels in [0, 1]
    normals,  # (n_sub, n, 2) standard normals driving the turbulence
    nozzle_x,  # (9,) nozzle x positions, meters
    gains,  # (9,) per-nozzle strength multipliers
    dt: float,
    n_sub: int,
    width: float,
    height: float,
    radius: float,
    mass: float,
    gravity: float,
    u0_max: float,
    jet_y0: float,
    jet_sigma0: float,
    jet_spread: float,
    jet_entrain: float,
    drag_coeff: float,
    restitution: float,
    rest_speed: float,
    ou_theta: float,
    ou_sigma_rel: float,
) -> int:
    """Run n_sub physics substeps in place.

    Returns 0 on success, or 1 + the substep index that first produced a
    non-finite value.
    """
    n = pos.shape[0]
    ou_keep = 1.0 - ou_theta * dt
    ou_kick = math.sqrt(2.0 * ou_theta * dt)
    two_r = 2.0 * radius
    inv_mass_drag = drag_coeff / mass

    for s in range(n_sub):
        # turbulence state (unit stationary variance OU process)
        for i in range(n):
            ou[i, 0] = ou[i, 0] * ou_keep + ou_kick * normals[s, i, 0]
            ou[i, 1] = ou[i, 1] * ou_keep + ou_kick * normals[s, i, 1]

        # forces + semi-implicit Euler
        for i in range(n):
            x = pos[i, 0]
            y = pos[i, 1]
            sig = jet_sigma0 + jet_spread * y
            decay = jet_y0 / (y + jet_y0)
            ux = 0.0
            uy = 0.0
            for j in range(9):
                fj = flows[j] * gains[j]
                if fj <= 0.0:
                    continue
                dx = x - nozzle_x[j]
                u_yj = u0_max * fj * decay * math.exp(-(dx * dx) / (2.0 * sig * sig))
                uy += u_yj
                ux += u_yj * dx / (y + jet_y0) * jet_entrain
            speed = math.sqrt(ux * ux + uy * uy)
            tux = ux + ou_sigma_rel * speed * ou[i, 0]
            tuy = uy + ou_sigma_rel * speed * ou[i, 1]
            relx = tux - vel[i, 0]
            rely = tuy - vel[i, 1]
            reln = math.sqrt(relx * relx + rely * rely)
            # quadratic drag dv/dt = k|u-v|(u-v) integrated exactly over the
            # substep (explicit Euler overshoots: k|u-v|dt can exceed 1 here)
            factor = inv_mass_drag * reln * dt
            scale = factor / (1.0 + factor)
            vel[i, 0] += scale * relx
            vel[i, 1] += scale * rely - gravity * dt
            pos[i, 0] += vel[i, 0] * dt
            pos[i, 1] += vel[i, 1] * dt

        # collisions: walls + pairwise circles, iterated to a separated state
        for _ in range(50):
            overlap_left = 0.0
            for i in range(n):
                if pos[i, 0] < radius:
                    pos[i, 0] = radius
                    if vel[i, 0] < 0.0:
                        vn = -vel[i, 0]
                        vel[i, 0] = restitution * vn if vn > rest_speed else 0.0
                elif pos[i, 0] > width - radius:
                    pos[i, 0] = width - radius
                    if vel[i, 0] > 0.0:
                        vn = vel[i, 0]
                        vel[i, 0] = -restitution * vn if vn > rest_speed else 0.0
                if pos[i, 1] < radius:
                    pos[i, 1] = radius
                    if vel[i, 1] < 0.0:
                        vn = -vel[i, 1]
                        vel[i, 1] = restitution * vn if vn > rest_speed else 0.0
                elif pos[i, 1] > height - radius:
                    pos[i, 1] = height - radius
                    if vel[i, 1] > 0.0:
                        vn = vel[i, 1]
                        vel[i, 1] = -restitution * vn if vn > rest_speed else 0.0
            for i in range(n):
                for j in range(i + 1, n):
                    dx = pos[j, 0] - pos[i, 0]
                    dy = pos[j, 1] - pos[i, 1]
                    dist = math.sqrt(dx * dx + dy * dy)
                    if dist >= two_r:
                        continue
                    if dist < 1e-12:
                        nx, ny = 1.0, 0.0
                        dist = 1e-12
                    else:
                        nx, ny = dx / dist, dy / dist
                    push = 0.5 * (two_r - dist)
                    pos[i, 0] -= push * nx
                    pos[i, 1] -= push * ny
                    pos[j, 0] += push * nx
                    pos[j, 1] += push * ny
                    if two_r - dist > overlap_left:
                        overlap_left = two_r - dist
                    # relative velocity along the contact normal (i -> j)
                    rvn = (vel[j, 0] - vel[i, 0]) * nx + (vel[j, 1] - vel[i, 1]) * ny
                    if rvn < 0.0:
                        e = restitution if -rvn > rest_speed else 0.0
                        imp = -(1.0 + e) * rvn * 0.5
                        vel[i, 0] -= imp * nx
                        vel[i, 1] -= imp * ny
                        vel[j, 0] += imp * nx
                        vel[j, 1] += imp * ny
            if overlap_left <= 1e-12:
                break

        for i in range(n):
            ok = (
                math.isfinite(pos[i, 0])
                and math.isfinite(pos[i, 1])
                and math.isfinite(vel[i, 0])
                and math.isfinite(vel[i, 1])
            )
            if not ok:
                return s + 1
    return 0


_advance_py = _advance_control_step

if HAVE_NUMBA:
    _advance_numba = njit(cache=True)(_advance_control_step)
else:
    _advance_numba = None


def get_advance_kernel(use_numba: bool | None = None):
    """Select the jitted or plain kernel; None means 'numba if available'."""
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        if _advance_numba is None:
            raise RuntimeError("numba kernel requested but numba is unavailable/disabled")
        return _advance_numba
    return _advance_py


advance_control_step = get_advance_kernel(HAVE_NUMBA if not NUMBA_DISABLED else False)
