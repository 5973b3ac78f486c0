"""Maximum attainable closed-loop bandwidth under physical limits.

For sinusoidal tracking q = Ȳ cos(ω_c t) with Ȳ = Y/√2, the required
velocity, torque, and power over one period are closed-form signals of
ω_c. The largest ω_c whose period maxima respect the selected limits is
found by a scalar search: coarse log grid, then bisection on the last
feasible bracket. Exact mode enforces the power budget directly; the
approximate mode replaces it with the fixed torque bound P_max/q̇_max.

Instantaneous power is evaluated as u(t)·q̇(t) rather than through its
expanded double-angle form, so the Coulomb term always enters with the
sign of dissipated (motor-supplied) power.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from powersat.powerlim import psat_approx_limit

__all__ = [
    "BandwidthMode",
    "BandwidthProblem",
    "period_maxima",
    "feasible",
    "max_bandwidth",
    "ratio_sweep",
    "kink_points",
    "ratio_sweep_to_csv",
]

GRID_POINTS = 200
GRID_LO, GRID_HI = 1e-2, 1e4


class BandwidthMode(enum.Enum):
    EXACT_POWER = "exact_power"      # speed + power constraints
    APPROX_TORQUE = "approx_torque"  # speed + torque constraints


@dataclass(frozen=True)
class BandwidthProblem:
    m: float
    d: float
    k: float
    tau_c: float
    amplitude: float                 # command amplitude Y, rad
    qdot_max: float
    p_max: float
    u_max: Optional[float] = None
    mode: BandwidthMode = BandwidthMode.EXACT_POWER

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("inertia must be positive")
        if self.amplitude <= 0:
            raise ValueError("command amplitude must be positive")
        if self.u_max is None:
            object.__setattr__(
                self, "u_max", psat_approx_limit(self.p_max, self.qdot_max))

    @property
    def ybar(self) -> float:
        return self.amplitude / math.sqrt(2.0)


def _signals(problem: BandwidthProblem, wc: float, t):
    yb = problem.ybar
    s = np.sin(wc * t)
    c = np.cos(wc * t)
    qdot = -yb * wc * s
    u = yb * ((problem.k - problem.m * wc * wc) * c - problem.d * wc * s) \
        - problem.tau_c * np.sign(s)
    return qdot, u, u * qdot


def _golden_max(f, lo, hi, iters=80):
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return max(fc, fd)


def period_maxima(problem: BandwidthProblem, wc: float):
    """(max|q̇|, max|u|, max P) over one period, grid plus golden
    refinement around each grid argmax."""
    if wc <= 0:
        raise ValueError("frequency must be positive")
    period = 2.0 * math.pi / wc
    t = np.linspace(0.0, period, 2048, endpoint=False)
    qdot, u, p = _signals(problem, wc, t)

    out = []
    step = period / 2048
    for values, fn in ((np.abs(qdot), lambda x: abs(_sig1(problem, wc, x))),
                       (np.abs(u), lambda x: abs(_sig2(problem, wc, x))),
                       (p, lambda x: _sig3(problem, wc, x))):
        i = int(np.argmax(values))
        refined = _golden_max(fn, t[i] - step, t[i] + step)
        out.append(max(float(values[i]), refined))
    return tuple(out)


def _grid_feasible_flags(problem: BandwidthProblem, grid: np.ndarray):
    # unrefined vectorized scan: signals sampled on a shared phase grid;
    # grid maxima understate the refined ones, so feasibility here is
    # optimistic and must be confirmed with period_maxima afterwards
    tau = np.linspace(0.0, 2.0 * math.pi, 2048, endpoint=False)
    s, c = np.sin(tau)[None, :], np.cos(tau)[None, :]
    w = grid[:, None]
    yb = problem.ybar
    qdot = -yb * w * s
    u = yb * ((problem.k - problem.m * w * w) * c - problem.d * w * s) \
        - problem.tau_c * np.sign(s)
    ok = np.abs(qdot).max(axis=1) <= problem.qdot_max
    if problem.mode is BandwidthMode.EXACT_POWER:
        return ok & ((u * qdot).max(axis=1) <= problem.p_max)
    return ok & (np.abs(u).max(axis=1) <= problem.u_max)


def _sig1(problem, wc, x):
    return -problem.ybar * wc * math.sin(wc * x)


def _sig2(problem, wc, x):
    s = math.sin(wc * x)
    return problem.ybar * ((problem.k - problem.m * wc * wc) * math.cos(wc * x)
                           - problem.d * wc * s) \
        - problem.tau_c * (0.0 if s == 0 else math.copysign(1.0, s))


def _sig3(problem, wc, x):
    return _sig1(problem, wc, x) * _sig2(problem, wc, x)


def feasible(problem: BandwidthProblem, wc: float) -> bool:
    qdot_max, u_max, p_max = period_maxima(problem, wc)
    if qdot_max > problem.qdot_max:
        return False
    if problem.mode is BandwidthMode.EXACT_POWER:
        return p_max <= problem.p_max
    return u_max <= problem.u_max


def max_bandwidth(problem: BandwidthProblem) -> float:
    """Largest feasible ω_c, to 1e-6 relative bracket width."""
    grid = np.geomspace(GRID_LO, GRID_HI, GRID_POINTS)
    flags = _grid_feasible_flags(problem, grid)
    if not flags.any():
        raise ValueError("no feasible bandwidth on the search grid")
    last = int(np.flatnonzero(flags)[-1])
    # optimistic scan may overshoot by a cell; confirm with refined maxima
    while last >= 0 and not feasible(problem, float(grid[last])):
        last -= 1
    if last < 0:
        raise ValueError("no feasible bandwidth on the search grid")
    lo = float(grid[last])
    if last == len(grid) - 1:
        # feasible at the grid top: extend upward until a bracket exists
        hi = lo * 2.0
        while feasible(problem, hi):
            lo, hi = hi, hi * 2.0
            if hi > 1e12:
                raise ValueError("bandwidth appears unbounded")
    else:
        hi = float(grid[last + 1])
    while (hi - lo) > 1e-6 * hi:
        mid = math.sqrt(lo * hi)
        if feasible(problem, mid):
            lo = mid
        else:
            hi = mid
    return lo


def binding_constraint(problem: BandwidthProblem, wc: float,
                       rel_tol: float = 1e-4) -> str:
    """Label of the constraint tight at ω_c: 'speed', 'power', or 'torque'."""
    qdot_max, u_max, p_max = period_maxima(problem, wc)
    if qdot_max >= problem.qdot_max * (1 - rel_tol):
        return "speed"
    if problem.mode is BandwidthMode.EXACT_POWER:
        return "power"
    return "torque"


def ratio_sweep(y_grid_deg: Sequence[float], p_max_list: Sequence[float],
                m: float = 1.0, d: float = 0.05, k: float = 0.0,
                tau_c: float = 0.0, qdot_max: float = 4.0):
    """Rows (Y_deg, P_max, wc_exact, wc_approx, ratio) over the grid."""
    if len(y_grid_deg) == 0 or len(p_max_list) == 0:
        raise ValueError("sweep grids must be nonempty")
    rows = []
    for p_max in p_max_list:
        for y_deg in y_grid_deg:
            base = BandwidthProblem(m, d, k, tau_c, math.radians(y_deg),
                                    qdot_max, p_max)
            wc_exact = max_bandwidth(base)
            wc_approx = max_bandwidth(
                replace(base, mode=BandwidthMode.APPROX_TORQUE))
            rows.append((y_deg, p_max, wc_exact, wc_approx,
                         wc_exact / wc_approx))
    return rows


def kink_points(rows, p_max: float, m: float = 1.0, d: float = 0.05,
                k: float = 0.0, tau_c: float = 0.0, qdot_max: float = 4.0):
    """Amplitudes where the binding constraint changes along one sweep
    curve, located as transitions of the tight-constraint label. Plant
    parameters must match those the sweep was built with."""
    curve = [(y, we, wa) for (y, p, we, wa, _) in rows if p == p_max]
    curve.sort()
    kinks = []
    prev = None
    for y_deg, wc_exact, wc_approx in curve:
        base = BandwidthProblem(m, d, k, tau_c, math.radians(y_deg),
                                qdot_max, p_max)
        labels = (binding_constraint(base, wc_exact),
                  binding_constraint(
                      replace(base, mode=BandwidthMode.APPROX_TORQUE),
                      wc_approx))
        if prev is not None and labels != prev:
            kinks.append(y_deg)
        prev = labels
    return kinks


def ratio_sweep_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Y_deg", "P_max", "wc_exact", "wc_approx", "ratio"])
        writer.writerows(rows)
