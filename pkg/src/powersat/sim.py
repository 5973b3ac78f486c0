"""Fixed-step closed-loop simulation with power limiting, plus step metrics.

The loop is sample-and-hold: at each step start the controller is evaluated
once, its command is pushed through the power limiter once, and the applied
torque is held constant across the RK4 stages of that step. This mirrors a
digital implementation and keeps the integrand smooth inside each step; a
step-halving check in the test suite guards the accuracy of the choice.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Union

import numpy as np

from powersat.model import LagrangianModel, LinearPlant, State
from powersat.powerlim import PowerBudget, PsatMode, psat

__all__ = [
    "TrajectoryLog",
    "SimulationDiverged",
    "simulate",
    "settling_time",
    "percent_overshoot",
]


@dataclass
class TrajectoryLog:
    """Sampled closed-loop run; every array has one row per sample."""

    times: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    u_cmd: np.ndarray
    u_applied: np.ndarray
    power_per_joint: np.ndarray
    power_total: np.ndarray
    scalars: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = self.times.size
        for name in ("q", "qdot", "u_cmd", "u_applied", "power_per_joint"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length disagrees with times")
        if self.power_total.shape != (n,):
            raise ValueError("power_total length disagrees with times")
        for name, series in self.scalars.items():
            if np.asarray(series).shape[0] != n:
                raise ValueError(f"scalar '{name}' length disagrees")

    @property
    def n_samples(self) -> int:
        return self.times.size

    def state(self, i: int) -> State:
        return State(self.q[i], self.qdot[i])

    def max_total_power(self) -> float:
        return float(self.power_total.max())

    def to_csv(self, path) -> None:
        """Write one row per sample: t, q*, qd*, u_cmd*, u_app*, p*,
        p_total, then scalar columns in sorted name order."""
        dof = self.q.shape[1]
        n_a = self.u_cmd.shape[1]
        names = sorted(self.scalars)
        header = (["t"]
                  + [f"q{j}" for j in range(dof)]
                  + [f"qd{j}" for j in range(dof)]
                  + [f"u_cmd{j}" for j in range(n_a)]
                  + [f"u_app{j}" for j in range(n_a)]
                  + [f"p{j}" for j in range(n_a)]
                  + ["p_total"] + names)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n_samples):
                row = ([self.times[i]]
                       + list(self.q[i]) + list(self.qdot[i])
                       + list(self.u_cmd[i]) + list(self.u_applied[i])
                       + list(self.power_per_joint[i])
                       + [self.power_total[i]]
                       + [self.scalars[k][i] for k in names])
                writer.writerow([repr(float(v)) for v in row])


class SimulationDiverged(RuntimeError):
    """State left the finite range; carries the log up to the bad sample."""

    def __init__(self, message: str, log: TrajectoryLog):
        super().__init__(message)
        self.log = log


def _rk4_step(accel, q, qd, u, dt):
    # torque held constant across the stages
    k1v = accel(q, qd, u)
    k2q = qd + 0.5 * dt * k1v
    k2v = accel(q + 0.5 * dt * qd, k2q, u)
    k3q = qd + 0.5 * dt * k2v
    k3v = accel(q + 0.5 * dt * k2q, k3q, u)
    k4q = qd + dt * k3v
    k4v = accel(q + dt * k3q, k4q, u)
    q_next = q + dt / 6.0 * (qd + 2 * k2q + 2 * k3q + k4q)
    qd_next = qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return q_next, qd_next


def simulate(system: Union[LinearPlant, LagrangianModel],
             controller: Callable,
             budget: Optional[PowerBudget],
             x0: State,
             t_final: float,
             dt: float,
             mode: PsatMode = PsatMode.EXACT_LOSSLESS) -> TrajectoryLog:
    """Integrate the closed loop and return the sampled log.

    ``controller(t, state)`` returns the commanded torque, optionally as
    ``(torque, scalars)`` with a dict of extra per-sample diagnostics.
    ``budget=None`` disables limiting. Torque enters actuated coordinates
    only; for a partially actuated linear plant that is the trailing block.
    """
    if dt <= 0:
        raise ValueError("step size must be positive")
    n_steps = int(round(t_final / dt))
    if n_steps < 1:
        raise ValueError("horizon shorter than one step")

    if isinstance(system, LinearPlant):
        n_a, act = system.n_a, slice(system.n_u, system.dof)
    else:
        n_a, act = system.dof, slice(0, system.dof)
    dof = system.dof

    times = np.arange(n_steps + 1) * dt
    q_log = np.empty((n_steps + 1, dof))
    qd_log = np.empty((n_steps + 1, dof))
    ucmd_log = np.empty((n_steps + 1, n_a))
    uapp_log = np.empty((n_steps + 1, n_a))
    p_log = np.empty((n_steps + 1, n_a))
    scalar_log: Dict[str, list] = {}

    q = np.asarray(x0.q, dtype=float).copy()
    qd = np.asarray(x0.qdot, dtype=float).copy()
    rbar = (np.zeros(n_a) if budget is None
            else np.asarray(budget.normalized_resistance))
    if budget is not None:
        pbar = np.asarray(budget.per_joint_limit)
        vbar = (budget.no_load_speed if budget.no_load_speed is not None
                else (None,) * n_a)

    def truncated(k):
        return TrajectoryLog(
            times[:k], q_log[:k], qd_log[:k], ucmd_log[:k], uapp_log[:k],
            p_log[:k], p_log[:k].sum(axis=1),
            {name: np.asarray(vals[:k]) for name, vals in scalar_log.items()})

    for k in range(n_steps + 1):
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise SimulationDiverged(
                f"non-finite state at t = {k * dt:.6g} s", truncated(k))
        out = controller(times[k], State(q, qd))
        if isinstance(out, tuple):
            u_cmd, extras = out
            for name, val in extras.items():
                scalar_log.setdefault(name, []).append(float(val))
        else:
            u_cmd = out
        u_cmd = np.atleast_1d(np.asarray(u_cmd, dtype=float))
        if u_cmd.shape != (n_a,):
            raise ValueError("controller returned a wrong-sized torque")
        qd_act = qd[act]
        if budget is None:
            u_app = u_cmd.copy()
        else:
            u_app = np.array([psat(u_cmd[i], qd_act[i], pbar[i], rbar[i],
                                   mode, vbar[i]) for i in range(n_a)])

        q_log[k], qd_log[k] = q, qd
        ucmd_log[k], uapp_log[k] = u_cmd, u_app
        p_log[k] = u_app * qd_act + u_app * u_app * rbar
        if k < n_steps:
            q, qd = _rk4_step(system.accel, q, qd, u_app, dt)

    return TrajectoryLog(times, q_log, qd_log, ucmd_log, uapp_log, p_log,
                         p_log.sum(axis=1),
                         {name: np.asarray(vals)
                          for name, vals in scalar_log.items()})


def settling_time(times, signal, final_value: float,
                  pct: float = 5.0) -> Optional[float]:
    """First time after which the signal stays inside the pct band forever
    (within the log). The band is pct% of the initial-to-final gap; a
    signal already at its final value settles at t = 0. None if it never
    stays inside."""
    if not 0 < pct < 100:
        raise ValueError("band percentage must lie in (0, 100)")
    signal = np.asarray(signal, dtype=float)
    times = np.asarray(times, dtype=float)
    band = (pct / 100.0) * abs(signal[0] - final_value)
    inside = np.abs(signal - final_value) <= band
    if not inside[-1]:
        return None
    # last sample outside the band, if any
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return 0.0
    last_out = outside[-1]
    if last_out + 1 >= signal.size:
        return None
    return float(times[last_out + 1])


def percent_overshoot(signal, initial: float, final: float) -> float:
    """Peak excursion past the final value, as % of the commanded change,
    floored at zero."""
    if initial == final:
        raise ValueError("initial and final values must differ")
    signal = np.asarray(signal, dtype=float)
    return max(0.0, float(((signal - final) / (final - initial)).max()) * 100.0)
