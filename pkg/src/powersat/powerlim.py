"""Torque saturation, motor power, and the power-supply-limit nonlinearity.

A motor drawing torque u at joint velocity qdot consumes electrical power

    P = u * qdot + u**2 * rbar

where rbar is the winding resistance normalized by the squared torque
constant. ``psat`` maps a commanded torque to the largest same-sign torque
whose power stays within the per-joint budget pbar. Three models are
provided: the exact limit with losses ignored, the exact limit with the
quadratic loss term, and the conservative torque-saturation approximation
sat(u, pbar / vbar) built from the no-load speed vbar.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class PsatMode(enum.Enum):
    """Which model of the power limit to apply."""

    EXACT_LOSSLESS = "exact_lossless"
    EXACT_WITH_LOSSES = "exact_with_losses"
    APPROX_SAT = "approx_sat"


@dataclass(frozen=True)
class PowerBudget:
    """Per-joint power limits and the motor constants tied to them.

    per_joint_limit : W available to each joint
    normalized_resistance : R_i / k_t_i^2 per joint (Ohm A^2 / (N m)^2)
    no_load_speed : rad/s, required only by the approximate model
    aggregate_limit : W for the shared source; defaults to the per-joint sum
    """

    per_joint_limit: tuple
    normalized_resistance: tuple
    no_load_speed: Optional[tuple] = None
    aggregate_limit: Optional[float] = None

    def __post_init__(self):
        pbar = np.asarray(self.per_joint_limit, dtype=float)
        rbar = np.asarray(self.normalized_resistance, dtype=float)
        if pbar.ndim != 1 or rbar.shape != pbar.shape:
            raise ValueError("per-joint limit and resistance shapes disagree")
        if np.any(pbar < 0) or np.any(rbar < 0):
            raise ValueError("power limits and resistances must be nonnegative")
        object.__setattr__(self, "per_joint_limit", tuple(pbar))
        object.__setattr__(self, "normalized_resistance", tuple(rbar))
        if self.no_load_speed is not None:
            vbar = np.asarray(self.no_load_speed, dtype=float)
            if vbar.shape != pbar.shape or np.any(vbar <= 0):
                raise ValueError("no-load speeds must be positive, one per joint")
            object.__setattr__(self, "no_load_speed", tuple(vbar))
        if self.aggregate_limit is None:
            object.__setattr__(self, "aggregate_limit", float(pbar.sum()))
        else:
            if self.aggregate_limit < 0:
                raise ValueError("aggregate limit must be nonnegative")
            # static allocation: the per-joint budgets partition the source
            if not math.isclose(float(pbar.sum()), float(self.aggregate_limit),
                                rel_tol=1e-9, abs_tol=1e-9):
                raise ValueError("per-joint limits must sum to the aggregate limit")

    @property
    def n_joints(self) -> int:
        return len(self.per_joint_limit)

    @staticmethod
    def uniform(p_max: float, n: int, rbar: float = 0.0,
                vbar: Optional[float] = None) -> "PowerBudget":
        """Split an aggregate limit evenly over n identical joints."""
        return PowerBudget(
            per_joint_limit=(p_max / n,) * n,
            normalized_resistance=(rbar,) * n,
            no_load_speed=None if vbar is None else (vbar,) * n,
            aggregate_limit=p_max,
        )


def sat(u, u_max):
    """Symmetric torque saturation sign(u) * min(|u|, u_max)."""
    if np.any(np.asarray(u_max) < 0):
        raise ValueError("saturation bound must be nonnegative")
    return np.sign(u) * np.minimum(np.abs(u), u_max)


def motor_power(u, qdot, rbar):
    """Electrical power u*qdot + u^2*rbar drawn by one motor."""
    if np.any(np.asarray(rbar) < 0):
        raise ValueError("normalized resistance must be nonnegative")
    return u * qdot + u * u * rbar


def psat_approx_limit(pbar: float, vbar: float) -> float:
    """Constant torque bound pbar/vbar used by the approximate model."""
    if vbar <= 0:
        raise ValueError("no-load speed must be positive")
    if pbar < 0:
        raise ValueError("power limit must be nonnegative")
    return pbar / vbar


def _psat_lossy_root(qdot: float, pbar: float, rbar: float, sign: float) -> float:
    # root of rbar*u^2 + qdot*u = pbar with the sign of the commanded torque;
    # conjugate form avoids cancellation when sign and qdot agree
    disc = math.sqrt(qdot * qdot + 4.0 * pbar * rbar)
    if sign * qdot > 0.0:
        return 2.0 * pbar / (qdot + sign * disc)
    return (-qdot + sign * disc) / (2.0 * rbar)


def psat(u: float, qdot: float, pbar: float, rbar: float = 0.0,
         mode: PsatMode = PsatMode.EXACT_LOSSLESS,
         vbar: Optional[float] = None) -> float:
    """Largest same-sign torque at most u whose power stays within pbar.

    The limit is one-sided: regenerative operation (u*qdot < 0) draws no
    power from the supply and always passes through unchanged.

    Raises ValueError in the lossless mode when the limit binds at qdot = 0,
    where no finite torque attains the budget; compose with ``sat`` first or
    use the lossy model there.
    """
    if pbar < 0:
        raise ValueError("power limit must be nonnegative")
    u = float(u)
    qdot = float(qdot)
    if mode is PsatMode.APPROX_SAT:
        if vbar is None:
            raise ValueError("approximate model needs the no-load speed")
        return float(sat(u, psat_approx_limit(pbar, vbar)))
    if mode is PsatMode.EXACT_LOSSLESS:
        if u * qdot <= pbar:
            return u
        if qdot == 0.0:
            raise ValueError("power limit binding at zero velocity is unbounded")
        return pbar / qdot
    if mode is PsatMode.EXACT_WITH_LOSSES:
        if rbar <= 0:
            raise ValueError("lossy model needs a positive normalized resistance")
        if motor_power(u, qdot, rbar) <= pbar:
            return u
        return _psat_lossy_root(qdot, pbar, rbar, math.copysign(1.0, u))
    raise ValueError(f"unknown mode {mode!r}")


def psat_vector(u: Sequence[float], qdot: Sequence[float], budget: PowerBudget,
                mode: PsatMode = PsatMode.EXACT_LOSSLESS) -> np.ndarray:
    """Component-wise ``psat`` across all joints of a budget."""
    u = np.asarray(u, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if u.shape != qdot.shape or u.shape != (budget.n_joints,):
        raise ValueError("torque/velocity dimensions do not match the budget")
    out = np.empty_like(u)
    for i in range(budget.n_joints):
        vbar_i = None if budget.no_load_speed is None else budget.no_load_speed[i]
        out[i] = psat(u[i], qdot[i], budget.per_joint_limit[i],
                      budget.normalized_resistance[i], mode, vbar_i)
    return out
