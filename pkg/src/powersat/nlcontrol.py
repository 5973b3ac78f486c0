"""Passivity-based regulation (PD plus gravity compensation) under a
power-limited supply.

The torque law u = G(q) − K_p(q − q*) − K_d q̇ shapes the potential energy
around the setpoint. The shaped energy V = ½q̇ᵀM(q)q̇ + ½q̃ᵀK_p q̃ decreases
along the power-limited closed loop: the limiter only ever removes energy,
so the analytic rate

    V̇ = −q̇ᵀ(K_d + D)q̇ − Σ_{i∈F} (P_i − P̄_i)

stays nonpositive, where F collects the joints whose demanded mechanical
power P_i = u_i q̇_i exceeds the budget of the lossless limiter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from powersat.model import LagrangianModel, State, two_link_from_config, \
    two_link_model
from powersat.powerlim import PowerBudget, PsatMode
from powersat.sim import TrajectoryLog, simulate

__all__ = [
    "PBCGains",
    "pbc_control",
    "pbc_lyapunov",
    "pbc_lyapunov_rate",
    "run_swingup_example",
    "run_pbc_scenario",
    "swingup_gains",
]


def _check_gain(mat, name, strict):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if not np.allclose(mat, mat.T, atol=1e-10 * (1 + np.abs(mat).max())):
        raise ValueError(f"{name} must be symmetric")
    floor = np.linalg.eigvalsh(mat).min()
    if strict and floor <= 0:
        raise ValueError(f"{name} must be positive definite")
    if not strict and floor < -1e-12 * (1 + np.abs(mat).max()):
        raise ValueError(f"{name} must be positive semidefinite")
    return mat


@dataclass(frozen=True)
class PBCGains:
    k_p: np.ndarray
    k_d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k_p", _check_gain(self.k_p, "K_p", True))
        object.__setattr__(self, "k_d", _check_gain(self.k_d, "K_d", False))
        if self.k_p.shape != self.k_d.shape:
            raise ValueError("gain matrices must have matching shapes")


def _shift(q, q_star):
    q = np.asarray(q, dtype=float)
    if q_star is None:
        return q
    return q - np.asarray(q_star, dtype=float)


def pbc_control(model: LagrangianModel, gains: PBCGains, q, qdot,
                q_star=None) -> np.ndarray:
    qdot = np.asarray(qdot, dtype=float)
    return model.gravity_fn(np.asarray(q, dtype=float)) \
        - gains.k_p @ _shift(q, q_star) - gains.k_d @ qdot


def pbc_lyapunov(model: LagrangianModel, gains: PBCGains, q, qdot,
                 q_star=None) -> float:
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    err = _shift(q, q_star)
    return 0.5 * float(qdot @ model.mass_fn(q) @ qdot) \
        + 0.5 * float(err @ gains.k_p @ err)


def pbc_lyapunov_rate(model: LagrangianModel, gains: PBCGains,
                      budget: PowerBudget, q, qdot, q_star=None) -> float:
    """Analytic rate with the case split over power-saturating joints."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    u = pbc_control(model, gains, q, qdot, q_star)
    damp = qdot @ (gains.k_d + model.damping) @ qdot
    pbar = np.asarray(budget.per_joint_limit)
    power = u * qdot
    excess = power[power > pbar] - pbar[power > pbar]
    return -float(damp) - float(excess.sum())


def swingup_gains(omega_n: float = 2.0 * math.pi * math.sqrt(2.0),
                   zeta: float = 0.9, m1: float = 16.0,
                   m2: float = 12.0) -> PBCGains:
    return PBCGains(
        k_p=np.diag([m1 * omega_n ** 2, m2 * omega_n ** 2]),
        k_d=np.diag([2.0 * m1 * zeta * omega_n, 2.0 * m2 * zeta * omega_n]))


def _make_controller(model, gains, q_star):
    def controller(t, state: State):
        u = pbc_control(model, gains, state.q, state.qdot, q_star)
        v = pbc_lyapunov(model, gains, state.q, state.qdot, q_star)
        return u, {"lyapunov": v}
    return controller


def run_swingup_example(t_final: float = 10.0, dt: float = 1e-3) -> TrajectoryLog:
    """Two-link arm swung up from hanging start under 1 kW per joint."""
    model = two_link_model()
    gains = swingup_gains()
    budget = PowerBudget(per_joint_limit=(1000.0, 1000.0),
                         normalized_resistance=(0.0, 0.0))
    x0 = State(q=np.array([-math.pi / 2.0, math.pi]), qdot=np.zeros(2))
    return simulate(model, _make_controller(model, gains, None), budget,
                    x0, t_final, dt, mode=PsatMode.EXACT_LOSSLESS)


def run_pbc_scenario(source) -> TrajectoryLog:
    """Simulate a JSON-described scenario (file path or parsed dict).

    Keys: K_p, K_d (full matrices or diagonals), per_joint_limit, q0,
    qdot0, t_final, dt; optional normalized_resistance, no_load_speed,
    q_star, model (two-link parameter overrides).
    """
    if not isinstance(source, dict):
        with open(source) as fh:
            source = json.load(fh)

    def gain(key):
        raw = np.asarray(source[key], dtype=float)
        return np.diag(raw) if raw.ndim == 1 else raw

    model = two_link_from_config(source.get("model", {}))
    gains = PBCGains(k_p=gain("K_p"), k_d=gain("K_d"))
    pbar = tuple(source["per_joint_limit"])
    budget = PowerBudget(
        per_joint_limit=pbar,
        normalized_resistance=tuple(
            source.get("normalized_resistance", (0.0,) * len(pbar))),
        no_load_speed=(tuple(source["no_load_speed"])
                       if "no_load_speed" in source else None))
    x0 = State(q=np.asarray(source["q0"], dtype=float),
               qdot=np.asarray(source["qdot0"], dtype=float))
    q_star = (np.asarray(source["q_star"], dtype=float)
              if "q_star" in source else None)
    return simulate(model, _make_controller(model, gains, q_star), budget,
                    x0, float(source["t_final"]), float(source["dt"]),
                    mode=PsatMode.EXACT_LOSSLESS)
