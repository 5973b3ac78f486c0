"""Plant descriptions and the two benchmark systems.

A LinearPlant is M q̈ + D q̇ + K q + G = S u with constant matrices; a
LagrangianModel is M(q) q̈ + C(q, q̇) q̇ + D q̇ + G(q) = u. The two-link
planar arm is assembled from uniform-rod links (centers of mass at link
midpoints, inertias taken about the joint axes, zero angle = horizontal,
gravity in the plane); an energy-conservation test in the suite guards the
consistency of that completion. The four-fin actuation system is four
identical decoupled mass-damper channels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from powersat.powerlim import PowerBudget

__all__ = [
    "State",
    "LinearPlant",
    "LagrangianModel",
    "PowerBudget",
    "two_link_model",
    "fin_system_model",
    "linear_to_statespace",
    "two_link_from_config",
    "fin_from_config",
]

_GRAVITY = 9.8


@dataclass(frozen=True)
class State:
    """Joint positions (rad) and velocities (rad/s)."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.atleast_1d(
            np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "qdot", np.atleast_1d(
            np.asarray(self.qdot, dtype=float)))
        if self.q.shape != self.qdot.shape or self.q.ndim != 1:
            raise ValueError("position and velocity dimensions disagree")

    @property
    def dof(self) -> int:
        return self.q.size

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])


def _check_spd(m, name, strict):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(m, m.T, atol=1e-9 * (1 + np.abs(m).max())):
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(m)
    floor = 1e-12 * (1 + np.abs(m).max())
    if strict and w.min() <= floor:
        raise ValueError(f"{name} must be positive definite")
    if not strict and w.min() < -floor:
        raise ValueError(f"{name} must be positive semidefinite")
    return m


@dataclass(frozen=True)
class LinearPlant:
    """M q̈ + D q̇ + K q + G = S u with q = [q_u; q_a], u on actuated rows."""

    mass: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray
    actuator_selection: np.ndarray
    gravity_offset: np.ndarray
    n_u: int
    n_a: int

    def __post_init__(self):
        m = _check_spd(self.mass, "mass", strict=True)
        d = _check_spd(self.damping, "damping", strict=False)
        k = _check_spd(self.stiffness, "stiffness", strict=False)
        n = m.shape[0]
        if d.shape != (n, n) or k.shape != (n, n):
            raise ValueError("matrix dimensions disagree")
        if self.n_u + self.n_a != n or self.n_u < 0 or self.n_a <= 0:
            raise ValueError("coordinate split does not cover the plant")
        s = np.asarray(self.actuator_selection, dtype=float)
        expected = np.vstack([np.zeros((self.n_u, self.n_a)),
                              np.eye(self.n_a)])
        if s.shape != expected.shape or not np.array_equal(s, expected):
            raise ValueError(
                "selection matrix must stack zeros over an identity")
        g = np.asarray(self.gravity_offset, dtype=float).ravel()
        if g.size != n:
            raise ValueError("gravity offset length must match coordinates")
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "damping", d)
        object.__setattr__(self, "stiffness", k)
        object.__setattr__(self, "actuator_selection", s)
        object.__setattr__(self, "gravity_offset", g)

    @property
    def dof(self) -> int:
        return self.mass.shape[0]

    def accel(self, q, qdot, u) -> np.ndarray:
        rhs = self.actuator_selection @ np.asarray(u, dtype=float) \
            - self.damping @ qdot - self.stiffness @ q - self.gravity_offset
        return np.linalg.solve(self.mass, rhs)


@dataclass(frozen=True)
class LagrangianModel:
    """M(q) q̈ + C(q, q̇) q̇ + D q̇ + G(q) = u, fully actuated."""

    mass_fn: Callable[[np.ndarray], np.ndarray]
    coriolis_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gravity_fn: Callable[[np.ndarray], np.ndarray]
    damping: np.ndarray
    dof: int
    potential_fn: Optional[Callable[[np.ndarray], float]] = None

    def __post_init__(self):
        d = np.asarray(self.damping, dtype=float)
        if d.shape != (self.dof, self.dof):
            raise ValueError("damping dimensions do not match dof")
        object.__setattr__(self, "damping", d)

    def accel(self, q, qdot, u) -> np.ndarray:
        rhs = np.asarray(u, dtype=float) \
            - self.coriolis_fn(q, qdot) @ qdot \
            - self.damping @ qdot - self.gravity_fn(q)
        return np.linalg.solve(self.mass_fn(q), rhs)

    def energy(self, q, qdot) -> float:
        if self.potential_fn is None:
            raise ValueError("model has no potential energy function")
        return 0.5 * float(qdot @ self.mass_fn(q) @ qdot) + \
            self.potential_fn(q)


def two_link_model(m1: float = 16.0, m2: float = 12.0, i1: float = 18.0,
                   i2: float = 7.5, h1: float = 1.0, h2: float = 1.0,
                   joint_damping: float = 10.0,
                   gravity: float = _GRAVITY) -> LagrangianModel:
    """Planar two-link arm, uniform rods, inertias about the joint axes."""
    r1, r2 = h1 / 2.0, h2 / 2.0
    a = i1 + i2 + m2 * h1 * h1      # constant part of M11
    b = m2 * h1 * r2                # cos-coupling coefficient
    g1 = (m1 * r1 + m2 * h1) * gravity
    g2 = m2 * r2 * gravity

    def mass_fn(q):
        c2 = np.cos(q[1])
        return np.array([[a + 2 * b * c2, i2 + b * c2],
                         [i2 + b * c2, i2]])

    def coriolis_fn(q, qdot):
        s2 = np.sin(q[1])
        return np.array([[-b * s2 * qdot[1], -b * s2 * (qdot[0] + qdot[1])],
                         [b * s2 * qdot[0], 0.0]])

    def gravity_fn(q):
        return np.array([g1 * np.cos(q[0]) + g2 * np.cos(q[0] + q[1]),
                         g2 * np.cos(q[0] + q[1])])

    def potential_fn(q):
        return g1 * np.sin(q[0]) + g2 * np.sin(q[0] + q[1])

    return LagrangianModel(mass_fn, coriolis_fn, gravity_fn,
                           np.eye(2) * joint_damping, 2, potential_fn)


def fin_system_model(m: float = 1.0, d: float = 0.05,
                     n_fins: int = 4) -> LinearPlant:
    """Four identical decoupled fin channels: m q̈ + d q̇ = u."""
    n = n_fins
    return LinearPlant(mass=np.eye(n) * m, damping=np.eye(n) * d,
                       stiffness=np.zeros((n, n)),
                       actuator_selection=np.eye(n),
                       gravity_offset=np.zeros(n), n_u=0, n_a=n)


def linear_to_statespace(plant: LinearPlant):
    """(F_c, H_c, g_c) for ẋ = F_c x + H_c u + g_c, x = [q; q̇]."""
    n = plant.dof
    try:
        minv = np.linalg.inv(plant.mass)
    except np.linalg.LinAlgError as exc:
        raise ValueError("mass matrix is singular") from exc
    f_c = np.block([[np.zeros((n, n)), np.eye(n)],
                    [-minv @ plant.stiffness, -minv @ plant.damping]])
    h_c = np.vstack([np.zeros((n, plant.n_a)),
                     minv @ plant.actuator_selection])
    g_c = np.concatenate([np.zeros(n), -minv @ plant.gravity_offset])
    return f_c, h_c, g_c


def two_link_from_config(source) -> LagrangianModel:
    """Build the arm from a JSON file path or an already-parsed dict.

    Recognized keys: m1, m2, I1, I2, h1, h2, d, g (all optional).
    """
    params = _load_params(source)
    return two_link_model(
        m1=params.get("m1", 16.0), m2=params.get("m2", 12.0),
        i1=params.get("I1", 18.0), i2=params.get("I2", 7.5),
        h1=params.get("h1", 1.0), h2=params.get("h2", 1.0),
        joint_damping=params.get("d", 10.0),
        gravity=params.get("g", _GRAVITY))


def fin_from_config(source) -> LinearPlant:
    """Build the fin system from a JSON file path or dict (keys: m, d)."""
    params = _load_params(source)
    return fin_system_model(m=params.get("m", 1.0),
                            d=params.get("d", 0.05),
                            n_fins=int(params.get("n_fins", 4)))


def _load_params(source) -> dict:
    if isinstance(source, dict):
        return source
    with open(source) as fh:
        return json.load(fh)
