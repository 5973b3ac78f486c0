"""Dynamic linear controllers with anti-windup under power limits.

The controller is ẋ_c = A_c x_c + B_p q + B_d q̇, u = C x_c + K_p q + K_d q̇,
with gains entering the torque directly (stabilizing gains are negative).
Conditional integration projects the controller rate onto the null space
of the output rows tied to power-saturating channels; modern anti-windup
injects the saturation mismatch σ = psat(u, q̇) − u through gains E_c, E.

Closed-loop block matrices follow the plant convention
M q̈ + D q̇ + K q = S u, giving velocity rows M⁻¹(S K_p − K) and
M⁻¹(S K_d − D); a finite-difference Jacobian check in the test suite ties
the assembly to the simulated loop.

The stability certificate enumerates every saturation pattern H, replaces
σ by its worst sector vertex −δ(i,H)(1−γ_i)κ_i x, and requires the
Lyapunov form of A(H) + B Π(H) to be negative definite throughout.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from powersat.model import LinearPlant
from powersat.powerlim import PowerBudget, PsatMode, motor_power, psat_vector

__all__ = [
    "AntiWindup",
    "DynController",
    "SaturationIndexSet",
    "CertificateProblem",
    "saturating_set",
    "nullspace_projector",
    "ci_controller_rate",
    "maw_controller_rate",
    "closed_loop_matrices",
    "sigma",
    "certificate_check",
    "ellipsoid_in_polytope",
    "ellipsoid_margins",
    "roa_volume",
    "certificate_report_to_json",
    "dyn_controller_from_config",
]


class AntiWindup(enum.Enum):
    NONE = "none"
    CI = "ci"
    MAW = "maw"


@dataclass(frozen=True)
class DynController:
    """ẋ_c = A_c x_c + B_p q + B_d q̇, u = C x_c + K_p q + K_d q̇."""

    a_c: np.ndarray
    b_p: np.ndarray
    b_d: np.ndarray
    c: np.ndarray
    k_p: np.ndarray
    k_d: np.ndarray
    antiwindup: AntiWindup = AntiWindup.NONE
    e_c: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("a_c", "b_p", "b_d", "c", "k_p", "k_d"):
            object.__setattr__(self, name,
                               np.atleast_2d(np.asarray(getattr(self, name),
                                                        dtype=float)))
        n_c = self.a_c.shape[0]
        n_a, n = self.k_p.shape
        if self.a_c.shape != (n_c, n_c) or self.b_p.shape != (n_c, n) \
                or self.b_d.shape != (n_c, n) or self.c.shape != (n_a, n_c) \
                or self.k_d.shape != (n_a, n):
            raise ValueError("controller matrix dimensions disagree")
        if self.antiwindup is AntiWindup.MAW:
            if self.e_c is None or self.e is None:
                raise ValueError("MAW needs both compensation gains")
            object.__setattr__(self, "e_c",
                               np.atleast_2d(np.asarray(self.e_c, float)))
            object.__setattr__(self, "e",
                               np.atleast_2d(np.asarray(self.e, float)))
            if self.e_c.shape != (n_c, n_a) or self.e.shape != (n_a, n_a):
                raise ValueError("anti-windup gain dimensions disagree")
        elif self.e_c is not None or self.e is not None:
            raise ValueError("compensation gains require MAW mode")

    @property
    def n_c(self) -> int:
        return self.a_c.shape[0]

    @property
    def n_a(self) -> int:
        return self.k_p.shape[0]

    def gain_matrix(self) -> np.ndarray:
        """κ = [K_p K_d C], so u = κ [q; q̇; x_c]."""
        return np.hstack([self.k_p, self.k_d, self.c])

    def output(self, x_c, q, qdot) -> np.ndarray:
        return self.c @ x_c + self.k_p @ q + self.k_d @ qdot


@dataclass(frozen=True)
class SaturationIndexSet:
    """Actuator channels demanding more power than their budget
    (0-based indices)."""

    indices: frozenset

    def __post_init__(self):
        object.__setattr__(self, "indices", frozenset(self.indices))

    def __contains__(self, i) -> bool:
        return i in self.indices

    def __len__(self) -> int:
        return len(self.indices)


def saturating_set(u, qdot, budget: PowerBudget) -> SaturationIndexSet:
    u = np.asarray(u, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if u.shape != qdot.shape or u.shape != (budget.n_joints,):
        raise ValueError("torque/velocity dimensions do not match budget")
    over = {i for i in range(budget.n_joints)
            if motor_power(u[i], qdot[i], budget.normalized_resistance[i])
            > budget.per_joint_limit[i]}
    return SaturationIndexSet(frozenset(over))


def nullspace_projector(c: np.ndarray, h: SaturationIndexSet) -> np.ndarray:
    """Orthogonal projector onto the null space of the saturating output
    rows; identity when nothing saturates (integrators run freely)."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n_c = c.shape[1]
    if len(h) == 0:
        return np.eye(n_c)
    rows = c[sorted(h.indices), :]
    u_svd, s, vh = np.linalg.svd(rows, full_matrices=True)
    tol = max(rows.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    v_null = vh[rank:].T
    return v_null @ v_null.T


def ci_controller_rate(ctrl: DynController, x_c, q, qdot,
                       h: SaturationIndexSet) -> np.ndarray:
    if ctrl.antiwindup is not AntiWindup.CI:
        raise ValueError("controller is not in conditional-integration mode")
    rate = ctrl.a_c @ x_c + ctrl.b_p @ q + ctrl.b_d @ qdot
    return nullspace_projector(ctrl.c, h) @ rate


def maw_controller_rate(ctrl: DynController, x_c, q, qdot,
                        sig) -> Tuple[np.ndarray, np.ndarray]:
    if ctrl.antiwindup is not AntiWindup.MAW:
        raise ValueError("controller has no anti-windup dynamics")
    sig = np.asarray(sig, dtype=float)
    rate = ctrl.a_c @ x_c + ctrl.b_p @ q + ctrl.b_d @ qdot + ctrl.e_c @ sig
    u = ctrl.output(x_c, q, qdot) + ctrl.e @ sig
    return rate, u


def closed_loop_matrices(plant: LinearPlant, ctrl: DynController,
                         h: SaturationIndexSet):
    """(A(H), B, κ) of ẋ = A(H)x + Bσ(x) with x = [q; q̇; x_c]."""
    n, n_a, n_c = plant.dof, ctrl.n_a, ctrl.n_c
    if n_a != plant.n_a:
        raise ValueError("controller output count does not match plant")
    minv = np.linalg.inv(plant.mass)
    s_mat = plant.actuator_selection
    vel = np.hstack([minv @ (s_mat @ ctrl.k_p - plant.stiffness),
                     minv @ (s_mat @ ctrl.k_d - plant.damping),
                     minv @ s_mat @ ctrl.c])
    top = np.hstack([np.zeros((n, n)), np.eye(n), np.zeros((n, n_c))])
    if ctrl.antiwindup is AntiWindup.CI:
        proj = nullspace_projector(ctrl.c, h)
        low = np.hstack([proj @ ctrl.b_p, proj @ ctrl.b_d, proj @ ctrl.a_c])
        b = np.vstack([np.zeros((n, n_a)), minv @ s_mat,
                       np.zeros((n_c, n_a))])
    elif ctrl.antiwindup is AntiWindup.MAW:
        low = np.hstack([ctrl.b_p, ctrl.b_d, ctrl.a_c])
        b = np.vstack([np.zeros((n, n_a)),
                       minv @ s_mat @ (np.eye(n_a) + ctrl.e), ctrl.e_c])
    else:
        low = np.hstack([ctrl.b_p, ctrl.b_d, ctrl.a_c])
        b = np.vstack([np.zeros((n, n_a)), minv @ s_mat,
                       np.zeros((n_c, n_a))])
    a_mat = np.vstack([top, vel, low])
    return a_mat, b, ctrl.gain_matrix()


def _split_state(x, ctrl):
    x = np.asarray(x, dtype=float)
    n = (x.size - ctrl.n_c) // 2
    if 2 * n + ctrl.n_c != x.size:
        raise ValueError("state length inconsistent with controller")
    return x[:n], x[n:2 * n], x[2 * n:]


def sigma(x, ctrl: DynController, budget: PowerBudget) -> np.ndarray:
    """Saturation mismatch psat(κx, q̇) − κx on the actuated channels."""
    q, qdot, x_c = _split_state(x, ctrl)
    u = ctrl.output(x_c, q, qdot)
    qdot_act = qdot[qdot.size - ctrl.n_a:]
    return psat_vector(u, qdot_act, budget, PsatMode.EXACT_LOSSLESS) - u


@dataclass(frozen=True)
class CertificateProblem:
    """Theorem data: Lyapunov matrix Q, sector scalars γ, level α."""

    q: np.ndarray
    gamma: np.ndarray
    alpha: float
    w: np.ndarray = field(init=False)
    h_rows: np.ndarray = field(init=False)
    _kappa: np.ndarray = field(init=False, repr=False)

    def __init__(self, q, gamma, alpha, ctrl: DynController,
                 budget: PowerBudget):
        q = np.asarray(q, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        if not np.allclose(q, q.T, atol=1e-10 * (1 + np.abs(q).max())):
            raise ValueError("Lyapunov matrix must be symmetric")
        if np.linalg.eigvalsh(q).min() <= 0:
            raise ValueError("Lyapunov matrix must be positive definite")
        if np.any(gamma <= 0) or np.any(gamma >= 1):
            raise ValueError("sector scalars must lie in (0, 1)")
        if alpha <= 0:
            raise ValueError("ellipsoid level must be positive")
        if budget.no_load_speed is None:
            raise ValueError("certificate needs the no-load speeds")
        kappa = ctrl.gain_matrix()
        if gamma.shape != (kappa.shape[0],):
            raise ValueError("one sector scalar per actuated channel")
        vbar = np.asarray(budget.no_load_speed)
        pbar = np.asarray(budget.per_joint_limit)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "alpha", float(alpha))
        object.__setattr__(self, "w", alpha * np.linalg.inv(q))
        object.__setattr__(self, "h_rows", (vbar / pbar)[:, None] * kappa)
        object.__setattr__(self, "_kappa", kappa)


def _sector_vertex_matrix(prob: CertificateProblem, h: SaturationIndexSet):
    # worst-vertex substitution: sigma_i -> -(1-gamma_i) kappa_i x on H
    rows = np.zeros_like(prob._kappa)
    for i in sorted(h.indices):
        rows[i] = -(1.0 - prob.gamma[i]) * prob._kappa[i]
    return rows


def certificate_check(plant: LinearPlant, ctrl: DynController,
                      budget: PowerBudget, prob: CertificateProblem,
                      eig_tol: float = -1e-9) -> dict:
    """Enumerate every saturation pattern and test the Lyapunov form."""
    n_a = ctrl.n_a
    if n_a > 12:
        raise ValueError("power-set enumeration capped at 12 channels")
    if budget.n_joints != n_a or plant.n_a != n_a:
        raise ValueError("plant, controller and budget channel counts differ")
    if not np.array_equal(prob._kappa, ctrl.gain_matrix()):
        raise ValueError("certificate problem was built for another controller")
    worst_eig = -math.inf
    worst_set = None
    for size in range(n_a + 1):
        for combo in itertools.combinations(range(n_a), size):
            h = SaturationIndexSet(frozenset(combo))
            a_mat, b, _ = closed_loop_matrices(plant, ctrl, h)
            closed = a_mat + b @ _sector_vertex_matrix(prob, h)
            form = closed.T @ prob.q + prob.q @ closed
            lam = float(np.linalg.eigvalsh(form).max())
            if lam > worst_eig:
                worst_eig = lam
                worst_set = sorted(combo)
    return {
        "holds": worst_eig < eig_tol,
        "worst_set": worst_set,
        "max_eig": worst_eig,
        "ellipsoid_margins": ellipsoid_margins(prob).tolist(),
        "ellipsoid_inside": bool(ellipsoid_in_polytope(prob)),
    }


def ellipsoid_margins(prob: CertificateProblem) -> np.ndarray:
    """Slack of 1 − γ_i² h_i W h_iᵀ per channel (≥ 0 means inside)."""
    vals = np.einsum("ij,jk,ik->i", prob.h_rows, prob.w, prob.h_rows)
    return 1.0 - prob.gamma ** 2 * vals


def ellipsoid_in_polytope(prob: CertificateProblem) -> bool:
    return bool((ellipsoid_margins(prob) >= 0.0).all())


def roa_volume(w: np.ndarray) -> float:
    """log det W through a Cholesky factorization."""
    w = np.asarray(w, dtype=float)
    try:
        chol = np.linalg.cholesky(w)
    except np.linalg.LinAlgError as exc:
        raise ValueError("volume defined only for positive definite W") \
            from exc
    return 2.0 * float(np.log(np.diag(chol)).sum())


def certificate_report_to_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def dyn_controller_from_config(source) -> DynController:
    """Controller matrices from a JSON file path or parsed dict."""
    if not isinstance(source, dict):
        with open(source) as fh:
            source = json.load(fh)
    mode = AntiWindup(source.get("antiwindup", "none"))
    kw = {}
    if mode is AntiWindup.MAW:
        kw = {"e_c": source["E_c"], "e": source["E"]}
    return DynController(
        a_c=source["A_c"], b_p=source["B_p"], b_d=source["B_d"],
        c=source["C"], k_p=source["K_p"], k_d=source["K_d"],
        antiwindup=mode, **kw)
