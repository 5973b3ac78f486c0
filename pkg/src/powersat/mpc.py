"""Finite-horizon torque optimization under a shared power budget.

The continuous plant is discretized with a zero-order hold and the whole
horizon is condensed onto the stacked torque sequence, so the cost is one
quadratic form and every state constraint becomes a linear row over that
stack. The supply limit enters per step: the aggregate form couples all
actuators through one indefinite quadratic constraint per step (the
optimizer may shift budget between joints), the split form carries one
quadratic per actuator and step against a fixed share, and the linear
surrogate replaces the limit with a constant torque bound. The three
variants are solved through the shared QP/QCQP kernel; the indefinite ones
run sequential convexification with per-constraint diagonal shifts that
touch only the coordinates each constraint actually involves.

State layout throughout is x = [q; q̇].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from powersat.model import fin_system_model, linear_to_statespace
from powersat.optim import (QPProblem, factor_hessian, solve_qp,
                            solve_qcqp_nonconvex)
from powersat.powerlim import PowerBudget
from powersat.sim import TrajectoryLog, settling_time

__all__ = [
    "Horizon",
    "HorizonMatrices",
    "ControllerSolution",
    "CONTROLLER_VARIANTS",
    "discretize_zoh",
    "rollout",
    "assemble_cost",
    "lift_linear_constraints",
    "lift_input_state_constraints",
    "power_constraint_terms",
    "power_constraint_shifts",
    "horizon_matrices",
    "with_initial_state",
    "build_controller",
    "solve_controller",
    "playback",
    "receding_horizon",
    "run_fin_example",
    "fin_results_to_files",
    "fin_example_from_config",
]

CONTROLLER_VARIANTS = ("C1_dynamic", "C2_static_exact", "C3_static_approx")


def discretize_zoh(f_c, h_c, g_c, dt: float):
    """Zero-order-hold discretization of ẋ = F_c x + H_c u + g_c.

    Returns (F, H, g) with F = exp(F_c Δt) and H, g the held-input
    integrals, all read off one augmented matrix exponential.
    """
    if dt <= 0:
        raise ValueError("sample time must be positive")
    f_c = np.atleast_2d(np.asarray(f_c, dtype=float))
    n = f_c.shape[0]
    if f_c.shape != (n, n):
        raise ValueError("drift matrix must be square")
    h_c = np.asarray(h_c, dtype=float).reshape(n, -1)
    g_c = np.asarray(g_c, dtype=float).ravel()
    if g_c.size != n:
        raise ValueError("offset length must match the state dimension")
    m = h_c.shape[1]
    aug = np.zeros((n + m + 1, n + m + 1))
    aug[:n, :n] = f_c
    aug[:n, n:n + m] = h_c
    aug[:n, -1] = g_c
    phi = sla.expm(aug * dt)
    return phi[:n, :n], phi[:n, n:n + m], phi[:n, -1]


def rollout(f, h, g, x0, ups) -> np.ndarray:
    """States x_1..x_N (one per row) from iterating x⁺ = Fx + Hυ + g."""
    f = np.asarray(f, dtype=float)
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float).ravel()
    x = np.asarray(x0, dtype=float).ravel()
    ups = np.atleast_2d(np.asarray(ups, dtype=float))
    if ups.shape[1] != h.shape[1] or x.size != f.shape[0]:
        raise ValueError("rollout dimensions disagree")
    out = np.empty((ups.shape[0], x.size))
    for n in range(ups.shape[0]):
        x = f @ x + h @ ups[n] + g
        out[n] = x
    return out


def _check_weight(w, name, n, strict):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}")
    if not np.allclose(w, w.T, atol=1e-9 * (1 + np.abs(w).max())):
        raise ValueError(f"{name} must be symmetric")
    lo = float(sla.eigvalsh(w, subset_by_index=[0, 0])[0])
    if strict and lo <= 0:
        raise ValueError(f"{name} must be positive definite")
    if not strict and lo < -1e-10 * (1 + np.abs(w).max()):
        raise ValueError(f"{name} must be positive semidefinite")
    return 0.5 * (w + w.T)


@dataclass(frozen=True)
class Horizon:
    """Discrete dynamics, weights and references for one condensed solve.

    ``f``, ``h``, ``g`` are the ZOH dynamics; the running state/input
    weights and the terminal weight follow the usual quadratic tracking
    cost. ``x_ref``/``u_ref`` stack the references for steps 1..N and
    0..N−1 (None means regulation to the origin). ``actuator_selection``
    maps actuated torques into coordinate space (identity when fully
    actuated) and ``rbar`` carries the per-actuator normalized resistances
    that shape the electrical part of the power terms.
    """

    f: np.ndarray
    h: np.ndarray
    g: np.ndarray
    n_steps: int
    dt: float
    state_weight: np.ndarray
    input_weight: np.ndarray
    terminal_weight: np.ndarray
    x0: np.ndarray
    x_ref: Optional[np.ndarray] = None
    u_ref: Optional[np.ndarray] = None
    actuator_selection: Optional[np.ndarray] = None
    rbar: Optional[np.ndarray] = None

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.f, dtype=float))
        n2 = f.shape[0]
        if f.shape != (n2, n2) or n2 % 2:
            raise ValueError("dynamics must act on an even-sized [q; q̇] state")
        h = np.asarray(self.h, dtype=float).reshape(n2, -1)
        g = np.asarray(self.g, dtype=float).ravel()
        if g.size != n2:
            raise ValueError("offset length must match the state dimension")
        if int(self.n_steps) < 1:
            raise ValueError("horizon must cover at least one step")
        if self.dt <= 0:
            raise ValueError("sample time must be positive")
        n_a = h.shape[1]
        lam = _check_weight(self.state_weight, "state weight", n2, False)
        lam_f = _check_weight(self.terminal_weight, "terminal weight", n2,
                              False)
        phi = _check_weight(self.input_weight, "input weight", n_a, True)
        x0 = np.asarray(self.x0, dtype=float).ravel()
        if x0.size != n2:
            raise ValueError("initial state length must match the dynamics")
        n = int(self.n_steps)
        x_ref = self.x_ref
        if x_ref is not None:
            x_ref = np.asarray(x_ref, dtype=float)
            if x_ref.shape != (n, n2):
                raise ValueError("state reference stack must be N x n_state")
        u_ref = self.u_ref
        if u_ref is not None:
            u_ref = np.asarray(u_ref, dtype=float)
            if u_ref.shape != (n, n_a):
                raise ValueError("input reference stack must be N x n_act")
        sel = self.actuator_selection
        if sel is None:
            if n_a != n2 // 2:
                raise ValueError(
                    "an under-actuated horizon needs an explicit selection")
            sel = np.eye(n_a)
        else:
            sel = np.atleast_2d(np.asarray(sel, dtype=float))
            if sel.shape != (n2 // 2, n_a):
                raise ValueError("selection must be n_q x n_act")
        rbar = self.rbar
        rbar = np.zeros(n_a) if rbar is None else \
            np.asarray(rbar, dtype=float).ravel()
        if rbar.shape != (n_a,) or np.any(rbar < 0):
            raise ValueError("resistances must be nonnegative, one per "
                             "actuator")
        for name, val in (("f", f), ("h", h), ("g", g), ("n_steps", n),
                          ("state_weight", lam), ("input_weight", phi),
                          ("terminal_weight", lam_f), ("x0", x0),
                          ("x_ref", x_ref), ("u_ref", u_ref),
                          ("actuator_selection", sel), ("rbar", rbar)):
            object.__setattr__(self, name, val)

    @property
    def n_state(self) -> int:
        return self.f.shape[0]

    @property
    def n_q(self) -> int:
        return self.f.shape[0] // 2

    @property
    def n_act(self) -> int:
        return self.h.shape[1]


@dataclass
class HorizonMatrices:
    """Everything the condensed problem needs, expressed over the torque
    stack: the block propagator, input map, free response, the quadratic
    cost pieces, the lifted linear rows and the per-step power terms."""

    f_hat: np.ndarray
    h_hat: np.ndarray
    x_bar0: np.ndarray
    g_bar: np.ndarray
    c_z: float
    z_vec: np.ndarray
    z_mat: np.ndarray
    a_neq: Optional[sp.csr_matrix]
    b_neq: Optional[np.ndarray]
    power_terms: List[Tuple[sp.csr_matrix, np.ndarray]]
    w_stack: np.ndarray = field(repr=False, default=None)
    beta: np.ndarray = field(repr=False, default=None)
    f_pows: np.ndarray = field(repr=False, default=None)
    state_rows: Optional[Tuple[np.ndarray, np.ndarray]] = field(
        repr=False, default=None)
    input_state_rows: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]] = \
        field(repr=False, default=())


def _f_powers(horizon: Horizon) -> np.ndarray:
    """F^1 .. F^N stacked along the first axis."""
    n, n2 = horizon.n_steps, horizon.n_state
    pows = np.empty((n, n2, n2))
    pows[0] = horizon.f
    for k in range(1, n):
        pows[k] = horizon.f @ pows[k - 1]
    return pows


def _power_family(horizon: Horizon):
    """(w_stack, beta): the strip blocks W_j = ½Hᵀ(Fᵀ)ʲS_qS shared by all
    per-step power terms, and the free-response actuated velocities."""
    n, n2, n_a = horizon.n_steps, horizon.n_state, horizon.n_act
    sq_s = np.vstack([np.zeros((horizon.n_q, n_a)),
                      horizon.actuator_selection])
    w_stack = np.empty((n, n_a, n_a))
    v = sq_s.copy()
    for j in range(n):
        w_stack[j] = 0.5 * horizon.h.T @ v
        v = horizon.f.T @ v
    beta = np.empty((n, n_a))
    beta[0] = sq_s.T @ horizon.x0
    if n > 1:
        free = rollout(horizon.f, horizon.h, horizon.g, horizon.x0,
                       np.zeros((n - 1, n_a)))
        beta[1:] = free @ sq_s
    return w_stack, beta


def _aggregate_power_term(horizon, w_stack, beta, n):
    """(E_n, χ_n) for the step-n supply constraint, lifted to the stack."""
    n_a, n_tot = horizon.n_act, horizon.n_steps * horizon.n_act
    base = n * n_a
    rows, cols, data = [], [], []
    if n > 0:
        strip = w_stack[:n][::-1].reshape(n * n_a, n_a)
        rr, cc = np.nonzero(strip)
        rows.append(rr)
        cols.append(base + cc)
        data.append(strip[rr, cc])
        rows.append(base + cc)
        cols.append(rr)
        data.append(strip[rr, cc])
    diag = np.flatnonzero(horizon.rbar)
    rows.append(base + diag)
    cols.append(base + diag)
    data.append(horizon.rbar[diag])
    e = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_tot, n_tot))
    chi = np.zeros(n_tot)
    chi[base:base + n_a] = beta[n]
    return e, chi


def _per_joint_power_term(horizon, w_stack, beta, n, i):
    """(E, χ) for actuator i's own power at step n, over the full stack."""
    n_a, n_tot = horizon.n_act, horizon.n_steps * horizon.n_act
    col = n * n_a + i
    rows, cols, data = [], [], []
    if n > 0:
        strip_col = w_stack[:n][::-1][:, :, i].reshape(n * n_a)
        rr = np.flatnonzero(strip_col)
        rows.append(rr)
        cols.append(np.full(rr.size, col))
        data.append(strip_col[rr])
        rows.append(np.full(rr.size, col))
        cols.append(rr)
        data.append(strip_col[rr])
    if horizon.rbar[i]:
        rows.append(np.array([col]))
        cols.append(np.array([col]))
        data.append(np.array([horizon.rbar[i]]))
    if rows:
        e = sp.csr_matrix((np.concatenate(data),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n_tot, n_tot))
    else:
        e = sp.csr_matrix((n_tot, n_tot))
    chi = np.zeros(n_tot)
    chi[col] = beta[n, i]
    return e, chi


def power_constraint_terms(horizon: Horizon, n: int):
    """(E_n, χ_n) such that ΥᵀE_nΥ + χ_nᵀΥ is the step-n aggregate power
    q̇_aᵀυ_n + υ_nᵀdiag(r̄)υ_n, as a function of the whole torque stack."""
    if not 0 <= n < horizon.n_steps:
        raise ValueError("step index outside the horizon")
    w_stack, beta = _power_family(horizon)
    return _aggregate_power_term(horizon, w_stack, beta, n)


def _strip_shift(horizon, strip, omega_diag, support_rows, tip_cols):
    """Nonnegative diagonal d with E + diag(d) ⪰ 0 for an arrow matrix
    [[0, C], [Cᵀ, Ω]]; d is the −λ_min of the compressed block, placed only
    on the coordinates the constraint touches."""
    n_tot = horizon.n_steps * horizon.n_act
    d = np.zeros(n_tot)
    if strip.size == 0:
        return d
    _, sv, vt = np.linalg.svd(strip, full_matrices=False)
    svvt = sv[:, None] * vt
    r = sv.size
    small = np.block([[np.zeros((r, r)), svvt],
                      [svvt.T, np.diag(omega_diag)]])
    lo = float(sla.eigvalsh(small, subset_by_index=[0, 0])[0])
    if lo >= 0:
        return d
    support = np.union1d(support_rows, tip_cols)
    d[support] = -lo
    return d


def power_constraint_shifts(variant: str, horizon: Horizon,
                            budget: PowerBudget) -> List[np.ndarray]:
    """Concavity shifts matching build_controller's quadratic constraints,
    one diagonal per constraint, supported only where the constraint is."""
    w_stack, beta = _power_family(horizon)
    n_a = horizon.n_act
    shifts = []
    if variant == "C1_dynamic":
        omega = horizon.rbar
        for n in range(horizon.n_steps):
            strip = w_stack[:n][::-1].reshape(n * n_a, n_a)
            rr = np.flatnonzero(np.abs(strip).sum(axis=1))
            tip = n * n_a + np.arange(n_a)
            shifts.append(_strip_shift(horizon, strip, omega, rr, tip))
        return shifts
    if variant == "C2_static_exact":
        n_tot = horizon.n_steps * n_a
        for n in range(horizon.n_steps):
            for i in range(n_a):
                col = np.atleast_1d(n * n_a + i)
                strip_col = w_stack[:n][::-1][:, :, i].reshape(n * n_a) \
                    if n > 0 else np.zeros(0)
                norm = float(np.linalg.norm(strip_col))
                d = np.zeros(n_tot)
                if norm > 0:
                    r_i = horizon.rbar[i]
                    # arrow with a scalar tip: the negative eigenvalue is
                    # (r − sqrt(r² + 4‖c‖²)) / 2 in closed form
                    lo = 0.5 * (r_i - np.sqrt(r_i * r_i + 4 * norm * norm))
                    support = np.union1d(np.flatnonzero(strip_col), col)
                    d[support] = -lo
                shifts.append(d)
        return shifts
    if variant == "C3_static_approx":
        return []
    raise ValueError(f"unknown controller variant: {variant!r}")


def assemble_cost(horizon: Horizon):
    """(c_z, z, Z) with J(Υ) = c_z + zᵀΥ + ΥᵀZΥ over the torque stack.

    The step-0 state term is a constant and is left out, so this matches
    the summed rollout cost up to that additive constant (exactly, when
    comparing differences between torque sequences).
    """
    m = horizon_matrices(horizon)
    return m.c_z, m.z_vec, m.z_mat


def lift_linear_constraints(a_neq, b_neq, horizon: Horizon,
                            matrices: Optional[HorizonMatrices] = None):
    """Rows a_neq x_k ≤ b_neq for k = 1..N, expressed over the stack."""
    a_neq = np.atleast_2d(np.asarray(a_neq, dtype=float))
    b_neq = np.asarray(b_neq, dtype=float).ravel()
    if a_neq.size == 0:
        return np.zeros((0, horizon.n_steps * horizon.n_act)), np.zeros(0)
    if a_neq.shape != (b_neq.size, horizon.n_state):
        raise ValueError("constraint row dimensions disagree")
    if matrices is None:
        matrices = horizon_matrices(horizon)
    n, n2 = horizon.n_steps, horizon.n_state
    h3 = matrices.h_hat.reshape(n, n2, n * horizon.n_act)
    a_rows = np.einsum("ij,njk->nik", a_neq, h3).reshape(-1, h3.shape[2])
    offset = (matrices.x_bar0 + matrices.g_bar).reshape(n, n2)
    b_rows = (b_neq[None, :] - offset @ a_neq.T).ravel()
    return a_rows, b_rows


def lift_input_state_constraints(groups, horizon: Horizon,
                                 matrices: Optional[HorizonMatrices] = None):
    """Rows a_x x_n + a_u υ_n ≤ b for n = 0..N−1 over the stack.

    ``groups`` is a sequence of (a_x, a_u, b); the step-n row pairs the
    held torque υ_n with the state x_n it is applied from (x_0 being the
    fixed initial state, whose contribution lands on the right-hand side).
    """
    if matrices is None:
        matrices = horizon_matrices(horizon)
    n, n2, n_a = horizon.n_steps, horizon.n_state, horizon.n_act
    n_tot = n * n_a
    h3 = matrices.h_hat.reshape(n, n2, n_tot)
    offset = (matrices.x_bar0 + matrices.g_bar).reshape(n, n2)
    blocks_a, blocks_b = [], []
    for a_x, a_u, b in groups:
        a_x = np.atleast_2d(np.asarray(a_x, dtype=float))
        a_u = np.atleast_2d(np.asarray(a_u, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        m = b.size
        if a_x.shape != (m, n2) or a_u.shape != (m, n_a):
            raise ValueError("mixed constraint row dimensions disagree")
        rows = np.zeros((n, m, n_tot))
        rhs = np.empty((n, m))
        rows[0, :, :n_a] = a_u
        rhs[0] = b - a_x @ horizon.x0
        for k in range(1, n):
            rows[k] = a_x @ h3[k - 1]
            rows[k, :, k * n_a:(k + 1) * n_a] += a_u
            rhs[k] = b - a_x @ offset[k - 1]
        blocks_a.append(rows.reshape(n * m, n_tot))
        blocks_b.append(rhs.ravel())
    if not blocks_a:
        return np.zeros((0, n_tot)), np.zeros(0)
    return np.vstack(blocks_a), np.concatenate(blocks_b)


def horizon_matrices(horizon: Horizon, state_rows=None,
                     input_state_rows=()) -> HorizonMatrices:
    """Condense the horizon: propagators, cost pieces, lifted linear rows
    (state rows hold for k = 1..N, mixed rows pair υ_n with x_n) and the
    per-step aggregate power terms."""
    n, n2, n_a = horizon.n_steps, horizon.n_state, horizon.n_act
    n_tot = n * n_a
    f_pows = _f_powers(horizon)
    x_bar0 = (f_pows @ horizon.x0).ravel()

    f_hat = np.zeros((n * n2, n * n2))
    eye = np.eye(n2)
    for d in range(n):
        blk = eye if d == 0 else f_pows[d - 1]
        for c in range(n - d):
            r = c + d
            f_hat[r * n2:(r + 1) * n2, c * n2:(c + 1) * n2] = blk

    g_cum = np.empty((n, n2))
    acc = np.zeros(n2)
    for k in range(n):
        acc = horizon.f @ acc + horizon.g if k else horizon.g.copy()
        g_cum[k] = acc
    g_bar = g_cum.ravel()

    h_hat = np.empty((n * n2, n_tot))
    for c in range(n):
        h_hat[:, c * n_a:(c + 1) * n_a] = \
            f_hat[:, c * n2:(c + 1) * n2] @ horizon.h

    # blockwise Λ̃ = (Λ, ..., Λ, Λ_f) application, then the condensed cost
    weighted = np.empty_like(h_hat)
    for k in range(n):
        w = horizon.state_weight if k < n - 1 else horizon.terminal_weight
        weighted[k * n2:(k + 1) * n2] = w @ h_hat[k * n2:(k + 1) * n2]
    z_mat = h_hat.T @ weighted
    for k in range(n):
        sl = slice(k * n_a, (k + 1) * n_a)
        z_mat[sl, sl] += horizon.input_weight

    x_ref_flat = np.zeros(n * n2) if horizon.x_ref is None \
        else horizon.x_ref.ravel()
    u_ref_flat = np.zeros(n_tot) if horizon.u_ref is None \
        else horizon.u_ref.ravel()
    err = x_bar0 + g_bar - x_ref_flat
    werr = np.empty_like(err)
    for k in range(n):
        w = horizon.state_weight if k < n - 1 else horizon.terminal_weight
        werr[k * n2:(k + 1) * n2] = w @ err[k * n2:(k + 1) * n2]
    phi_u_ref = np.empty_like(u_ref_flat)
    for k in range(n):
        sl = slice(k * n_a, (k + 1) * n_a)
        phi_u_ref[sl] = horizon.input_weight @ u_ref_flat[sl]
    c_z = float(err @ werr) + float(u_ref_flat @ phi_u_ref)
    z_vec = 2.0 * (werr @ h_hat) - 2.0 * phi_u_ref

    w_stack, beta = _power_family(horizon)
    power_terms = [_aggregate_power_term(horizon, w_stack, beta, k)
                   for k in range(n)]

    mats = HorizonMatrices(
        f_hat=f_hat, h_hat=h_hat, x_bar0=x_bar0, g_bar=g_bar, c_z=c_z,
        z_vec=z_vec, z_mat=z_mat, a_neq=None, b_neq=None,
        power_terms=power_terms, w_stack=w_stack, beta=beta, f_pows=f_pows,
        state_rows=None, input_state_rows=tuple(input_state_rows))

    blocks_a, blocks_b = [], []
    if state_rows is not None:
        a_s = np.atleast_2d(np.asarray(state_rows[0], dtype=float))
        b_s = np.asarray(state_rows[1], dtype=float).ravel()
        mats.state_rows = (a_s, b_s)
        a_rows, b_rows = lift_linear_constraints(a_s, b_s, horizon, mats)
        blocks_a.append(a_rows)
        blocks_b.append(b_rows)
    if input_state_rows:
        a_rows, b_rows = lift_input_state_constraints(
            input_state_rows, horizon, mats)
        blocks_a.append(a_rows)
        blocks_b.append(b_rows)
    if blocks_a:
        mats.a_neq = sp.csr_matrix(np.vstack(blocks_a))
        mats.b_neq = np.concatenate(blocks_b)
    return mats


def with_initial_state(horizon: Horizon, matrices: HorizonMatrices,
                       x0) -> Tuple[Horizon, HorizonMatrices]:
    """Re-anchor condensed matrices on a new initial state.

    Everything that depends only on the dynamics and weights (propagators,
    Z, the lifted row directions, the power quadratics) is shared with the
    input; the free response, cost offsets, row right-hand sides and power
    linear terms are recomputed. This is what makes a receding-horizon loop
    affordable."""
    new_h = Horizon(horizon.f, horizon.h, horizon.g, horizon.n_steps,
                    horizon.dt, horizon.state_weight, horizon.input_weight,
                    horizon.terminal_weight, x0, horizon.x_ref,
                    horizon.u_ref, horizon.actuator_selection, horizon.rbar)
    n, n2, n_a = new_h.n_steps, new_h.n_state, new_h.n_act
    x_bar0 = (matrices.f_pows @ new_h.x0).ravel()

    x_ref_flat = np.zeros(n * n2) if new_h.x_ref is None \
        else new_h.x_ref.ravel()
    u_ref_flat = np.zeros(n * n_a) if new_h.u_ref is None \
        else new_h.u_ref.ravel()
    err = x_bar0 + matrices.g_bar - x_ref_flat
    werr = np.empty_like(err)
    for k in range(n):
        w = new_h.state_weight if k < n - 1 else new_h.terminal_weight
        werr[k * n2:(k + 1) * n2] = w @ err[k * n2:(k + 1) * n2]
    phi_u_ref = np.empty_like(u_ref_flat)
    for k in range(n):
        sl = slice(k * n_a, (k + 1) * n_a)
        phi_u_ref[sl] = new_h.input_weight @ u_ref_flat[sl]
    c_z = float(err @ werr) + float(u_ref_flat @ phi_u_ref)
    z_vec = 2.0 * (werr @ matrices.h_hat) - 2.0 * phi_u_ref

    _, beta = _power_family(new_h)
    power_terms = []
    for k, (e, _) in enumerate(matrices.power_terms):
        chi = np.zeros(n * n_a)
        chi[k * n_a:(k + 1) * n_a] = beta[k]
        power_terms.append((e, chi))

    mats = HorizonMatrices(
        f_hat=matrices.f_hat, h_hat=matrices.h_hat, x_bar0=x_bar0,
        g_bar=matrices.g_bar, c_z=c_z, z_vec=z_vec, z_mat=matrices.z_mat,
        a_neq=matrices.a_neq, b_neq=matrices.b_neq, power_terms=power_terms,
        w_stack=matrices.w_stack, beta=beta, f_pows=matrices.f_pows,
        state_rows=matrices.state_rows,
        input_state_rows=matrices.input_state_rows)

    offset = (x_bar0 + matrices.g_bar).reshape(n, n2)
    blocks_b = []
    if matrices.state_rows is not None:
        a_s, b_s = matrices.state_rows
        blocks_b.append((b_s[None, :] - offset @ a_s.T).ravel())
    for a_x, a_u, b in matrices.input_state_rows:
        a_x = np.atleast_2d(np.asarray(a_x, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        rhs = np.empty((n, b.size))
        rhs[0] = b - a_x @ new_h.x0
        rhs[1:] = b[None, :] - offset[:-1] @ a_x.T
        blocks_b.append(rhs.ravel())
    if blocks_b:
        mats.b_neq = np.concatenate(blocks_b)
    return new_h, mats


def _budget_consistent(horizon: Horizon, budget: PowerBudget):
    if budget.n_joints != horizon.n_act:
        raise ValueError("budget channel count must match the actuators")
    if not np.allclose(np.asarray(budget.normalized_resistance),
                       horizon.rbar, rtol=1e-12, atol=1e-12):
        raise ValueError("budget resistances disagree with the horizon")


def build_controller(variant: str, horizon: Horizon, budget: PowerBudget,
                     matrices: Optional[HorizonMatrices] = None,
                     symmetric_approx: bool = True) -> QPProblem:
    """Condensed problem for one power-model variant.

    C1_dynamic keeps the shared supply as one aggregate quadratic per step,
    C2_static_exact splits it into per-actuator quadratics against fixed
    shares, C3_static_approx replaces it with the constant torque bound
    P̄_i/v̄_i (two-sided by default; ``symmetric_approx=False`` keeps only
    the positive side).
    """
    if variant not in CONTROLLER_VARIANTS:
        raise ValueError(f"unknown controller variant: {variant!r}")
    _budget_consistent(horizon, budget)
    if matrices is None:
        matrices = horizon_matrices(horizon)
    n, n_a = horizon.n_steps, horizon.n_act
    n_tot = n * n_a
    ineq = None if matrices.a_neq is None \
        else (matrices.a_neq, matrices.b_neq)
    pbar = np.asarray(budget.per_joint_limit, dtype=float)

    if variant == "C1_dynamic":
        quads = [(e, chi, float(budget.aggregate_limit))
                 for e, chi in matrices.power_terms]
        return QPProblem(2.0 * matrices.z_mat, matrices.z_vec, ineq, quads)

    if variant == "C2_static_exact":
        quads = []
        for k in range(n):
            for i in range(n_a):
                e, chi = _per_joint_power_term(
                    horizon, matrices.w_stack, matrices.beta, k, i)
                quads.append((e, chi, float(pbar[i])))
        return QPProblem(2.0 * matrices.z_mat, matrices.z_vec, ineq, quads)

    if budget.no_load_speed is None:
        raise ValueError("the torque-bound variant needs no-load speeds")
    bound = pbar / np.asarray(budget.no_load_speed, dtype=float)
    bounds_tiled = np.tile(bound, n)
    pos = sp.identity(n_tot, format="csr")
    if symmetric_approx:
        extra_a = sp.vstack([pos, -pos], format="csr")
        extra_b = np.concatenate([bounds_tiled, bounds_tiled])
    else:
        extra_a, extra_b = pos, bounds_tiled
    if ineq is None:
        ineq = (extra_a, extra_b)
    else:
        ineq = (sp.vstack([ineq[0], extra_a], format="csr"),
                np.concatenate([ineq[1], extra_b]))
    return QPProblem(2.0 * matrices.z_mat, matrices.z_vec, ineq, ())


@dataclass
class ControllerSolution:
    """One solved variant: the torque plan, its condensed-cost value and
    solver diagnostics."""

    variant: str
    ups: np.ndarray
    objective: float
    status: str
    diagnostics: Dict[str, float] = field(default_factory=dict)


def _exact_feasible(problem: QPProblem, y, tol=1e-7) -> bool:
    if problem.ineq is not None:
        a, b = problem.ineq
        resid = np.asarray(a @ y).ravel() - b
        if resid.size and resid.max() > tol * (1 + float(np.abs(y).max())):
            return False
    for e, chi, c in problem.quad_ineq:
        val = float(y @ np.asarray(e @ y).ravel()) + float(chi @ y)
        if val - c > tol * (1 + abs(c)):
            return False
    return True


def solve_controller(variant: str, horizon: Horizon, budget: PowerBudget,
                     matrices: Optional[HorizonMatrices] = None,
                     start: Optional[np.ndarray] = None,
                     trust_radius: float = 60.0, max_outer: int = 80,
                     qp_max_iter: int = 6000,
                     symmetric_approx: bool = True,
                     hess_chol=None) -> ControllerSolution:
    """Build and solve one variant; returns the planned torque stack.

    The indefinite variants need a feasible starting stack; ``start`` (for
    instance another variant's solution) is scaled toward zero until it
    satisfies every constraint, the all-zero stack being the fallback.
    """
    if matrices is None:
        matrices = horizon_matrices(horizon)
    problem = build_controller(variant, horizon, budget, matrices,
                               symmetric_approx)
    n, n_a = horizon.n_steps, horizon.n_act
    if hess_chol is None:
        hess_chol = factor_hessian(problem.hessian)

    if variant == "C3_static_approx":
        res = solve_qp(problem, hess_chol=hess_chol, max_iter=qp_max_iter)
        if res.status == "infeasible":
            raise RuntimeError("torque-bound variant is infeasible")
        return ControllerSolution(
            variant, res.y.reshape(n, n_a), res.objective + matrices.c_z,
            res.status, {"n_iter": float(res.n_iter),
                         "kkt_residual": res.kkt_residual})

    y0 = np.zeros(n * n_a)
    if not _exact_feasible(problem, y0):
        raise RuntimeError(
            "the zero torque stack violates the lifted constraints; no "
            "feasible starting point is known for this horizon")
    if start is not None:
        cand = np.asarray(start, dtype=float).ravel()
        if cand.size != n * n_a:
            raise ValueError("starting stack has the wrong length")
        t = 1.0
        for _ in range(200):
            if _exact_feasible(problem, t * cand):
                y0 = t * cand
                break
            t *= 0.9

    shifts = power_constraint_shifts(variant, horizon, budget)
    res = solve_qcqp_nonconvex(
        problem, y0, trust_radius=trust_radius, max_outer=max_outer,
        concavity_shifts=shifts, hess_chol=hess_chol,
        subproblem_polish=False, qp_max_iter=qp_max_iter)
    if res.status == "infeasible":
        raise RuntimeError(f"{variant}: no feasible point survived the "
                           "start-scaling loop")
    return ControllerSolution(
        variant, res.y.reshape(n, n_a), res.objective + matrices.c_z,
        res.status, {"n_outer": float(res.n_outer),
                     "improvement": float(res.history[0] - res.history[-1])})


def _cost_to_go(horizon: Horizon, states: np.ndarray,
                ups: np.ndarray) -> np.ndarray:
    """Tail cost at each sample of a playback (length N+1); the step-0
    state reference falls back on the first stacked reference."""
    n, n2 = horizon.n_steps, horizon.n_state
    x_ref = np.zeros((n, n2)) if horizon.x_ref is None else horizon.x_ref
    u_ref = np.zeros_like(ups) if horizon.u_ref is None else horizon.u_ref
    dx0 = horizon.x0 - x_ref[0]
    stage = np.empty(n)
    for k in range(n):
        dxk = (states[k - 1] - x_ref[k - 1]) if k else dx0
        duk = ups[k] - u_ref[k]
        stage[k] = float(dxk @ horizon.state_weight @ dxk) + \
            float(duk @ horizon.input_weight @ duk)
    dxn = states[n - 1] - x_ref[n - 1]
    terminal = float(dxn @ horizon.terminal_weight @ dxn)
    out = np.empty(n + 1)
    out[n] = terminal
    for k in range(n - 1, -1, -1):
        out[k] = out[k + 1] + stage[k]
    return out


def playback(horizon: Horizon, ups: np.ndarray,
             budget: PowerBudget) -> TrajectoryLog:
    """Open-loop application of a torque plan through the discrete
    dynamics. Step-n power pairs υ_n with the velocity it is applied from;
    the final sample carries zero torque and the terminal cost only."""
    ups = np.asarray(ups, dtype=float).reshape(horizon.n_steps,
                                               horizon.n_act)
    states = rollout(horizon.f, horizon.h, horizon.g, horizon.x0, ups)
    all_x = np.vstack([horizon.x0, states])
    n_q = horizon.n_q
    q, qd = all_x[:, :n_q], all_x[:, n_q:]
    u = np.vstack([ups, np.zeros(horizon.n_act)])
    qd_act = qd @ horizon.actuator_selection
    rbar = np.asarray(budget.normalized_resistance)
    p = qd_act * u + rbar * u * u
    times = np.arange(horizon.n_steps + 1) * horizon.dt
    return TrajectoryLog(times, q, qd, u, u.copy(), p, p.sum(axis=1),
                         {"cost_to_go": _cost_to_go(horizon, states, ups)})


def receding_horizon(variant: str, horizon: Horizon, budget: PowerBudget,
                     steps: int,
                     matrices: Optional[HorizonMatrices] = None,
                     **solve_kwargs) -> TrajectoryLog:
    """Re-solve every step and apply only the first torque.

    Each step re-anchors the condensed matrices on the measured state and
    warm-starts from the previous plan shifted by one step. The cost of a
    full solve per step makes this mode a robustness tool, not the default
    reproduction path."""
    if steps < 1:
        raise ValueError("need at least one closed-loop step")
    if matrices is None:
        matrices = horizon_matrices(horizon)
    n, n_a, n_q = horizon.n_steps, horizon.n_act, horizon.n_q
    hess_chol = factor_hessian(2.0 * matrices.z_mat)
    x = horizon.x0.copy()
    cur_h, cur_m = horizon, matrices
    prev = None
    q = np.empty((steps + 1, n_q))
    qd = np.empty((steps + 1, n_q))
    u = np.zeros((steps + 1, n_a))
    cost = np.empty(steps + 1)
    for k in range(steps):
        q[k], qd[k] = x[:n_q], x[n_q:]
        sol = solve_controller(variant, cur_h, budget, cur_m, start=prev,
                               hess_chol=hess_chol, **solve_kwargs)
        u[k] = sol.ups[0]
        cost[k] = sol.objective
        prev = np.vstack([sol.ups[1:], np.zeros(n_a)]).ravel()
        x = horizon.f @ x + horizon.h @ u[k] + horizon.g
        cur_h, cur_m = with_initial_state(horizon, matrices, x)
    q[steps], qd[steps] = x[:n_q], x[n_q:]
    cost[steps] = cost[steps - 1]
    qd_act = qd @ horizon.actuator_selection
    rbar = np.asarray(budget.normalized_resistance)
    p = qd_act * u + rbar * u * u
    times = np.arange(steps + 1) * horizon.dt
    return TrajectoryLog(times, q, qd, u, u.copy(), p, p.sum(axis=1),
                         {"cost_to_go": cost})


_FIN_X0 = (0.5, -0.16, 0.08, 0.28, 0.0, 0.0, 0.0, 0.0)


def fin_horizon(n_steps: int = 300, dt: float = 1e-3, x0=_FIN_X0,
                rbar: float = 0.0056) -> Horizon:
    """Four identical power-sharing actuators, each a damped inertia."""
    plant = fin_system_model()
    f_c, h_c, g_c = linear_to_statespace(plant)
    f, h, g = discretize_zoh(f_c, h_c, g_c, dt)
    lam = np.diag([2.0] * 4 + [dt] * 4) * (0.5 / dt ** 2)
    phi = np.eye(4)
    lam_f = np.diag([0.1] * 4 + [dt] * 4) * (10.0 / dt ** 2)
    return Horizon(f, h, g, n_steps, dt, lam, phi, lam_f,
                   np.asarray(x0, dtype=float), rbar=np.full(4, rbar))


def fin_constraint_rows(u_peak: float = 180.0, u_stall: float = 500.0,
                        qdot_max: float = 4.0, n_act: int = 4):
    """(state_rows, mixed_groups): speed bounds |q̇| ≤ q̇_max plus the
    torque-speed curve |u_i + (u_stall/q̇_max)·q̇_i| ≤ u_stall and the peak
    torque bound |u_i| ≤ ū."""
    n = n_act
    eye, zero = np.eye(n), np.zeros((n, n))
    a_state = np.block([[zero, eye], [zero, -eye]])
    b_state = np.full(2 * n, qdot_max)
    slope = u_stall / qdot_max
    groups = [
        (np.hstack([zero, slope * eye]), eye, np.full(n, u_stall)),
        (np.hstack([zero, -slope * eye]), -eye, np.full(n, u_stall)),
        (np.hstack([zero, zero]), eye, np.full(n, u_peak)),
        (np.hstack([zero, zero]), -eye, np.full(n, u_peak)),
    ]
    return (a_state, b_state), groups


def run_fin_example(mode: str = "single-shot", n_steps: int = 300,
                    dt: float = 1e-3, x0=_FIN_X0, p_max: float = 750.0,
                    rbar: float = 0.0056, u_peak: float = 180.0,
                    u_stall: float = 500.0, qdot_max: float = 4.0,
                    receding_steps: Optional[int] = None,
                    trust_radius: float = 60.0,
                    max_outer: int = 80) -> Dict[str, dict]:
    """Solve the four-fin regulation task with all three power models.

    Single-shot mode solves one horizon per variant and plays the plan
    back open loop; receding mode re-solves every step. The variants are
    chained: the torque-bound solution seeds the per-actuator one, whose
    solution is feasible for the aggregate problem (the shares sum to the
    supply limit), so the refined costs can only go down along the chain.
    """
    if mode not in ("single-shot", "receding"):
        raise ValueError("mode must be 'single-shot' or 'receding'")
    horizon = fin_horizon(n_steps, dt, x0, rbar)
    budget = PowerBudget(per_joint_limit=(p_max / 4.0,) * 4,
                         normalized_resistance=(rbar,) * 4,
                         no_load_speed=(qdot_max,) * 4)
    state_rows, groups = fin_constraint_rows(u_peak, u_stall, qdot_max)
    matrices = horizon_matrices(horizon, state_rows, groups)

    results: Dict[str, dict] = {"horizon": horizon, "budget": budget,
                                "matrices": matrices, "mode": mode}
    if mode == "receding":
        steps = n_steps if receding_steps is None else int(receding_steps)
        for variant in CONTROLLER_VARIANTS:
            log = receding_horizon(variant, horizon, budget, steps, matrices,
                                   trust_radius=trust_radius,
                                   max_outer=max_outer)
            results[variant] = {
                "log": log,
                "objective": float(log.scalars["cost_to_go"][0]),
                "settling_times": _settling_per_joint(log),
            }
        return results

    hess_chol = factor_hessian(2.0 * matrices.z_mat)
    start = None
    for variant in ("C3_static_approx", "C2_static_exact", "C1_dynamic"):
        sol = solve_controller(variant, horizon, budget, matrices,
                               start=start, trust_radius=trust_radius,
                               max_outer=max_outer, hess_chol=hess_chol)
        log = playback(horizon, sol.ups, budget)
        results[variant] = {
            "solution": sol,
            "log": log,
            "objective": sol.objective,
            "settling_times": _settling_per_joint(log),
        }
        start = sol.ups.ravel()
    return results


def _settling_per_joint(log: TrajectoryLog) -> List[Optional[float]]:
    return [settling_time(log.times, log.q[:, j], 0.0, pct=5.0)
            for j in range(log.q.shape[1])]


def fin_results_to_files(results: Dict[str, dict], out_dir) -> List[Path]:
    """One CSV per variant plus a summary JSON; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = {"mode": results.get("mode", "single-shot"), "variants": {}}
    for variant in CONTROLLER_VARIANTS:
        if variant not in results:
            continue
        entry = results[variant]
        path = out / f"fin_{variant}.csv"
        entry["log"].to_csv(path)
        written.append(path)
        summary["variants"][variant] = {
            "objective": float(entry["objective"]),
            "max_total_power": entry["log"].max_total_power(),
            "settling_times": entry["settling_times"],
        }
    path = out / "fin_summary.json"
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
    written.append(path)
    return written


_FIN_CONFIG_KEYS = {"mode", "n_steps", "dt", "x0", "p_max", "rbar",
                    "u_peak", "u_stall", "qdot_max", "receding_steps",
                    "trust_radius", "max_outer"}


def fin_example_from_config(source) -> Dict[str, dict]:
    """Run the fin task from a JSON path or a dict of overrides."""
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            params = json.load(fh)
    else:
        params = dict(source)
    unknown = set(params) - _FIN_CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown fin-task settings: {sorted(unknown)}")
    return run_fin_example(**params)
