"""Self-contained numerical kernel: QP, convex QCQP, non-convex QCQP, roots.

The QP engine is a dense primal active-set method. The hessian is factored
once per solve (or supplied prefactored) and working-set changes reuse it
through an incrementally maintained Schur complement, so warm-started
re-solves are cheap. Convex quadratic inequality constraints are handled by
accumulating tangent cuts and polishing the identified active set with
Newton iterations on the exact KKT system. Non-convex quadratic constraints
go through sequential convexification with an infinity-norm trust region;
steps are accepted only when the exact constraints hold at the candidate
and the objective dropped.

Everything is deterministic: fixed iteration order, lowest-index tie breaks,
no randomized pivoting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

_RIDGE = 1e-10          # hessian regularization floor
_EPS = float(np.finfo(float).eps)
_DUAL_TOL = 1e-9


@dataclass
class QPProblem:
    """min 0.5 yᵀHy + gᵀy  s.t.  A y ≤ b,  yᵀE_jy + χ_jᵀy ≤ c_j.

    ``ineq`` is an (A, b) pair where A may be a dense array or any scipy
    sparse matrix; ``quad_ineq`` is a sequence of (E, χ, c) triples with E
    symmetric (dense or sparse).
    """

    hessian: np.ndarray
    linear: np.ndarray
    ineq: Optional[Tuple[object, np.ndarray]] = None
    quad_ineq: Sequence[Tuple[object, np.ndarray, float]] = ()

    def __post_init__(self):
        self.hessian = np.asarray(self.hessian, dtype=float)
        self.linear = np.asarray(self.linear, dtype=float).ravel()
        n = self.linear.size
        if self.hessian.shape != (n, n):
            raise ValueError("hessian and linear term sizes disagree")
        if not np.allclose(self.hessian, self.hessian.T,
                           atol=1e-9 * (1 + np.abs(self.hessian).max())):
            raise ValueError("hessian must be symmetric")
        if self.ineq is not None:
            a, b = self.ineq
            b = np.asarray(b, dtype=float).ravel()
            if a.shape != (b.size, n):
                raise ValueError("inequality dimensions inconsistent")
            self.ineq = (a, b)

    @property
    def n(self) -> int:
        return self.linear.size


@dataclass
class QPResult:
    y: np.ndarray
    duals: np.ndarray            # one per linear row
    quad_duals: np.ndarray       # one per quadratic constraint
    status: str                  # optimal | infeasible | max_iter
    n_iter: int
    kkt_residual: float
    working_set: List[int] = field(default_factory=list)
    objective: float = math.nan


class _RowStack:
    """Linear rows A y ≤ b: a fixed base block plus appended dense rows."""

    def __init__(self, a, b):
        if a is None:
            self.a = None
            self.b = np.zeros(0)
        else:
            self.a = a.tocsr() if sp.issparse(a) else np.atleast_2d(
                np.asarray(a, dtype=float))
            self.b = np.asarray(b, dtype=float).ravel()
        self._extra: List[np.ndarray] = []
        self._extra_b: List[float] = []
        self._extra_arr: Optional[np.ndarray] = None

    @property
    def m_base(self) -> int:
        return 0 if self.a is None else self.a.shape[0]

    @property
    def m(self) -> int:
        return self.m_base + len(self._extra)

    def append(self, row: np.ndarray, rhs: float) -> int:
        self._extra.append(np.asarray(row, dtype=float).ravel())
        self._extra_b.append(float(rhs))
        self._extra_arr = None
        return self.m - 1

    def row(self, i: int) -> np.ndarray:
        if i < self.m_base:
            r = self.a[i]
            return r.toarray().ravel() if sp.issparse(self.a) else np.array(r)
        return self._extra[i - self.m_base]

    def rhs(self, i: int) -> float:
        if i < self.m_base:
            return float(self.b[i])
        return self._extra_b[i - self.m_base]

    def rhs_all(self) -> np.ndarray:
        if not self._extra_b:
            return self.b
        return np.concatenate([self.b, np.asarray(self._extra_b)])

    def matvec(self, y: np.ndarray) -> np.ndarray:
        parts = []
        if self.a is not None:
            parts.append(np.asarray(self.a @ y).ravel())
        if self._extra:
            if self._extra_arr is None:
                self._extra_arr = np.asarray(self._extra)
            parts.append(self._extra_arr @ y)
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts) if len(parts) > 1 else parts[0]


def factor_hessian(h: np.ndarray):
    """Prefactor hessian + ridge for repeated solve_qp calls.

    The unused triangle is zeroed so the factor can also reconstruct
    products H y, which scipy's raw cho_factor output cannot.
    """
    n = h.shape[0]
    c, _ = sla.cho_factor(h + _RIDGE * np.eye(n), lower=True)
    return (np.tril(c), True)


def _hess_mul(hess_chol, y):
    # H y from the (ridge-included, tril-cleaned) factor: H = L Lᵀ
    l, lower = hess_chol
    if lower:
        return l @ (l.T @ y)
    return l.T @ (l @ y)


class _ActiveSetState:
    """Primal active-set iteration over a (growable) row stack.

    The working set, its dense rows, the columns K = H⁻¹A_Wᵀ and a Cholesky
    factor of the Schur complement A_W K all live on the instance, so a
    caller can append rows to the stack, move the iterate to another
    feasible point, and resume without rebuilding any factorization state.
    The factor is maintained incrementally: a push appends one column via a
    triangular solve, a pop re-triangularizes the trailing block with Givens
    rotations, both O(|W|²). The hessian enters only through its Cholesky
    factor. Lowest-index tie breaking; Bland's rule engages after a stall,
    ruling out cycling.
    """

    def __init__(self, hess_chol, g, rows: _RowStack, y0, w0=()):
        self.hess_chol = hess_chol
        self.g = np.asarray(g, dtype=float)
        self.rows = rows
        self.y = np.asarray(y0, dtype=float).copy()
        self.n = self.y.size
        self.w: List[int] = []
        self._cap = 64
        self.a_mat = np.empty((self._cap, self.n))   # rows of A_W
        self.k_mat = np.empty((self._cap, self.n))   # rows are columns of K
        self.l_mat = np.zeros((self._cap, self._cap))
        self.b_w = np.empty(self._cap)
        self._fk = 0        # leading rows covered by the valid factor
        for i in w0:
            self.push(i)

    def _grow(self, need):
        cap = self._cap
        while cap < need:
            cap *= 2
        k = len(self.w)
        for name in ("a_mat", "k_mat"):
            old = getattr(self, name)
            new = np.empty((cap, self.n))
            new[:k] = old[:k]
            setattr(self, name, new)
        l_new = np.zeros((cap, cap))
        l_new[:self._fk, :self._fk] = self.l_mat[:self._fk, :self._fk]
        self.l_mat = l_new
        b_new = np.empty(cap)
        b_new[:k] = self.b_w[:k]
        self.b_w = b_new
        self._cap = cap

    def push(self, i):
        k = len(self.w)
        if k + 1 > self._cap:
            self._grow(k + 1)
        ai = self.rows.row(i)
        self.a_mat[k] = ai
        self.k_mat[k] = sla.cho_solve(self.hess_chol, ai,
                                      check_finite=False)
        self.b_w[k] = self.rows.rhs(i)
        self.w.append(i)
        # the factor is extended lazily in _extend_factor

    def _extend_factor(self) -> bool:
        """Grow the Schur factor to cover every working row; False when a
        (numerically) dependent row blocks it."""
        while self._fk < len(self.w):
            t = self._fk
            s_col = self.a_mat[:t] @ self.k_mat[t]
            diag = float(self.a_mat[t] @ self.k_mat[t])
            if t:
                x = sla.solve_triangular(self.l_mat[:t, :t], s_col,
                                         lower=True, check_finite=False)
                d2 = diag - float(x @ x)
            else:
                x = s_col
                d2 = diag
            if d2 <= 1e-13 * max(abs(diag), 1e-300):
                return False
            self.l_mat[t, :t] = x
            self.l_mat[:t, t] = 0.0
            self.l_mat[t, t] = math.sqrt(d2)
            self._fk = t + 1
        return True

    def pop(self, j):
        k = len(self.w)
        if j < k - 1:
            self.a_mat[j:k - 1] = self.a_mat[j + 1:k]
            self.k_mat[j:k - 1] = self.k_mat[j + 1:k]
            self.b_w[j:k - 1] = self.b_w[j + 1:k]
        del self.w[j]
        fk = self._fk
        if j >= fk:
            return
        # drop row j of the factor and chase the Hessenberg bulge
        self.l_mat[j:fk - 1, :fk] = self.l_mat[j + 1:fk, :fk]
        t_block = self.l_mat[j:fk - 1, j:fk]
        for r in range(fk - 1 - j):
            a_, b_ = t_block[r, r], t_block[r, r + 1]
            if b_ != 0.0:
                hyp = math.hypot(a_, b_)
                c_, s_ = a_ / hyp, b_ / hyp
                col_a = t_block[r:, r].copy()
                col_b = t_block[r:, r + 1]
                t_block[r:, r] = c_ * col_a + s_ * col_b
                t_block[r:, r + 1] = -s_ * col_a + c_ * col_b
        self.l_mat[j:fk - 1, fk - 1] = 0.0
        self._fk = fk - 1

    def move_to(self, y_new):
        """Jump to a point feasible for every row; the working set is kept
        (its rows need not be active there, the inhomogeneous correction
        pulls them back)."""
        self.y = np.asarray(y_new, dtype=float).copy()

    def _swap_dependent_row(self, grad):
        """The newest working row is dependent on the others; swap it in.

        A blocking row that lies in the span of a full working set can
        never be added outright, yet it does block the pull toward the
        rows' intersection, so the set itself is wrong. Express the
        newcomer in the working rows and drop the positive-coefficient
        row with the smallest dual ratio, standard degenerate-step
        resolution. Returns False when no row qualifies."""
        j_new = len(self.w) - 1
        idx_new = self.w[j_new]
        a_new = self.a_mat[j_new].copy()
        self.pop(j_new)
        k = len(self.w)
        if k == 0 or not self._extend_factor():
            self.push(idx_new)
            return False
        # dependency coefficients in the H̃⁻¹ metric match the row-space
        # ones whenever the remaining rows are independent
        h_a = sla.cho_solve(self.hess_chol, a_new, check_finite=False)
        s_col = self.a_mat[:k] @ h_a
        l = self.l_mat[:k, :k]
        beta = sla.solve_triangular(
            l.T, sla.solve_triangular(l, s_col, lower=True,
                                      check_finite=False),
            lower=False, check_finite=False)
        kt_grad = self.k_mat[:k] @ grad
        resid_w = self.b_w[:k] - self.a_mat[:k] @ self.y
        lam = sla.solve_triangular(
            l.T, sla.solve_triangular(l, -(kt_grad + resid_w), lower=True,
                                      check_finite=False),
            lower=False, check_finite=False)
        pos = beta > 1e-10 * (1.0 + float(np.abs(beta).max()))
        if not np.any(pos):
            self.push(idx_new)
            return False
        cand = np.flatnonzero(pos)
        self.pop(int(cand[np.argmin(lam[cand] / beta[cand])]))
        self.push(idx_new)
        return True

    def _snap_to_working_rows(self):
        """Re-derive the iterate from the working rows alone.

        The Schur route reaches the iterate through dual-scaled
        cancellations, so with huge multipliers y ends up a few orders
        above roundoff away from the rows it is meant to sit on, and the
        duals amplify that drift in the complementarity residual. The
        rows themselves are well conditioned; solve them directly."""
        k = len(self.w)
        a_w = self.a_mat[:k]
        resid = self.b_w[:k] - a_w @ self.y
        if not np.any(resid):
            return
        try:
            if k == self.n:
                y_new = np.linalg.solve(a_w, self.b_w[:k])
            else:
                corr = a_w.T @ np.linalg.solve(a_w @ a_w.T, resid)
                y_new = self.y + corr
        except np.linalg.LinAlgError:
            return
        if np.all(np.isfinite(y_new)):
            self.y = y_new

    def run(self, max_iter=500):
        rows = self.rows
        b_all = rows.rhs_all()
        bland = False
        stall = 0
        swap_budget = 2 * self.n + 8
        last_obj = math.inf
        n_iter = 0
        lam = np.zeros(0)
        # running quantities, updated along steps and refreshed periodically
        # to keep roundoff drift below the optimality tolerances
        ay = rows.matvec(self.y)
        grad = _hess_mul(self.hess_chol, self.y) + self.g
        hin_grad = sla.cho_solve(self.hess_chol, grad, check_finite=False)
        since_refresh = 0

        for n_iter in range(1, max_iter + 1):
            y = self.y
            k = len(self.w)
            if since_refresh >= 40:
                ay = rows.matvec(y)
                grad = _hess_mul(self.hess_chol, y) + self.g
                hin_grad = sla.cho_solve(self.hess_chol, grad,
                                         check_finite=False)
                since_refresh = 0
            if k:
                if not self._extend_factor():
                    # newest row is dependent on the rest: swap it into the
                    # set if possible, otherwise discard it under Bland
                    if swap_budget > 0 and self._swap_dependent_row(grad):
                        swap_budget -= 1
                    else:
                        self.pop(len(self.w) - 1)
                        bland = True
                    continue
                kt_grad = self.k_mat[:k] @ grad
                # inhomogeneous correction keeps working rows exactly active
                resid_w = self.b_w[:k] - self.a_mat[:k] @ y
                l = self.l_mat[:k, :k]
                lam = sla.solve_triangular(
                    l.T, sla.solve_triangular(l, -(kt_grad + resid_w),
                                              lower=True,
                                              check_finite=False),
                    lower=False, check_finite=False)
                p = -hin_grad - self.k_mat[:k].T @ lam
                hp = -grad - self.a_mat[:k].T @ lam
            else:
                lam = np.zeros(0)
                p = -hin_grad
                hp = -grad

            scale = 1.0 + float(np.linalg.norm(y))
            p_tol = 1e-12 * scale
            if k:
                # the dual contributions to p cancel at their own scale,
                # not the iterate's; below this floor the step is noise
                p_tol += 64.0 * _EPS * float(
                    (np.abs(self.k_mat[:k].T) @ np.abs(lam)).sum()
                    + np.abs(hin_grad).sum())
            if np.linalg.norm(p) <= p_tol:
                if lam.size == 0 or lam.min() >= -_DUAL_TOL:
                    if since_refresh:
                        # running quantities carry step roundoff; re-verify
                        # optimality on fresh ones before certifying
                        since_refresh = 40
                        continue
                    if k and lam.size and float(lam.max()) > 1e6:
                        self._snap_to_working_rows()
                    lam_full = np.zeros(rows.m)
                    for idx, li in zip(self.w, lam):
                        lam_full[idx] = max(li, 0.0)
                    return self.y, lam_full, list(self.w), "optimal", n_iter
                neg = np.flatnonzero(lam < -_DUAL_TOL)
                if bland:
                    drop = int(min(neg, key=lambda j: self.w[j]))
                else:
                    drop = int(np.argmin(lam))
                self.pop(drop)
                continue

            ap = rows.matvec(p)
            mask = ap > 1e-13 * scale
            for i in self.w:
                mask[i] = False
            alpha = 1.0
            block = -1
            if mask.any():
                idx = np.flatnonzero(mask)
                slack = np.maximum(b_all[idx] - ay[idx], 0.0)
                ratios = slack / ap[idx]
                jmin = int(np.argmin(ratios))
                if ratios[jmin] < 1.0:
                    alpha = float(ratios[jmin])
                    if bland:
                        near = idx[ratios <= alpha + 1e-15]
                        block = int(near.min())
                    else:
                        block = int(idx[jmin])
            if block >= 0:
                self.y = y + alpha * p
            else:
                alpha = 1.0
                self.y = y + p
            ay = ay + alpha * ap
            grad = grad + alpha * hp       # H(y+αp) + g, no dense product
            hin_grad = hin_grad + alpha * p
            since_refresh += 1
            if block >= 0:
                self.push(block)

            # yᵀHy = yᵀ(grad − g), so the objective needs two dots only
            obj = 0.5 * (float(self.y @ grad) + float(self.g @ self.y))
            if obj >= last_obj - 1e-14 * (1 + abs(last_obj)):
                stall += 1
                if stall > 30:
                    bland = True
            else:
                stall = 0
            last_obj = obj

        lam_full = np.zeros(rows.m)
        for idx, li in zip(self.w, lam):
            lam_full[idx] = max(li, 0.0)
        return self.y, lam_full, list(self.w), "max_iter", n_iter


def _active_set(hess_chol, g, rows: _RowStack, y0, w0, max_iter=500):
    """One-shot wrapper over _ActiveSetState; returns
    (y, duals over all rows, working set, status, iterations)."""
    return _ActiveSetState(hess_chol, g, rows, y0, w0).run(max_iter)


def _phase1(rows: _RowStack, n: int, max_iter=2000):
    """Elastic feasibility: min small‖y‖² + t terms s.t. Ay − t𝟙 ≤ b, t ≥ 0."""
    m = rows.m
    if m == 0:
        return np.zeros(n)
    ones = -np.ones((rows.m_base, 1))
    if rows.a is None:
        base = None
    elif sp.issparse(rows.a):
        base = sp.hstack([rows.a, sp.csr_matrix(ones)], format="csr")
    else:
        base = np.hstack([rows.a, ones])
    blocks = []
    if base is not None and rows.m_base:
        blocks.append(base if not sp.issparse(base) else base)
    if rows._extra:
        blocks.append(np.hstack([np.asarray(rows._extra),
                                 -np.ones((len(rows._extra), 1))]))
    blocks.append(np.concatenate([np.zeros(n), [-1.0]])[None, :])
    if any(sp.issparse(bk) for bk in blocks):
        a_full = sp.vstack([sp.csr_matrix(bk) for bk in blocks], format="csr")
    else:
        a_full = np.vstack(blocks)
    b_full = np.concatenate([rows.rhs_all(), [0.0]])
    aug = _RowStack(a_full, b_full)

    # unit curvature keeps the big elastic gradient from amplifying roundoff
    bscale = 1.0 + float(np.abs(b_full).max())
    h = np.eye(n + 1)
    g = np.zeros(n + 1)
    g[n] = 1e6 * bscale
    chol = factor_hessian(h)

    y0 = np.zeros(n + 1)
    y0[n] = max(0.0, float(-b_full[:-1].min())) + 1.0
    y, _, _, status, _ = _active_set(chol, g, aug, y0, [], max_iter)
    if y[n] > 1e-7 * bscale:
        return None
    return y[:n]


def _quad_value(e, chi, y):
    ey = np.asarray(e @ y).ravel()
    return float(y @ ey) + float(np.asarray(chi) @ y)


def _quad_grad(e, chi, y):
    ey = np.asarray(e @ y).ravel()
    return 2.0 * ey + np.asarray(chi, dtype=float)


def _kkt_residual(problem: QPProblem, rows, y, lam_rows, mu, n_user):
    grad = problem.hessian @ y + problem.linear
    for i in np.flatnonzero(lam_rows):
        grad = grad + lam_rows[i] * rows.row(i)
    for (e, chi, c), mj in zip(problem.quad_ineq, mu):
        if mj != 0.0:
            grad = grad + mj * _quad_grad(e, chi, y)
    stat = float(np.abs(grad).max()) if grad.size else 0.0

    prim = 0.0
    comp = 0.0
    if n_user:
        resid = rows.matvec(y)[:n_user] - rows.rhs_all()[:n_user]
        prim = float(max(0.0, resid.max()))
        comp = float(np.abs(lam_rows[:n_user] * np.minimum(resid, 0.0)).max())
    for (e, chi, c), mj in zip(problem.quad_ineq, mu):
        v = _quad_value(e, chi, y) - c
        prim = max(prim, v)
        comp = max(comp, abs(mj * min(v, 0.0)))
    return max(stat, prim, comp)


def _newton_polish(problem, rows, y, w_user, lam_user, active_quads, mu0):
    """Newton on the exact KKT equalities of the identified active set."""
    n = problem.n
    quads = [problem.quad_ineq[j] for j in active_quads]
    nw, nq = len(w_user), len(quads)
    a_w = np.array([rows.row(i) for i in w_user]) if nw else np.zeros((0, n))
    b_w = np.array([rows.rhs(i) for i in w_user]) if nw else np.zeros(0)
    lam = np.array(lam_user, dtype=float)
    mu = np.array(mu0, dtype=float)
    h = problem.hessian
    hscale = 1.0 + float(np.abs(h).max())

    best = None
    best_norm = math.inf
    for _ in range(30):
        grads_q = [_quad_grad(e, chi, y) for (e, chi, _) in quads]
        f_stat = h @ y + problem.linear
        if nw:
            f_stat = f_stat + a_w.T @ lam
        for gq, mj in zip(grads_q, mu):
            f_stat = f_stat + mj * gq
        f_lin = (a_w @ y - b_w) if nw else np.zeros(0)
        f_quad = np.array([_quad_value(e, chi, y) - c for (e, chi, c) in quads])
        f = np.concatenate([f_stat, f_lin, f_quad])
        f_norm = float(np.abs(f).max())
        if f_norm < best_norm:
            best = (y.copy(), lam.copy(), mu.copy())
            best_norm = f_norm
        if f_norm <= 1e-14 * hscale * (1 + float(np.abs(y).max())):
            break
        if f_norm > 10.0 * best_norm:
            break               # diverging; keep the best iterate
        # accumulate the sparse quadratic terms before densifying once
        extra = None
        for (e, chi, _), mj in zip(quads, mu):
            term = (2.0 * mj) * e
            extra = term if extra is None else extra + term
        if extra is None:
            hh = h
        elif sp.issparse(extra):
            hh = h + extra.toarray()
        else:
            hh = h + np.asarray(extra, dtype=float)
        gq_mat = np.array(grads_q) if nq else np.zeros((0, n))
        jac = np.vstack([
            np.hstack([hh, a_w.T, gq_mat.T]),
            np.hstack([a_w, np.zeros((nw, nw + nq))]),
            np.hstack([gq_mat, np.zeros((nq, nw + nq))]),
        ])
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            break
        y = y + step[:n]
        lam = lam + step[n:n + nw]
        mu = mu + step[n + nw:]
    if best is None:
        return y, lam, mu, False
    y, lam, mu = best
    return y, lam, mu, best_norm <= 1e-9 * hscale * (1 + float(np.abs(y).max()))


def solve_qp(problem: QPProblem, warm_start=None, hess_chol=None,
             max_iter: int = 500, validate_quads: bool = True,
             polish: bool = True) -> QPResult:
    """Solve a convex QP, optionally with convex quadratic constraints.

    ``warm_start`` may be a (y0, working_set) pair from a previous result on
    a problem whose linear rows kept their indices. ``hess_chol`` is an
    optional ``factor_hessian`` output; pass it when solving many problems
    that share a hessian. ``validate_quads=False`` skips the eigenvalue
    check for callers that construct provably convex constraints.
    ``polish=False`` skips the Newton refinement of the active quadratics;
    the answer then carries the tangent-cut accuracy (about 1e-9 of the
    iterate scale), which iterative outer loops can live with.
    """
    n = problem.n
    if hess_chol is None:
        hess_chol = factor_hessian(problem.hessian)
    quads = list(problem.quad_ineq)
    if validate_quads:
        for e, chi, c in quads:
            ed = e.toarray() if sp.issparse(e) else np.asarray(e, dtype=float)
            if ed.size and float(sla.eigvalsh(ed, subset_by_index=[0, 0])[0]) \
                    < -1e-8 * (1 + float(np.abs(ed).max())):
                raise ValueError(
                    "solve_qp requires convex quadratic constraints")

    rows = _RowStack(*problem.ineq) if problem.ineq is not None \
        else _RowStack(None, None)
    n_user = rows.m

    y0 = None
    w0: List[int] = []
    if warm_start is not None:
        cand = np.asarray(warm_start[0], dtype=float).copy()
        viol = rows.matvec(cand) - rows.rhs_all() if rows.m else np.zeros(0)
        if not viol.size or viol.max() <= 1e-8 * (1 + np.abs(cand).max()):
            y0 = cand
            w0 = [i for i in warm_start[1] if i < rows.m]
    if y0 is None:
        if rows.m == 0 or rows.rhs_all().min() >= 0.0:
            y0 = np.zeros(n)
        else:
            y0 = _phase1(rows, n)
            if y0 is None:
                return QPResult(np.zeros(n), np.zeros(n_user),
                                np.zeros(len(quads)), "infeasible",
                                0, math.inf)

    # a point feasible for the quads satisfies every tangent cut (convexity),
    # so it can restart the active set after each cut round
    anchor = None
    if all(_quad_value(e, chi, y0) <= c + 1e-12 * (1 + abs(c))
           for e, chi, c in quads):
        anchor = y0.copy()

    cut_owner: List[int] = []
    cut_vecs: dict = {}          # quad index → list of appended unit rows
    cut_rows: dict = {}          # quad index → list of appended row indices
    saturated = [False] * len(quads)
    iters = 0
    y, lam, w, status = y0, np.zeros(rows.m), list(w0), "optimal"
    state = _ActiveSetState(hess_chol, problem.linear, rows, y0, w0)

    for _ in range(60):
        y, lam, w, status, it = state.run(max_iter)
        iters += it
        if status == "max_iter" or not quads:
            break
        yscale = 1.0 + float(np.abs(y).max())
        viol = np.array([_quad_value(e, chi, y) - c for e, chi, c in quads])
        if viol.max() <= 1e-9 * yscale:
            break
        appended = False
        first_new = rows.m
        for j in np.flatnonzero(viol > 1e-9 * yscale):
            if saturated[j]:
                continue
            e, chi, c = quads[j]
            gq = _quad_grad(e, chi, y)
            unit = gq / (np.linalg.norm(gq) or 1.0)
            # a near-duplicate tangent means the cut loop has converged as
            # far as it can; the Newton polish supplies the remaining digits
            if any(float(unit @ u) > 1.0 - 1e-10 for u in
                   cut_vecs.get(j, ())):
                saturated[j] = True
                continue
            idx_new = rows.append(gq, float(gq @ y) - viol[j])
            cut_owner.append(int(j))
            cut_vecs.setdefault(j, []).append(unit)
            # a fresh tangent supersedes this quad's older ones in the
            # working set; holding both would make the Schur complement
            # nearly singular (the rows are almost parallel)
            for idx_old in cut_rows.get(j, ()):
                if idx_old in state.w:
                    state.pop(state.w.index(idx_old))
            cut_rows.setdefault(j, []).append(idx_new)
            appended = True
        if not appended:
            break
        if anchor is not None:
            # every pre-existing row is feasible on the anchor→y segment;
            # backtrack just enough to satisfy the fresh cuts, keeping the
            # working set (and its Schur complement) alive
            step_dir = y - anchor
            t = 1.0
            for row_i in range(first_new, rows.m):
                a_i = rows.row(row_i)
                den = float(a_i @ step_dir)
                if den > 1e-300:
                    num = rows.rhs(row_i) - float(a_i @ anchor)
                    t = min(t, max(0.0, num / den))
            state.move_to(anchor + t * step_dir)
        else:
            y0 = _phase1(rows, n)
            if y0 is None:
                return QPResult(y, lam[:n_user], np.zeros(len(quads)),
                                "infeasible", iters, math.inf)
            state = _ActiveSetState(hess_chol, problem.linear, rows, y0, [])

    mu = np.zeros(len(quads))
    if quads and status != "infeasible":
        for row_i in w:
            if row_i >= n_user:
                mu[cut_owner[row_i - n_user]] += lam[row_i]
        yscale = 1.0 + float(np.abs(y).max())
        active_quads = [
            j for j, (e, chi, c) in enumerate(quads)
            if mu[j] > 0 or _quad_value(e, chi, y) - c > -1e-7 * (1 + abs(c))]
        w_user = [i for i in w if i < n_user]
        lam_user = [lam[i] for i in w_user]
        if active_quads and polish:
            y_p, lam_p, mu_p, ok = _newton_polish(
                problem, rows, y.copy(), w_user, lam_user, active_quads,
                [max(mu[j], 1e-12) for j in active_quads])
            if ok and (lam_p.size == 0 or lam_p.min() >= -1e-7) and \
                    (mu_p.size == 0 or mu_p.min() >= -1e-7):
                others_ok = True
                if n_user:
                    r = rows.matvec(y_p)[:n_user] - rows.rhs_all()[:n_user]
                    others_ok = r.max() <= 1e-9 * (1 + np.abs(y_p).max())
                others_ok = others_ok and all(
                    _quad_value(e, chi, y_p) - c <= 1e-9 * (1 + abs(c))
                    for j, (e, chi, c) in enumerate(quads)
                    if j not in active_quads)
                if others_ok:
                    y = y_p
                    mu[:] = 0.0
                    for j, mj in zip(active_quads, mu_p):
                        mu[j] = max(mj, 0.0)
                    lam = np.zeros(rows.m)
                    for i, li in zip(w_user, lam_p):
                        lam[i] = max(li, 0.0)
                    w = list(w_user)

    duals = lam[:n_user] if lam.size else np.zeros(0)
    kkt = _kkt_residual(problem, rows, y, lam, mu, n_user)
    if status != "infeasible":
        # scale-relative verdict so large-coefficient problems are judged
        # fairly; the reported residual itself stays absolute
        kkt_scale = 1.0 + float(np.abs(problem.linear).max()) + \
            float(np.abs(problem.hessian).max()) * (1 + float(np.abs(y).max()))
        status = "optimal" if kkt <= 1e-7 * kkt_scale else "max_iter"
    obj = 0.5 * float(y @ (problem.hessian @ y)) + float(problem.linear @ y)
    return QPResult(y, duals, mu, status, iters, kkt,
                    working_set=[i for i in w if i < n_user],
                    objective=obj)


def _pull_inside(sub_quads, y, cand):
    """Largest step from y toward cand keeping every convex quadratic
    yᵀEy + χᵀy ≤ c satisfied; y itself must satisfy them all. Along the
    segment each constraint is a scalar convex quadratic, so the admissible
    step has a closed form."""
    delta = cand - y
    if not sub_quads or not delta.any():
        return cand
    t_best = 1.0
    for e, chi, c in sub_quads:
        e_delta = np.asarray(e @ delta).ravel()
        a = float(delta @ e_delta)
        b = 2.0 * float(y @ e_delta) + float(np.asarray(chi) @ delta)
        q0 = _quad_value(e, chi, y)
        if q0 + b + a <= c + 1e-12 * (1 + abs(c)):
            continue                       # feasible at the full step
        if a > 1e-300:
            disc = b * b - 4.0 * a * (q0 - c)
            t = (-b + math.sqrt(max(disc, 0.0))) / (2.0 * a)
        elif b > 1e-300:
            t = (c - q0) / b
        else:
            t = 0.0
        t_best = min(t_best, max(0.0, t))
    if t_best >= 1.0:
        return cand
    return y + t_best * delta


@dataclass
class QCQPResult:
    y: np.ndarray
    status: str                  # converged | max_iter | infeasible
    objective: float
    n_outer: int
    history: List[float] = field(default_factory=list)


def solve_qcqp_nonconvex(problem: QPProblem, y0, trust_radius: float = 1.0,
                         max_outer: int = 100, step_tol: float = 1e-8,
                         feas_tol: float = 1e-7, concavity_shifts=None,
                         hess_chol=None, subproblem_polish: bool = True,
                         qp_max_iter: int = 500) -> QCQPResult:
    """Locally solve a QP with possibly indefinite quadratic constraints.

    Sequential convexification by diagonal splitting: each quadratic
    yᵀEy + χᵀy ≤ c is rewritten with E + diag(d) ⪰ 0 (d the concavity
    shift, −min eig E on the diagonal when negative, else 0) and the concave
    remainder −yᵀdiag(d)y is replaced by its tangent at the incumbent. The
    resulting convex majorizer implies the true constraint, so every
    subproblem solution is exactly feasible; candidates are still accepted
    only when the exact constraints and an objective decrease are confirmed,
    inside an infinity-norm trust box (0.5x on rejection, 1.5x on
    acceptance). Accepted objectives are monotone non-increasing.

    ``y0`` must satisfy all constraints (this is a feasible-point method).
    ``concavity_shifts`` optionally supplies the per-constraint shifts for
    callers that can compute smallest eigenvalues cheaply; each entry is a
    scalar σ (meaning σI) or a length-n nonnegative diagonal, which lets a
    constraint touching few coordinates keep its majorizer tight on the
    rest. ``subproblem_polish=False`` trades subproblem KKT digits for
    speed on large instances; a residual-violation backtrack toward the
    incumbent keeps candidates exactly feasible either way.
    """
    n = problem.n
    y = np.asarray(y0, dtype=float).copy()
    if hess_chol is None:
        hess_chol = factor_hessian(problem.hessian)
    quads = list(problem.quad_ineq)
    if concavity_shifts is None:
        raw = [max(0.0, -min_eigenvalue(e)) for e, _, _ in quads]
    else:
        raw = list(concavity_shifts)
        if len(raw) != len(quads):
            raise ValueError("one concavity shift per quadratic constraint")
    shifts = []
    for s in raw:
        d = np.asarray(s, dtype=float)
        if d.ndim == 0:
            d = np.full(n, float(d))
        elif d.shape != (n,):
            raise ValueError("a shift must be a scalar or a length-n diagonal")
        if d.min() < 0:
            raise ValueError("concavity shifts must be nonnegative")
        shifts.append(d)

    def obj(v):
        return 0.5 * float(v @ (problem.hessian @ v)) + \
            float(problem.linear @ v)

    if problem.ineq is not None:
        a_user, b_user = problem.ineq
        lv = np.asarray(a_user @ y).ravel() - b_user
        if lv.size and lv.max() > 1e-9 * (1 + np.abs(y).max()):
            return QCQPResult(y, "infeasible", obj(y), 0)
    if any(_quad_value(e, chi, y) - c > feas_tol for e, chi, c in quads):
        return QCQPResult(y, "infeasible", obj(y), 0)

    shifted = []
    for (e, chi, c), d in zip(quads, shifts):
        if not d.any():
            shifted.append(None)        # already convex; pass through as-is
        elif sp.issparse(e):
            shifted.append((e + sp.diags(d, format="csr")).tocsr())
        else:
            shifted.append(np.asarray(e, dtype=float) + np.diag(d))

    delta = float(trust_radius)
    f_cur = obj(y)
    history = [f_cur]
    status = "max_iter"
    outer = 0
    warm_ws: List[int] = []

    for outer in range(1, max_outer + 1):
        if problem.ineq is not None:
            base_a, base_b = problem.ineq
            base_a = base_a if sp.issparse(base_a) else sp.csr_matrix(base_a)
        else:
            base_a, base_b = sp.csr_matrix((0, n)), np.zeros(0)
        box_a = sp.vstack([sp.identity(n, format="csr"),
                           -sp.identity(n, format="csr")], format="csr")
        box_b = np.concatenate([y + delta, delta - y])
        sub_quads = []
        for (e, chi, c), d, es in zip(quads, shifts, shifted):
            if es is None:
                sub_quads.append((e, chi, c))
            else:
                # majorize the −zᵀdiag(d)z remainder by its tangent at y
                dy = d * y
                sub_quads.append((es, np.asarray(chi, dtype=float) - 2 * dy,
                                  c - float(y @ dy)))
        sub = QPProblem(problem.hessian, problem.linear,
                        (sp.vstack([base_a, box_a], format="csr"),
                         np.concatenate([base_b, box_b])),
                        sub_quads)
        res = solve_qp(sub, warm_start=(y, warm_ws), hess_chol=hess_chol,
                       validate_quads=False, polish=subproblem_polish,
                       max_iter=qp_max_iter)
        if res.status == "infeasible" or not np.all(np.isfinite(res.y)):
            delta *= 0.5
            if delta < 1e-12:
                status = "converged"
                break
            continue
        cand = _pull_inside(sub_quads, y, res.y)
        step = float(np.abs(cand - y).max())
        # the majorizer dominates the exact quadratic, so the pulled-back
        # candidate already satisfies it; keep the check as a safety net
        exact_ok = all(_quad_value(e, chi, cand) - c <= feas_tol
                       for e, chi, c in quads)
        f_cand = obj(cand)
        if exact_ok and f_cand <= f_cur + 1e-12 * (1 + abs(f_cur)):
            improved = f_cand < f_cur - 1e-10 * (1 + abs(f_cur))
            y = cand
            f_cur = min(f_cur, f_cand)
            history.append(f_cur)
            warm_ws = list(res.working_set)
            if step < step_tol * (1 + float(np.abs(y).max())) or not improved:
                status = "converged"
                break
            delta *= 1.5
        else:
            delta *= 0.5
            if delta < 1e-12:
                status = "converged"
                break
    return QCQPResult(y, status, f_cur, outer, history)


def min_eigenvalue(mat) -> float:
    """Smallest eigenvalue of a symmetric matrix (dense or sparse)."""
    m = mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.size == 0:
        raise ValueError("matrix must be square and non-empty")
    if not np.allclose(m, m.T, atol=1e-9 * (1 + np.abs(m).max())):
        raise ValueError("matrix must be symmetric")
    return float(sla.eigvalsh(m, subset_by_index=[0, 0])[0])


def brent_root(f: Callable[[float], float], bracket: Tuple[float, float],
               f_tol: float = 1e-12, x_tol: float = 1e-14) -> float:
    """Brent's method: bisection-safeguarded secant/inverse quadratic.

    Stops when |f| ≤ f_tol or the bracket narrows to x_tol (absolute, but
    never below a few ulps of the current iterate).
    """
    a, b = float(bracket[0]), float(bracket[1])
    fa, fb = float(f(a)), float(f(b))
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if fa * fb > 0:
        raise ValueError("bracket endpoints must straddle a root")
    if abs(fa) < abs(fb):
        a, b, fa, fb = b, a, fb, fa
    c, fc = a, fa
    d = e = b - a
    for _ in range(200):
        if fb * fc > 0:
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol = max(x_tol, 4.0 * np.finfo(float).eps * max(abs(b), 1e-300))
        xm = 0.5 * (c - b)
        if abs(fb) <= f_tol or abs(xm) <= tol:
            return b
        if abs(e) >= tol and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2.0 * xm * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0:
                q = -q
            p = abs(p)
            if 2.0 * p < min(3.0 * xm * q - abs(tol * q), abs(e * q)):
                e = d
                d = p / q
            else:
                d = xm
                e = d
        else:
            d = xm
            e = d
        a, fa = b, fb
        b = b + (d if abs(d) > tol else math.copysign(tol, xm))
        fb = float(f(b))
    return b
