"""Dense convex QP solver for the whole-body controller.

Solves
    min  1/2 x' H x + g' x
    s.t. E x = d                      (equality rows)
         lb_A <= A x <= ub_A         (inequality rows)
         lb <= x <= ub               (variable bounds)

with H strictly convex (the controller adds a small ridge). The method is
a dual active-set iteration in the style of Goldfarb and Idnani: start at
the equality-constrained optimum, repeatedly add the most violated
inequality while keeping all multipliers of active inequalities
nonnegative, dropping blocking constraints along the way. Each working-set
change re-solves a small KKT system, which at the controller's ~22
variables is cheap and keeps every iterate's stationarity exact to
linear-algebra precision.

Deterministic: identical inputs take identical pivot sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import nnls

_FEAS_TOL = 1e-9
_MAX_ITER = 500
_POLISH_TOL = 1e-9


class QPError(Exception):
    pass


@dataclass
class QPProblem:
    """Standard-form problem consumed by the controller.

    Variable order is fixed by the caller: [base twist (3); qdot (n)].
    """

    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: np.ndarray | None = None          # inequality rows
    lb_A: np.ndarray | None = None
    ub_A: np.ndarray | None = None
    E: np.ndarray | None = None          # equality rows
    d: np.ndarray | None = None

    def validate(self) -> None:
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise QPError("H must be square")
        if not np.allclose(self.H, self.H.T, atol=1e-10):
            raise QPError("H must be symmetric")
        if np.any(self.lb > self.ub):
            raise QPError("variable bounds lb > ub")
        if self.A is not None and np.any(self.lb_A > self.ub_A):
            raise QPError("inequality bounds lb > ub")


@dataclass
class QPResult:
    x: np.ndarray
    status: str                 # "optimal" | "infeasible" | "max_iter"
    iterations: int
    kkt_residual: float
    active: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _one_sided_rows(problem: QPProblem):
    """Expand bounds and two-sided rows into C x >= b one-sided form."""
    n = problem.H.shape[0]
    rows, rhs = [], []
    eye = np.eye(n)
    for i in range(n):
        if np.isfinite(problem.lb[i]):
            rows.append(eye[i])
            rhs.append(problem.lb[i])
        if np.isfinite(problem.ub[i]):
            rows.append(-eye[i])
            rhs.append(-problem.ub[i])
    if problem.A is not None and len(problem.A):
        for i in range(problem.A.shape[0]):
            if np.isfinite(problem.lb_A[i]):
                rows.append(problem.A[i])
                rhs.append(problem.lb_A[i])
            if np.isfinite(problem.ub_A[i]):
                rows.append(-problem.A[i])
                rhs.append(-problem.ub_A[i])
    if rows:
        return np.array(rows), np.array(rhs)
    return np.zeros((0, n)), np.zeros(0)


def _reduce_equalities(E: np.ndarray, d: np.ndarray, n: int):
    """Drop linearly dependent equality rows (consistent by construction)."""
    if E is None or len(E) == 0:
        return np.zeros((0, n)), np.zeros(0)
    u, s, vt = np.linalg.svd(E, full_matrices=False)
    keep = s > max(E.shape) * np.finfo(float).eps * (s[0] if len(s) else 1.0)
    r = int(np.sum(keep))
    if r == E.shape[0]:
        return E, d
    return u[:, :r].T @ E, u[:, :r].T @ d


def solve_qp(problem: QPProblem) -> QPResult:
    """Solve a strictly convex QP; see module docstring for the contract."""
    problem.validate()
    H = problem.H
    g = problem.g
    n = H.shape[0]

    E, d = _reduce_equalities(problem.E, problem.d, problem.H.shape[0])
    m_eq = E.shape[0]
    C, b = _one_sided_rows(problem)
    m_in = C.shape[0]

    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as e:
        raise QPError("H is not positive definite") from e

    def h_solve(rhs):
        y = np.linalg.solve(L, rhs)
        return np.linalg.solve(L.T, y)

    # start at the equality-constrained optimum
    if m_eq:
        Hig = h_solve(g)
        HiE = h_solve(E.T)
        S = E @ HiE
        lam_eq = np.linalg.solve(S, -(E @ Hig) - d)
        x = -Hig - HiE @ lam_eq
    else:
        x = -h_solve(g)
        lam_eq = np.zeros(0)

    active: list[int] = []          # indices into C
    lam_in = np.zeros(0)

    def kkt_matrix():
        N = np.vstack([E, C[active]]) if (m_eq or active) else np.zeros((0, n))
        k = N.shape[0]
        K = np.zeros((n + k, n + k))
        K[:n, :n] = H
        K[:n, n:] = N.T
        K[n:, :n] = N
        return K, k

    for it in range(_MAX_ITER):
        if m_in:
            slack = C @ x - b
            p = int(np.argmin(slack))
            viol = slack[p]
        else:
            viol = 0.0
            p = -1
        if viol >= -_FEAS_TOL:
            lam_full = np.zeros(m_in)
            lam_full[active] = lam_in
            res = _kkt_residual(H, g, E, d, C, b, x, lam_eq, lam_full)
            if res > _POLISH_TOL:
                # degenerate working sets leave drifted iterates; polish the
                # point and recover fresh nonnegative multipliers, keeping
                # whichever candidate scores the better residual
                for cand in _polish_candidates(H, g, E, d, C, b, active, x):
                    lam_eq2, lam_full2 = _recover_multipliers(H, g, E, C, active, cand)
                    res2 = _kkt_residual(H, g, E, d, C, b, cand, lam_eq2, lam_full2)
                    if res2 < res:
                        x, res = cand, res2
            return QPResult(x, "optimal", it, res, sorted(active))

        cp = C[p]
        t_pending = 0.0                    # multiplier accrued by cp so far
        while True:
            # direction of x and of active multipliers when pushing on cp
            K, k = kkt_matrix()
            rhs = np.concatenate([cp, np.zeros(k)])
            try:
                lu = lu_factor(K, check_finite=False)
                sol = lu_solve(lu, rhs, check_finite=False)
                sol += lu_solve(lu, rhs - K @ sol, check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                return QPResult(x, "infeasible", it, np.inf, sorted(active))
            z = sol[:n]
            r = sol[n:]                        # d(lambda)/dt for eq + active
            r_in = r[m_eq:]

            denom = float(cp @ z)
            full_step = np.inf if denom <= 1e-14 else -float(cp @ x - b[p]) / denom

            # max step before an active-inequality multiplier hits zero
            block_idx, block_step = -1, np.inf
            for j, rj in enumerate(r_in):
                if rj > 1e-14:
                    t = lam_in[j] / rj
                    if t < block_step - 1e-15:
                        block_step, block_idx = t, j

            step = min(full_step, block_step)
            if not np.isfinite(step):
                # no primal progress possible and no constraint to drop
                return QPResult(x, "infeasible", it, np.inf, sorted(active))

            # stationarity H x + g + E' lam_eq - C_act' lam_in - t*cp = 0 is
            # preserved when lam_eq moves with +r and lam_in with -r
            x = x + step * z
            lam_eq = lam_eq + step * r[:m_eq]
            lam_in = lam_in - step * r_in
            t_pending += step

            if full_step <= block_step:
                active.append(p)
                lam_in = np.append(lam_in, t_pending)
                break
            # drop the blocking constraint and keep pushing on cp
            lam_in = np.delete(lam_in, block_idx)
            active.pop(block_idx)

    return QPResult(x, "max_iter", _MAX_ITER, np.inf, sorted(active))


def _independent_rows(N: np.ndarray) -> list[int]:
    """Greedy Gram-Schmidt over rows; keeps a full-rank subset, in order."""
    kept: list[np.ndarray] = []
    idx: list[int] = []
    for i, row in enumerate(N):
        v = row.copy()
        for u in kept:
            v -= (v @ u) * u
        norm = np.linalg.norm(v)
        if norm > 1e-10 * max(1.0, np.linalg.norm(row)):
            kept.append(v / norm)
            idx.append(i)
    return idx


def _recover_multipliers(H, g, E, C, active, x):
    """Nonnegative least-squares fit of the stationarity condition."""
    y = H @ x + g
    m_eq = E.shape[0]
    cols = [E.T, -E.T] if m_eq else []
    if active:
        cols.append(-C[active].T)
    lam_eq = np.zeros(m_eq)
    lam_full = np.zeros(C.shape[0])
    if not cols:
        return lam_eq, lam_full
    M = np.hstack(cols)
    sol, _ = nnls(M, -y)
    if m_eq:
        lam_eq = sol[:m_eq] - sol[m_eq:2 * m_eq]
    lam_act = sol[2 * m_eq:]
    for k, j in enumerate(active):
        lam_full[j] = lam_act[k]
    return lam_eq, lam_full


def _polish_candidates(H, g, E, d, C, b, active, x0):
    """Exact KKT re-solve on an independent subset of the active normals."""
    n = H.shape[0]
    N = np.vstack([E, C[active]]) if (E.shape[0] or active) else np.zeros((0, n))
    rhs_c = np.concatenate([d, b[active]]) if N.shape[0] else np.zeros(0)
    keep = _independent_rows(N)
    Nk, bk = N[keep], rhs_c[keep]
    k = Nk.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = Nk.T
    K[n:, :n] = Nk
    rhs = np.concatenate([-g, bk])
    try:
        sol = np.linalg.solve(K, rhs)
        sol += np.linalg.solve(K, rhs - K @ sol)
    except np.linalg.LinAlgError:
        return []
    cand = sol[:n]
    # reject primal-infeasible polishes outright; residual scoring handles
    # the rest
    if C.shape[0] and np.min(C @ cand - b) < -1e-7:
        return []
    if E.shape[0] and np.max(np.abs(E @ cand - d)) > 1e-7:
        return []
    return [cand]


def _kkt_residual(H, g, E, d, C, b, x, lam_eq, lam_in) -> float:
    """Max of stationarity, primal feasibility and complementarity residuals."""
    grad = H @ x + g
    if E.shape[0]:
        grad += E.T @ lam_eq
    if C.shape[0]:
        grad -= C.T @ lam_in
    res = float(np.max(np.abs(grad)))
    if E.shape[0]:
        res = max(res, float(np.max(np.abs(E @ x - d))))
    if C.shape[0]:
        slack = C @ x - b
        res = max(res, float(max(0.0, -np.min(slack))))
        res = max(res, float(np.max(np.abs(lam_in * slack))))
        res = max(res, float(max(0.0, -np.min(lam_in))))
    return res


def kkt_residual(problem: QPProblem, result: QPResult) -> float:
    """Recompute the KKT residual of a result against its problem.

    Multipliers are recovered from stationarity on the result's active set,
    so this is an independent check of the returned point.
    """
    E, d = _reduce_equalities(problem.E, problem.d, problem.H.shape[0])
    C, b = _one_sided_rows(problem)
    lam_eq, lam_in = _recover_multipliers(problem.H, problem.g, E, C,
                                          result.active, result.x)
    return _kkt_residual(problem.H, problem.g, E, d, C, b, result.x, lam_eq, lam_in)
