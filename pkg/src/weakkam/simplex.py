"""Dense two-phase revised simplex for the occupation-measure programs.

Standard form: minimize c.x subject to A x = b, x >= 0.  The basis inverse
is maintained explicitly and refreshed periodically; pricing is Dantzig's
rule with an automatic, permanent switch to Bland's rule after a run of
degenerate pivots, which keeps the method cycling-proof while staying fast
on the highly degenerate flow polytopes built here.  Degeneracy itself is
defused by a deterministic graded perturbation of the right-hand side
(the flow rows are all zero, so the unperturbed phase 1 starts maximally
degenerate); the final basic solution is recomputed against the original
right-hand side, so feasibility residuals of the returned point are exact.
Redundant equality rows (the stationarity systems carry one) are detected
in phase 1 and dropped.  Deterministic throughout: ties break on the
lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleLP, UnboundedLP


@dataclass
class LPSolution:
    x: np.ndarray
    objective: float
    duals: np.ndarray          # one multiplier per original row (0 for dropped)
    iterations: int
    basis: np.ndarray
    dropped_rows: list


def _pivot_update(Binv, xB, d, row, theta):
    xB -= theta * d
    xB[row] = theta
    piv = d[row]
    Binv[row] /= piv
    others = np.arange(len(d)) != row
    Binv[others] -= np.outer(d[others], Binv[row])


def _core(A, b, c, basis, Binv, tol, max_iter, stall_limit=200, refresh=128):
    m, n = A.shape
    xB = Binv @ b
    bland = False
    stall = 0
    last_obj = np.inf
    it = 0
    while True:
        if it and it % refresh == 0:
            Binv = np.linalg.inv(A[:, basis])
            xB = Binv @ b
        if it >= max_iter:
            raise RuntimeError(f"simplex exceeded {max_iter} iterations "
                               f"(bland={bland}, obj={float(c[basis] @ xB):.6g})")
        y = c[basis] @ Binv
        reduced = c - y @ A
        reduced[basis] = 0.0
        if bland:
            cand = np.nonzero(reduced < -tol)[0]
            if cand.size == 0:
                break
            enter = int(cand[0])
        else:
            enter = int(np.argmin(reduced))
            if reduced[enter] >= -tol:
                break
        d = Binv @ A[:, enter]
        pos = d > tol
        if not pos.any():
            raise UnboundedLP("unbounded improving ray")
        ratios = np.full(m, np.inf)
        ratios[pos] = xB[pos] / d[pos]
        ratios[pos] = np.maximum(ratios[pos], 0.0)
        theta = float(np.min(ratios))
        rows = np.nonzero(ratios <= theta + tol * (1 + abs(theta)))[0]
        leave_row = int(rows[np.argmin(basis[rows])])
        _pivot_update(Binv, xB, d, leave_row, max(theta, 0.0))
        basis[leave_row] = enter
        it += 1
        obj = float(c[basis] @ xB)
        if obj >= last_obj - tol * (1 + abs(obj)):
            stall += 1
            if stall >= stall_limit:
                bland = True
        else:
            stall = 0
        last_obj = obj
    return basis, Binv, xB, it


def _dual_cleanup(A, b, c, basis, Binv, tol, max_iter=5000):
    """Dual-simplex pivots restoring primal feasibility of an optimal basis
    (used after the grading of the right-hand side is removed)."""
    m, n = A.shape
    xB = Binv @ b
    feas_tol = 1e-9 * (1.0 + float(np.max(np.abs(b))) if b.size else 1.0)
    it = 0
    while True:
        r = int(np.argmin(xB))
        if xB[r] >= -feas_tol:
            return basis, Binv, xB, it
        if it >= max_iter:
            raise InfeasibleLP(f"dual cleanup stalled with xB[{r}] = {xB[r]:.3e}")
        y = c[basis] @ Binv
        reduced = c - y @ A
        reduced[basis] = 0.0
        alpha = Binv[r] @ A
        alpha[basis] = 0.0
        cand = np.nonzero(alpha < -tol)[0]
        if cand.size == 0:
            raise InfeasibleLP("no dual pivot: problem infeasible at this vertex")
        ratios = np.maximum(reduced[cand], 0.0) / (-alpha[cand])
        j = int(cand[np.argmin(ratios)])
        d = Binv @ A[:, j]
        theta = xB[r] / d[r]
        _pivot_update(Binv, xB, d, r, theta)
        basis[r] = j
        it += 1


def solve_lp(c, A, b, tol=1e-9, max_iter=None, basis0=None, perturb=1e-8):
    """Optimal basic feasible solution of min c.x, A x = b, x >= 0.

    `basis0` (a previously optimal basis for the same constraints) skips
    phase 1 when it is still feasible, which makes repeated solves with
    changing objectives cheap.  `perturb` grades the right-hand side during
    pivoting only; set 0 to disable.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.array(c, dtype=float)
    m, n = A.shape
    row_sign = np.ones(m)
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    row_sign[neg] = -1.0
    scale_b = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
    b_work = b + perturb * scale_b * (1.0 + np.arange(m)) / max(m, 1)
    if max_iter is None:
        max_iter = 50 * (m + n) + 2000
    total_it = 0
    dropped = []

    basis = None
    if basis0 is not None:
        basis_try = np.array(basis0, dtype=int)
        if len(basis_try) == m and np.all(basis_try < n):
            try:
                Binv = np.linalg.inv(A[:, basis_try])
                if np.all(Binv @ b >= -1e-8):
                    basis = basis_try
            except np.linalg.LinAlgError:
                basis = None

    if basis is None:
        # phase 1 with an artificial identity basis
        A1 = np.hstack([A, np.eye(m)])
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        basis = np.arange(n, n + m)
        Binv = np.eye(m)
        basis, Binv, xB, it1 = _core(A1, b_work, c1, basis, Binv, tol, max_iter)
        total_it += it1
        infeas = float(c1[basis] @ xB)
        if infeas > 1e-7 * scale_b + 10.0 * perturb * scale_b * m:
            raise InfeasibleLP(f"phase-1 infeasibility {infeas:.3e}")
        # drive artificials out of the basis; rows that cannot pivot are redundant
        keep_rows = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] < n:
                continue
            row_vals = Binv[r] @ A
            j = int(np.argmax(np.abs(row_vals)))
            if abs(row_vals[j]) > 1e-9:
                d = Binv @ A[:, j]
                _pivot_update(Binv, xB, d, r, xB[r] / d[r] if abs(d[r]) > 1e-12 else 0.0)
                basis[r] = j
            else:
                keep_rows[r] = False
        if not keep_rows.all():
            dropped = list(np.nonzero(~keep_rows)[0])
            A = A[keep_rows]
            b = b[keep_rows]
            b_work = b_work[keep_rows]
            basis = basis[keep_rows]
            Binv = np.linalg.inv(A[:, basis])
            m = A.shape[0]
    else:
        Binv = np.linalg.inv(A[:, basis])

    basis, Binv, xB, it2 = _core(A, b_work, c, basis, Binv, tol, max_iter)
    total_it += it2
    # re-solve the final basis against the unperturbed right-hand side; a
    # graded vertex can sit just outside the exact feasible set, in which
    # case dual pivots walk it back while preserving optimality
    Binv = np.linalg.inv(A[:, basis])
    xB = Binv @ b
    if float(np.min(xB)) < -1e-9 * scale_b:
        basis, Binv, xB, it3 = _dual_cleanup(A, b, c, basis, Binv, tol)
        total_it += it3
    x = np.zeros(n)
    x[basis] = np.maximum(xB, 0.0)
    y = c[basis] @ Binv
    duals = np.zeros(len(row_sign))
    kept_idx = [i for i in range(len(row_sign)) if i not in set(dropped)]
    for pos, i in enumerate(kept_idx):
        duals[i] = y[pos] * row_sign[i]
    return LPSolution(x=x, objective=float(c @ x), duals=duals,
                      iterations=total_it, basis=basis.copy(), dropped_rows=dropped)
