"""Dense active-set solver for small convex quadratic programs.

Problem form:

    minimize    0.5 x' H x + g' x
    subject to  A_eq x  = b_eq
                A_in x >= b_in
                lb <= x <= ub

H must be positive definite (the condensed MPC subproblems always are).
The solver is deterministic: ties are broken by lowest constraint index, so
identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.optimize import linprog


class QpInfeasibleError(Exception):
    """No point satisfies the constraints (within tolerance)."""


class QpMaxIterationsError(Exception):
    """Active-set iteration limit exceeded."""


@dataclass
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    a_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        self.hessian = np.asarray(self.hessian, dtype=float)
        self.gradient = np.asarray(self.gradient, dtype=float)
        n = self.gradient.shape[0]
        if self.hessian.shape != (n, n):
            raise ValueError("hessian/gradient dimension mismatch")
        if np.max(np.abs(self.hessian - self.hessian.T)) > 1e-10:
            raise ValueError("hessian must be symmetric")
        for name in ("a_eq", "a_in"):
            m = getattr(self, name)
            if m is not None and np.asarray(m).shape[1] != n:
                raise ValueError(f"{name} column count mismatch")

    @property
    def n(self) -> int:
        return self.gradient.shape[0]


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    iterations: int
    active_set: list[int]
    kkt_residual: float


def _stack_inequalities(qp: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """All inequality rows as G x >= h (box bounds folded in)."""
    n = qp.n
    rows, rhs = [], []
    if qp.a_in is not None and len(qp.a_in):
        rows.append(np.asarray(qp.a_in, float))
        rhs.append(np.asarray(qp.b_in, float))
    if qp.lb is not None:
        mask = np.isfinite(qp.lb)
        if mask.any():
            rows.append(np.eye(n)[mask])
            rhs.append(np.asarray(qp.lb, float)[mask])
    if qp.ub is not None:
        mask = np.isfinite(qp.ub)
        if mask.any():
            rows.append(-np.eye(n)[mask])
            rhs.append(-np.asarray(qp.ub, float)[mask])
    if rows:
        return np.vstack(rows), np.concatenate(rhs)
    return np.zeros((0, n)), np.zeros(0)


def _phase_one(a_eq, b_eq, G, h, n) -> np.ndarray:
    """Feasible point via LP: min s  s.t.  A x = b,  G x + s >= h,  s >= 0."""
    c = np.zeros(n + 1)
    c[-1] = 1.0
    a_ub, b_ub = None, None
    if len(G):
        a_ub = -np.hstack([G, np.ones((len(G), 1))])
        b_ub = -h
    A_eq = None
    if a_eq is not None and len(a_eq):
        A_eq = np.hstack([a_eq, np.zeros((len(a_eq), 1))])
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq if A_eq is not None else None,
        bounds=[(None, None)] * n + [(0, None)],
        method="highs",
    )
    if not res.success or res.x[-1] > 1e-7:
        raise QpInfeasibleError("phase-one LP found no feasible point")
    return res.x[:n]


def _solve_eqp(H, g, a_eq, G_w, x):
    """Step p and multipliers for min 0.5(x+p)'H(x+p)+g'(x+p) with A p = 0, G_w p = 0."""
    n = H.shape[0]
    blocks = [m for m in (a_eq, G_w) if m is not None and len(m)]
    N = np.vstack(blocks) if blocks else np.zeros((0, n))
    m = len(N)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = N.T
    K[n:, :n] = N
    rhs = np.concatenate([-(H @ x + g), np.zeros(m)])
    sol = scipy.linalg.lu_solve(scipy.linalg.lu_factor(K), rhs)
    if not np.all(np.isfinite(sol)):
        # Near-dependent working-set rows make K numerically singular; the
        # minimum-norm solution keeps the step finite and deterministic.
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    p = sol[:n]
    # KKT solve gives H(x+p) + g + N'nu = 0; the standard multipliers
    # (grad f = A'mu + G'lam, lam >= 0) are the negation of nu.
    lam = -sol[n:]
    n_eq = len(a_eq) if a_eq is not None else 0
    return p, lam[:n_eq], lam[n_eq:]


def solve_qp(qp: QpProblem, x0: Optional[np.ndarray] = None, max_iter: Optional[int] = None) -> QpResult:
    """Primal active-set solve. Raises QpInfeasibleError / QpMaxIterationsError."""
    n = qp.n
    H, g = qp.hessian, qp.gradient
    if max_iter is None:
        # Active-set methods add/drop one row per iteration; large problems
        # (the joint multi-agent solve) need a budget that grows with size.
        n_rows = (len(qp.a_in) if qp.a_in is not None else 0) + 2 * n
        max_iter = max(500, 4 * n_rows)
    a_eq = np.asarray(qp.a_eq, float) if qp.a_eq is not None and len(qp.a_eq) else None
    b_eq = np.asarray(qp.b_eq, float) if a_eq is not None else None
    G, h = _stack_inequalities(qp)

    feas_tol = 1e-8
    x = None
    if x0 is not None:
        x0 = np.asarray(x0, float)
        eq_ok = a_eq is None or np.max(np.abs(a_eq @ x0 - b_eq), initial=0.0) <= feas_tol
        in_ok = not len(G) or np.min(G @ x0 - h) >= -feas_tol
        if eq_ok and in_ok:
            x = x0
    if x is None:
        # Try the equality-only optimum before paying for a phase-one LP.
        try:
            if a_eq is not None:
                m = len(a_eq)
                K = np.block([[H, a_eq.T], [a_eq, np.zeros((m, m))]])
                cand = np.linalg.solve(K, np.concatenate([-g, b_eq]))[:n]
            else:
                cand = np.linalg.solve(H, -g)
            if not len(G) or np.min(G @ cand - h) >= -feas_tol:
                x = cand
        except np.linalg.LinAlgError:
            pass
    if x is None:
        x = _phase_one(a_eq, b_eq, G, h, n)

    working: list[int] = []
    bland_after = max_iter // 2  # anti-cycling fallback for degenerate vertices
    for it in range(1, max_iter + 1):
        G_w = G[working] if working else None
        p, _, lam_in = _solve_eqp(H, g, a_eq, G_w, x)
        if np.max(np.abs(p), initial=0.0) < 1e-11:
            if not working or np.min(lam_in) >= -1e-9:
                break
            if it > bland_after:
                k = int(np.nonzero(lam_in < -1e-9)[0][0])  # Bland: lowest index
            else:
                k = int(np.argmin(lam_in))  # most negative multiplier
            working.pop(k)
            continue
        # blocking constraints among rows not in the working set
        alpha = 1.0
        block = -1
        if len(G):
            gp = G @ p
            slack = np.maximum(G @ x - h, 0.0)
            cand = gp < -1e-12
            if working:
                cand[working] = False
            if cand.any():
                idx = np.nonzero(cand)[0]
                ratios = slack[idx] / (-gp[idx])
                k = int(np.argmin(ratios))  # ties: lowest row index
                if ratios[k] < alpha - 1e-14:
                    alpha = float(ratios[k])
                    block = int(idx[k])
        x = x + alpha * p
        if block >= 0:
            working.append(block)
            working.sort()
    else:
        raise QpMaxIterationsError(f"active-set did not converge in {max_iter} iterations")

    obj = float(0.5 * x @ H @ x + g @ x)
    # KKT stationarity residual: Hx + g - A'mu - G_w'lam
    G_w = G[working] if working else None
    _, mu, lam_in = _solve_eqp(H, g, a_eq, G_w, x)
    r = H @ x + g
    if a_eq is not None:
        r = r - a_eq.T @ mu
    if G_w is not None and len(G_w):
        r = r - G_w.T @ lam_in
    prim = 0.0
    if a_eq is not None:
        prim = max(prim, float(np.max(np.abs(a_eq @ x - b_eq))))
    if len(G):
        prim = max(prim, float(max(0.0, np.max(h - G @ x))))
    kkt = max(float(np.max(np.abs(r))), prim)
    return QpResult(x=x, objective=obj, iterations=it, active_set=list(working), kkt_residual=kkt)
