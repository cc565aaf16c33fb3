"""SQP trajectory optimizer for horizon problems with keep-out constraints.

The decision variables are the stacked input sequences of one or more agents;
states are condensed out through the linear dynamics, so returned trajectories
satisfy the dynamics recurrence exactly. Non-convex disc keep-out constraints
(fixed centers, and pairwise agent separation for the joint problem) are
linearized around the current iterate and re-solved as QPs, with an
infinity-norm trust region and a merit-function acceptance rule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import Bounds, DynamicsModel, Trajectory, rollout, AgentState
from .qp import QpInfeasibleError, QpMaxIterationsError, QpProblem, solve_qp


class SqpInfeasibleError(Exception):
    """The constrained trajectory problem could not be solved."""


@dataclass(frozen=True)
class AvoidanceConstraint:
    """Keep-out disc: agent's position at `step` stays >= radius from center."""

    step: int
    center: np.ndarray
    radius: float
    agent: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError("keep-out radius must be positive")


@dataclass(frozen=True)
class PairwiseConstraint:
    """Separation: ||p_i - p_j|| >= distance at `step` (joint problems only)."""

    step: int
    agent_i: int
    agent_j: int
    distance: float


@dataclass
class SolveStats:
    objective: float
    iterations: int
    converged: bool
    constraint_count: int  # separation/keep-out rows posed in the final QP
    wall_time: float


@dataclass
class TrajOptProblem:
    model: DynamicsModel
    horizon: int
    x0s: np.ndarray  # (n_agents, 4)
    references: np.ndarray  # (n_agents, N+1, 4)
    Q: np.ndarray  # (4, 4) stage state weight
    R: np.ndarray  # (2, 2) input weight
    P: np.ndarray  # (4, 4) terminal weight
    bounds: Optional[Bounds] = None
    speed_cap: float = 1.5
    accel_cap: float = 2.0
    avoidance: list[AvoidanceConstraint] = field(default_factory=list)
    pairwise: list[PairwiseConstraint] = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return self.x0s.shape[0]


@dataclass
class SqpOptions:
    max_iterations: int = 60
    step_tol: float = 1e-5
    violation_tol: float = 1e-6
    trust_region: float = 1.0
    merit_penalty: float = 1e4


_PREDICTION_CACHE: dict = {}


def prediction_matrices(model: DynamicsModel, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Phi (4N x 4) and Gamma (4N x 2N): X_{1..N} = Phi x0 + Gamma U."""
    key = (round(model.dt, 12), N)
    hit = _PREDICTION_CACHE.get(key)
    if hit is not None:
        return hit
    A, B = model.A, model.B
    phi = np.zeros((4 * N, 4))
    gamma = np.zeros((4 * N, 2 * N))
    Ak = np.eye(4)
    powers = [Ak]
    for _ in range(N):
        Ak = A @ Ak
        powers.append(Ak)
    for l in range(1, N + 1):
        phi[4 * (l - 1): 4 * l] = powers[l]
        for j in range(l):
            gamma[4 * (l - 1): 4 * l, 2 * j: 2 * j + 2] = powers[l - 1 - j] @ B
    _PREDICTION_CACHE[key] = (phi, gamma)
    return phi, gamma


def trajectory_cost(traj: Trajectory, reference: np.ndarray, Q, R, P) -> float:
    """Quadratic cost: stage tracking + input effort over l=0..N-1, terminal at N."""
    dx = traj.states[:-1] - reference[:-1]
    du = traj.inputs
    dN = traj.states[-1] - reference[-1]
    return float(np.einsum("ij,jk,ik->", dx, Q, dx) + np.einsum("ij,jk,ik->", du, R, du) + dN @ P @ dN)


def _positions_from_u(problem: TrajOptProblem, U: np.ndarray) -> np.ndarray:
    """Predicted positions (n_agents, N+1, 2) for stacked inputs U (n_agents*2N,)."""
    N = problem.horizon
    phi, gamma = prediction_matrices(problem.model, N)
    out = np.empty((problem.n_agents, N + 1, 2))
    for i in range(problem.n_agents):
        u = U[i * 2 * N: (i + 1) * 2 * N]
        X = phi @ problem.x0s[i] + gamma @ u
        out[i, 0] = problem.x0s[i][:2]
        out[i, 1:] = X.reshape(N, 4)[:, :2]
    return out


def _violation(problem: TrajOptProblem, pos: np.ndarray) -> float:
    v = 0.0
    for c in problem.avoidance:
        if c.step == 0:
            continue
        v += max(0.0, c.radius - float(np.linalg.norm(pos[c.agent, c.step] - c.center)))
    for c in problem.pairwise:
        if c.step == 0:
            continue
        v += max(0.0, c.distance - float(np.linalg.norm(pos[c.agent_i, c.step] - pos[c.agent_j, c.step])))
    return v


def _direction(d: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(d)
    if n < 1e-12:
        return np.array([1.0, 0.0])  # degenerate linearization point
    return d / n


def _build_cost(problem: TrajOptProblem):
    """Stacked QP Hessian and a gradient builder (gradient depends on x0/ref only)."""
    N = problem.horizon
    phi, gamma = prediction_matrices(problem.model, N)
    W = np.zeros((4 * N, 4 * N))
    for l in range(1, N):
        W[4 * (l - 1): 4 * l, 4 * (l - 1): 4 * l] = problem.Q
    W[4 * (N - 1):, 4 * (N - 1):] = problem.P
    Rb = np.kron(np.eye(N), problem.R)
    H1 = 2.0 * (gamma.T @ W @ gamma + Rb)
    A = problem.n_agents
    H = np.kron(np.eye(A), H1)
    g = np.empty(A * 2 * N)
    for i in range(A):
        r = problem.references[i][1:].reshape(-1)
        g[i * 2 * N: (i + 1) * 2 * N] = 2.0 * gamma.T @ W @ (phi @ problem.x0s[i] - r)
    return H, g


def _build_static_rows(problem: TrajOptProblem) -> tuple[np.ndarray, np.ndarray]:
    """State box rows (positions within bounds, per-axis speed cap) as G U >= h."""
    N = problem.horizon
    A = problem.n_agents
    phi, gamma = prediction_matrices(problem.model, N)
    lo = np.empty(4)
    hi = np.empty(4)
    if problem.bounds is not None:
        lo[:2] = (problem.bounds.xmin, problem.bounds.ymin)
        hi[:2] = (problem.bounds.xmax, problem.bounds.ymax)
    else:
        lo[:2], hi[:2] = -np.inf, np.inf
    lo[2:] = -problem.speed_cap
    hi[2:] = problem.speed_cap
    rows, rhs = [], []
    nvar = A * 2 * N
    for i in range(A):
        base = phi @ problem.x0s[i]
        for sign, bound in ((1.0, lo), (-1.0, -hi)):
            mask = np.isfinite(np.tile(bound, N))
            if not mask.any():
                continue
            block = np.zeros((int(mask.sum()), nvar))
            block[:, i * 2 * N: (i + 1) * 2 * N] = sign * gamma[mask]
            rows.append(block)
            rhs.append(np.tile(bound, N)[mask] - sign * base[mask])
    if rows:
        return np.vstack(rows), np.concatenate(rhs)
    return np.zeros((0, nvar)), np.zeros(0)


def _build_linearized_rows(problem: TrajOptProblem, pos: np.ndarray):
    """Linearized keep-out / separation rows at the current positions."""
    N = problem.horizon
    A = problem.n_agents
    phi, gamma = prediction_matrices(problem.model, N)
    nvar = A * 2 * N
    total = sum(1 for c in problem.avoidance if c.step > 0) + sum(
        1 for c in problem.pairwise if c.step > 0
    )
    G = np.zeros((total, nvar))
    h = np.empty(total)
    k = 0
    for c in problem.avoidance:
        if c.step == 0:
            continue
        n = _direction(pos[c.agent, c.step] - c.center)
        grow = gamma[4 * (c.step - 1): 4 * (c.step - 1) + 2]
        base = (phi @ problem.x0s[c.agent])[4 * (c.step - 1): 4 * (c.step - 1) + 2]
        G[k, c.agent * 2 * N: (c.agent + 1) * 2 * N] = n @ grow
        h[k] = c.radius + n @ c.center - n @ base
        k += 1
    for c in problem.pairwise:
        if c.step == 0:
            continue
        n = _direction(pos[c.agent_i, c.step] - pos[c.agent_j, c.step])
        grow = gamma[4 * (c.step - 1): 4 * (c.step - 1) + 2]
        bi = (phi @ problem.x0s[c.agent_i])[4 * (c.step - 1): 4 * (c.step - 1) + 2]
        bj = (phi @ problem.x0s[c.agent_j])[4 * (c.step - 1): 4 * (c.step - 1) + 2]
        G[k, c.agent_i * 2 * N: (c.agent_i + 1) * 2 * N] = n @ grow
        G[k, c.agent_j * 2 * N: (c.agent_j + 1) * 2 * N] = -(n @ grow)
        h[k] = c.distance - n @ (bi - bj)
        k += 1
    return G[:k], h[:k]


def _binding_margin(problem: TrajOptProblem, pos: np.ndarray):
    """Most binding keep-out/separation row: (margin, per-agent lateral dirs).

    Margin is radius minus distance (positive = violated, zero = active).
    The lateral directions rotate the constraint normal by 90 degrees with a
    fixed turning sense, antisymmetric across the two agents of a pairwise
    row, and are used to kick iterates off collinear saddle geometry.
    """
    best_margin = -np.inf
    dirs: dict[int, np.ndarray] = {}
    for c in problem.avoidance:
        if c.step == 0:
            continue
        d = pos[c.agent, c.step] - c.center
        margin = c.radius - float(np.linalg.norm(d))
        if margin > best_margin:
            n = _direction(d)
            best_margin = margin
            dirs = {c.agent: np.array([-n[1], n[0]])}
    for c in problem.pairwise:
        if c.step == 0:
            continue
        d = pos[c.agent_i, c.step] - pos[c.agent_j, c.step]
        margin = c.distance - float(np.linalg.norm(d))
        if margin > best_margin:
            n = _direction(d)
            lateral = np.array([-n[1], n[0]])
            best_margin = margin
            dirs = {c.agent_i: lateral, c.agent_j: -lateral}
    return best_margin, dirs


def _apply_kick(
    U: np.ndarray, dirs: dict[int, np.ndarray], magnitude: float, n_agents: int, N: int, cap: float
) -> np.ndarray:
    out = U.copy()
    for agent, d in dirs.items():
        block = slice(agent * 2 * N, (agent + 1) * 2 * N)
        out[block] = out[block] + np.tile(magnitude * d, N)
    return np.clip(out, -cap, cap)


def _solve_relaxed(H, g, G_static, h_static, G_lin, h_lin, lb, ub, penalty, x0=None):
    """L1-relaxed QP: slack variables on the linearized keep-out rows.

    A statically feasible iterate x0 gives an analytic strictly feasible
    start (slacks covering the violated rows plus margin), which skips the
    phase-one LP and avoids the long degenerate-vertex crawl the active-set
    method suffers when started cold on these near-linear problems.
    """
    n = H.shape[0]
    m = len(G_lin)
    H_ext = np.zeros((n + m, n + m))
    H_ext[:n, :n] = H
    # Slack curvature keeps the KKT system well conditioned; at any feasible
    # optimum the slacks are zero, so the value is inconsequential there.
    H_ext[n:, n:] = 1e-4 * np.eye(m)
    g_ext = np.concatenate([g, penalty * np.ones(m)])
    G_rows = np.zeros((len(G_static) + m, n + m))
    G_rows[: len(G_static), :n] = G_static
    G_rows[len(G_static):, :n] = G_lin
    G_rows[len(G_static):, n:] = np.eye(m)
    h_rows = np.concatenate([h_static, h_lin])
    lb_ext = np.concatenate([lb, np.zeros(m)])
    ub_ext = np.concatenate([ub, np.full(m, np.inf)])
    start = None
    if x0 is not None and np.all(x0 >= lb - 1e-12) and np.all(x0 <= ub + 1e-12):
        x0c = np.clip(x0, lb, ub)
        if not len(G_static) or float(np.min(G_static @ x0c - h_static)) >= -1e-12:
            slack = np.maximum(h_lin - G_lin @ x0c, 0.0) + 0.1 if m else np.zeros(0)
            start = np.concatenate([x0c, slack])
    # From the analytic start a healthy solve needs tens of iterations; a
    # long crawl means a degenerate vertex, better reported as a stall than
    # ground through.
    res = solve_qp(
        QpProblem(hessian=H_ext, gradient=g_ext, a_in=G_rows, b_in=h_rows, lb=lb_ext, ub=ub_ext),
        x0=start,
        max_iter=300 if start is not None else None,
    )
    return res.x[:n]


def solve_sqp(
    problem: TrajOptProblem,
    seeds: Sequence[Trajectory],
    options: Optional[SqpOptions] = None,
) -> tuple[list[Trajectory], SolveStats]:
    """Solve the trajectory problem; raises SqpInfeasibleError on failure."""
    opts = options or SqpOptions()
    t_start = time.perf_counter()
    N = problem.horizon
    A = problem.n_agents
    if len(seeds) != A:
        raise ValueError("one seed trajectory per agent required")
    U0 = np.concatenate([np.asarray(s.inputs, float).reshape(-1) for s in seeds])
    H, g = _build_cost(problem)
    G_static, h_static = _build_static_rows(problem)
    n_nonlinear = sum(1 for c in problem.avoidance if c.step > 0) + sum(
        1 for c in problem.pairwise if c.step > 0
    )

    def objective(u):
        return float(0.5 * u @ H @ u + g @ u)

    def merit(u, pos):
        return objective(u) + opts.merit_penalty * _violation(problem, pos)

    # A trust box much smaller than the input caps makes aggressive
    # maneuvers (a full braking reversal) take dozens of iterations to
    # assemble; scale the box with the cap so they fit in a few steps.
    trust_max = opts.trust_region
    if np.isfinite(problem.accel_cap):
        trust_max = max(trust_max, 0.25 * problem.accel_cap)

    def run(U, budget):
        """One monotone-merit SQP run: (U, pos, converged, iters, rows, stalled)."""
        pos = _positions_from_u(problem, U)
        merit_cur = merit(U, pos)
        trust = trust_max
        iterations = 0
        final_rows = 0
        while iterations < budget:
            iterations += 1
            G_lin, h_lin = _build_linearized_rows(problem, pos)
            final_rows = len(G_lin)
            G = np.vstack([G_static, G_lin]) if len(G_lin) else G_static
            h = np.concatenate([h_static, h_lin]) if len(G_lin) else h_static
            lb = np.maximum(-problem.accel_cap, U - trust)
            ub = np.minimum(problem.accel_cap, U + trust)
            qp = QpProblem(hessian=H, gradient=g, a_in=G, b_in=h, lb=lb, ub=ub)
            try:
                if _violation(problem, pos) > 0.0:
                    # The linearized rows are violated at the iterate, so the
                    # hard QP has no cheap warm start; solve the slacked form
                    # from the iterate directly.
                    try:
                        U_new = _solve_relaxed(
                            H, g, G_static, h_static, G_lin, h_lin, lb, ub,
                            opts.merit_penalty, x0=U,
                        )
                    except QpMaxIterationsError:
                        return U, pos, False, iterations, final_rows, True
                else:
                    U_new = solve_qp(qp, x0=U).x
            except QpInfeasibleError:
                # Linearizations taken inside a keep-out disc can conflict even
                # when the original problem is feasible. Restore feasibility
                # with an L1-relaxed subproblem (slacks on the keep-out rows,
                # penalized at the merit weight); convergence still requires
                # the true violation to vanish, so returned solutions satisfy
                # the hard constraints or the solve fails.
                if not len(G_lin):
                    raise SqpInfeasibleError("QP subproblem infeasible") from None
                try:
                    U_new = _solve_relaxed(
                        H, g, G_static, h_static, G_lin, h_lin, lb, ub,
                        opts.merit_penalty, x0=U,
                    )
                except (QpInfeasibleError, QpMaxIterationsError):
                    # Even the slacked subproblem failed (a shrunken trust box
                    # can exclude every statically feasible point). Report a
                    # stall so the caller can restart from a repaired iterate.
                    return U, pos, False, iterations, final_rows, True
            except QpMaxIterationsError as exc:
                raise SqpInfeasibleError(str(exc)) from None
            step = float(np.max(np.abs(U_new - U), initial=0.0))
            pos_new = _positions_from_u(problem, U_new)
            merit_new = merit(U_new, pos_new)
            if merit_new <= merit_cur + 1e-12:
                improvement = merit_cur - merit_new
                U, pos, merit_cur = U_new, pos_new, merit_new
                trust = min(trust_max, trust * 2.0)
                viol = _violation(problem, pos)
                plateau = improvement < 1e-9 * max(1.0, abs(merit_cur))
                if n_nonlinear == 0 or (
                    (step < opts.step_tol or plateau) and viol < opts.violation_tol
                ):
                    return U, pos, True, iterations, final_rows, False
                if improvement < 1e-10 and step < 1e-8 and viol >= opts.violation_tol:
                    return U, pos, False, iterations, final_rows, True
            else:
                trust *= 0.5
                if trust < 1e-6:
                    stalled = _violation(problem, pos) >= opts.violation_tol
                    return U, pos, False, iterations, final_rows, stalled
        return U, pos, False, iterations, final_rows, False

    kick_size = 0.25 * (problem.accel_cap if np.isfinite(problem.accel_cap) else 2.0)
    iterations = 0
    nvar = A * 2 * N

    def project_static(U):
        """Closest input sequence satisfying the state box and input caps.

        Kicked iterates can breach the speed cap; the merit rule never
        repairs that, so restore hard feasibility before resuming.
        """
        lb_full = np.full(nvar, -problem.accel_cap)
        ub_full = np.full(nvar, problem.accel_cap)
        U = np.clip(U, lb_full, ub_full)
        if not len(G_static) or float(np.min(G_static @ U - h_static)) >= -1e-9:
            return U
        qp = QpProblem(
            hessian=2.0 * np.eye(nvar), gradient=-2.0 * U,
            a_in=G_static, b_in=h_static, lb=lb_full, ub=ub_full,
        )
        try:
            return solve_qp(qp).x
        except (QpInfeasibleError, QpMaxIterationsError):
            return U

    def attempt(U_init):
        """Run with stalled-saddle restarts; None when no feasible end state.

        Restarts kick the iterate sideways off the most violated row with a
        fixed turning sense so the outcome stays deterministic. A feasible
        iterate that merely missed the step tolerance still counts as a
        valid (if suboptimal) trajectory.
        """
        nonlocal iterations
        U = U_init
        for _restart in range(3):
            U, pos, conv, used, rows, stalled = run(U, opts.max_iterations)
            iterations += used
            if conv or not stalled:
                break
            _, dirs = _binding_margin(problem, pos)
            U = project_static(_apply_kick(U, dirs, kick_size, A, N, problem.accel_cap))
        if not conv and _violation(problem, pos) >= opts.violation_tol:
            return None
        return U, pos, conv, rows

    def braking_inputs():
        """Greedy max-deceleration-to-rest input sequence for every agent."""
        U = np.empty(nvar)
        dt = problem.model.dt
        for i in range(A):
            v = problem.x0s[i][2:].copy()
            for l in range(N):
                u = np.clip(-v / dt, -problem.accel_cap, problem.accel_cap)
                U[i * 2 * N + 2 * l: i * 2 * N + 2 * l + 2] = u
                v = v + dt * u
        return U

    def retreat_inputs():
        """Full-speed reversal along each agent's incoming direction.

        Backing out the way the agent came stays inside whatever free
        channel it is already traversing, which braking to rest cannot do
        when the counterpart keeps advancing. Agents at rest keep zero
        inputs.
        """
        U = np.zeros(nvar)
        dt = problem.model.dt
        for i in range(A):
            v0 = problem.x0s[i][2:]
            speed = float(np.linalg.norm(v0))
            if speed < 1e-9:
                continue
            target = -problem.speed_cap * v0 / max(np.max(np.abs(v0 / speed)) * speed, 1e-12)
            v = v0.copy()
            for l in range(N):
                u = np.clip((target - v) / dt, -problem.accel_cap, problem.accel_cap)
                U[i * 2 * N + 2 * l: i * 2 * N + 2 * l + 2] = u
                v = v + dt * u
        return U

    # Collinear geometry (a head-on pair, or an obstacle dead ahead) admits a
    # pure braking solution that is feasible over the horizon but traps the
    # closed loop on the conflict axis. Extra deterministic starts cover the
    # qualitatively different maneuvers: one kicked laterally off the most
    # binding constraint (swerving), one coasting (zero inputs, so the
    # linearization points spread along the motion axis), one braking to
    # rest (yielding). The lowest-objective feasible result wins.
    first = attempt(U0)
    best = first
    if n_nonlinear > 0 and (first is None or not first[2]):
        base_pos = first[1] if first is not None else _positions_from_u(problem, U0)
        _, dirs = _binding_margin(problem, base_pos)
        kicked = project_static(_apply_kick(U0, dirs, kick_size, A, N, problem.accel_cap))
        starts = (
            kicked,
            project_static(np.zeros(nvar)),
            project_static(braking_inputs()),
            project_static(retreat_inputs()),
        )
        for start in starts:
            extra = attempt(start)
            if extra is not None and (best is None or objective(extra[0]) < objective(best[0])):
                best = extra

    if best is None:
        raise SqpInfeasibleError(
            f"SQP did not converge in {opts.max_iterations} iterations"
        )
    U, _, converged, final_rows = best

    trajectories = []
    for i in range(A):
        u = U[i * 2 * N: (i + 1) * 2 * N].reshape(N, 2)
        trajectories.append(rollout(problem.model, AgentState.from_vector(problem.x0s[i]), u))
    total_cost = sum(
        trajectory_cost(trajectories[i], problem.references[i], problem.Q, problem.R, problem.P)
        for i in range(A)
    )
    stats = SolveStats(
        objective=float(total_cost),
        iterations=iterations,
        converged=converged,
        constraint_count=final_rows,
        wall_time=time.perf_counter() - t_start,
    )
    return trajectories, stats
