import numpy as np
import pytest

from cbmpc.model import AgentState, Bounds, make_double_integrator, rollout
from cbmpc.mpc import hold_trajectory
from cbmpc.qp import QpProblem, solve_qp
from cbmpc.sqp import (
    AvoidanceConstraint,
    PairwiseConstraint,
    SqpInfeasibleError,
    SqpOptions,
    TrajOptProblem,
    prediction_matrices,
    solve_sqp,
    trajectory_cost,
)


def state(px, py, vx=0.0, vy=0.0):
    return AgentState(position=np.array([px, py]), velocity=np.array([vx, vy]))


def goal_ref(goal_vec, N):
    return np.tile(np.asarray(goal_vec, float), (N + 1, 1))


def make_problem(model, N, x0, ref, **kw):
    defaults = dict(
        Q=5.0 * np.eye(4),
        R=1.0 * np.eye(2),
        P=40.0 * np.eye(4),
        bounds=Bounds(-10, 10, -10, 10),
        speed_cap=1.5,
        accel_cap=2.0,
    )
    defaults.update(kw)
    return TrajOptProblem(
        model=model,
        horizon=N,
        x0s=np.asarray(x0.as_vector())[None, :],
        references=np.asarray(ref)[None, :, :],
        **defaults,
    )


def test_prediction_matrices_match_rollout():
    model = make_double_integrator(0.05)
    N = 12
    rng = np.random.default_rng(2)
    u = rng.standard_normal((N, 2))
    x0 = state(0.2, -0.3, 0.4, 0.1)
    traj = rollout(model, x0, u)
    phi, gamma = prediction_matrices(model, N)
    X = phi @ x0.as_vector() + gamma @ u.reshape(-1)
    np.testing.assert_allclose(X.reshape(N, 4), traj.states[1:], atol=1e-12)


def test_unconstrained_matches_plain_qp():
    # With no keep-out constraints SQP reduces to a single QP solve.
    model = make_double_integrator(0.05)
    N = 8
    x0 = state(0, 0)
    ref = goal_ref([0.3, 0.1, 0, 0], N)
    problem = make_problem(model, N, x0, ref)
    trajs, stats = solve_sqp(problem, [hold_trajectory(model, x0, N)])
    assert stats.converged

    from cbmpc.sqp import _build_cost

    H, g = _build_cost(problem)
    res = solve_qp(
        QpProblem(
            hessian=H,
            gradient=g,
            lb=-2.0 * np.ones(2 * N),
            ub=2.0 * np.ones(2 * N),
        )
    )
    np.testing.assert_allclose(trajs[0].inputs.reshape(-1), res.x, atol=1e-6)


def test_one_step_disc_projection():
    # min ||p - g||^2 s.t. ||p - c|| >= r with the goal strictly inside the
    # disc: the optimum is the radial projection of g onto the boundary.
    model = make_double_integrator(1.0)
    x0 = state(0, 0)
    g_pos = np.array([0.3, 0.1])
    center = np.array([0.25, 0.0])
    radius = 0.4
    ref = goal_ref([g_pos[0], g_pos[1], 0, 0], 1)
    problem = make_problem(
        model,
        1,
        x0,
        ref,
        Q=np.zeros((4, 4)),
        R=1e-10 * np.eye(2),
        P=np.diag([1.0, 1.0, 0.0, 0.0]),
        bounds=None,
        speed_cap=np.inf,
        accel_cap=np.inf,
        avoidance=[AvoidanceConstraint(step=1, center=center, radius=radius)],
    )
    trajs, stats = solve_sqp(problem, [hold_trajectory(model, x0, 1)], SqpOptions(trust_region=2.0))
    expected = center + radius * (g_pos - center) / np.linalg.norm(g_pos - center)
    np.testing.assert_allclose(trajs[0].positions[1], expected, atol=1e-4)


def test_avoidance_constraints_satisfied():
    # Straight-line reference passes through the keep-out disc; the agent
    # starts at rest so staying put is feasible and a detour must be found.
    model = make_double_integrator(0.05)
    N = 20
    x0 = state(0, 0)
    ref = goal_ref([0.5, 0.05, 0, 0], N)
    center = np.array([0.25, 0.0])
    avoid = [AvoidanceConstraint(step=l, center=center, radius=0.15) for l in range(1, N + 1)]
    problem = make_problem(model, N, x0, ref, avoidance=avoid)
    trajs, stats = solve_sqp(problem, [hold_trajectory(model, x0, N)])
    dists = np.linalg.norm(trajs[0].positions[1:] - center, axis=1)
    assert np.min(dists) >= 0.15 - 1e-6


def test_linearized_halfplane_is_subset_of_disc_exterior():
    # Any point satisfying n'(p - c) >= r also satisfies ||p - c|| >= r.
    rng = np.random.default_rng(5)
    for _ in range(200):
        c = rng.standard_normal(2)
        r = rng.uniform(0.1, 2.0)
        p0 = c + rng.standard_normal(2)
        n = p0 - c
        n = n / np.linalg.norm(n) if np.linalg.norm(n) > 1e-12 else np.array([1.0, 0.0])
        p = rng.standard_normal(2) * 3
        if n @ (p - c) >= r:
            assert np.linalg.norm(p - c) >= r


def test_infeasible_problem_raises():
    # Keep-out disc covers every reachable point at step 1.
    model = make_double_integrator(0.05)
    x0 = state(0, 0)
    ref = goal_ref([1, 0, 0, 0], 1)
    problem = make_problem(
        model,
        1,
        x0,
        ref,
        avoidance=[AvoidanceConstraint(step=1, center=np.zeros(2), radius=5.0)],
    )
    with pytest.raises(SqpInfeasibleError):
        solve_sqp(problem, [hold_trajectory(model, x0, 1)])


def test_objective_not_worse_than_feasible_seed():
    model = make_double_integrator(0.05)
    N = 10
    x0 = state(0, 0)
    ref = goal_ref([0.5, 0.0, 0, 0], N)
    avoid = [
        AvoidanceConstraint(step=l, center=np.array([0.25, -0.3]), radius=0.2)
        for l in range(1, N + 1)
    ]
    problem = make_problem(model, N, x0, ref, avoidance=avoid)
    seed = hold_trajectory(model, x0, N)  # staying put is feasible here
    seed_cost = trajectory_cost(seed, np.asarray(ref), problem.Q, problem.R, problem.P)
    trajs, stats = solve_sqp(problem, [seed])
    assert stats.objective <= seed_cost + 1e-9


def test_determinism():
    model = make_double_integrator(0.05)
    N = 10
    x0 = state(0, 0)
    ref = goal_ref([0.6, 0.1, 0, 0], N)
    avoid = [AvoidanceConstraint(step=l, center=np.array([0.3, 0.0]), radius=0.25) for l in range(1, N + 1)]
    problem = make_problem(model, N, x0, ref, avoidance=avoid)
    t1, s1 = solve_sqp(problem, [hold_trajectory(model, x0, N)])
    t2, s2 = solve_sqp(problem, [hold_trajectory(model, x0, N)])
    assert np.array_equal(t1[0].inputs, t2[0].inputs)
    assert s1.objective == s2.objective


def test_gradient_matches_finite_differences():
    model = make_double_integrator(0.05)
    N = 6
    x0 = state(0.1, -0.2, 0.3, 0.0)
    ref = goal_ref([0.5, 0.5, 0, 0], N)
    problem = make_problem(model, N, x0, ref)

    from cbmpc.sqp import _build_cost

    H, g = _build_cost(problem)
    rng = np.random.default_rng(9)
    u = rng.standard_normal(2 * N) * 0.5

    def obj(uu):
        traj = rollout(model, x0, uu.reshape(N, 2))
        return trajectory_cost(traj, np.asarray(ref), problem.Q, problem.R, problem.P)

    analytic = H @ u + g
    eps = 1e-6
    for k in range(2 * N):
        e = np.zeros(2 * N)
        e[k] = eps
        fd = (obj(u + e) - obj(u - e)) / (2 * eps)
        assert fd == pytest.approx(analytic[k], rel=1e-5, abs=1e-7)


def test_pairwise_constraint_joint_solve():
    # Two agents head-on; pairwise separation must hold at every step.
    model = make_double_integrator(0.05)
    N = 20
    a = state(-0.5, 0)
    b = state(0.5, 0)
    refs = np.stack([goal_ref([0.5, 0, 0, 0], N), goal_ref([-0.5, 0, 0, 0], N)])
    pairwise = [PairwiseConstraint(step=l, agent_i=0, agent_j=1, distance=0.35) for l in range(1, N + 1)]
    problem = TrajOptProblem(
        model=model,
        horizon=N,
        x0s=np.stack([a.as_vector(), b.as_vector()]),
        references=refs,
        Q=5.0 * np.eye(4),
        R=np.eye(2),
        P=40.0 * np.eye(4),
        bounds=Bounds(-3, 3, -3, 3),
        pairwise=pairwise,
    )
    seeds = [hold_trajectory(model, a, N), hold_trajectory(model, b, N)]
    trajs, stats = solve_sqp(problem, seeds)
    d = np.linalg.norm(trajs[0].positions - trajs[1].positions, axis=1)
    assert np.min(d[1:]) >= 0.35 - 1e-6
