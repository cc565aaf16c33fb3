"""Tests for conflict detection, node costs, and the conflict-tree planner."""

import numpy as np
import pytest

from cbmpc.conflict_tree import PlanStepFailure, detect_conflicts, plan_step, sic
from cbmpc.model import (
    Agent,
    AgentState,
    Bounds,
    Obstacle,
    Scenario,
    Trajectory,
    make_double_integrator,
    rollout,
)
from cbmpc.mpc import AGENT, OBSTACLE, MpcParams, goal_reference, hold_trajectory, solve_mpc

BOUNDS = Bounds(-10.0, 10.0, -10.0, 10.0)


def _hold(x, y, horizon, model):
    return hold_trajectory(model, AgentState(position=(x, y), velocity=(0.0, 0.0)), horizon)


def _scenario(agents, obstacles=()):
    return Scenario(agents=tuple(agents), obstacles=tuple(obstacles), bounds=BOUNDS)


def _agent(aid, start, goal):
    return Agent(
        id=aid,
        start=AgentState(position=start, velocity=(0.0, 0.0)),
        goal=AgentState(position=goal, velocity=(0.0, 0.0)),
    )


class TestDetectConflicts:
    def test_stationary_pair_too_close(self):
        model = make_double_integrator(0.05)
        scn = _scenario([_agent(0, (0, 0), (0, 0)), _agent(1, (0.34, 0), (0.34, 0))])
        sol = {0: _hold(0, 0, 5, model), 1: _hold(0.34, 0, 5, model)}
        conflicts = detect_conflicts(sol, scn)
        assert len(conflicts) == 1
        c = conflicts[0]
        assert c.kind == AGENT and (c.agent, c.other) == (0, 1)
        assert c.t_start == 0 and c.t_end == 5

    def test_stationary_pair_at_exact_separation(self):
        model = make_double_integrator(0.05)
        scn = _scenario([_agent(0, (0, 0), (0, 0)), _agent(1, (0.35, 0), (0.35, 0))])
        sol = {0: _hold(0, 0, 5, model), 1: _hold(0.35, 0, 5, model)}
        assert detect_conflicts(sol, scn) == []

    def test_crossing_trajectories_first_violation_step(self):
        # Two agents glide toward each other at constant velocity; the first
        # step where their distance drops below 0.35 is found by brute force.
        model = make_double_integrator(0.1)
        N = 12
        a = rollout(model, AgentState(position=(-0.6, 0.0), velocity=(0.5, 0.0)), np.zeros((N, 2)))
        b = rollout(model, AgentState(position=(0.6, 0.0), velocity=(-0.5, 0.0)), np.zeros((N, 2)))
        scn = _scenario([_agent(0, (-0.6, 0), (0.6, 0)), _agent(1, (0.6, 0), (-0.6, 0))])
        dists = np.linalg.norm(a.positions - b.positions, axis=1)
        expected = int(np.nonzero(dists < 0.35 - 1e-6)[0][0])
        conflicts = detect_conflicts({0: a, 1: b}, scn)
        assert len(conflicts) == 1
        assert conflicts[0].t_start == expected
        assert conflicts[0].t_end == N

    def test_obstacle_conflict(self):
        model = make_double_integrator(0.05)
        obs = Obstacle(center=(0.3, 0.0), diameter=0.4)
        scn = _scenario([_agent(0, (0, 0), (0, 0))], [obs])
        sol = {0: _hold(0, 0, 4, model)}
        conflicts = detect_conflicts(sol, scn)
        assert len(conflicts) == 1
        c = conflicts[0]
        # center distance 0.3 < 0.2 + 0.15 + 0.05 keep-out
        assert c.kind == OBSTACLE and c.agent == 0 and c.other == 0
        assert c.t_start == 0

    def test_ordering_is_deterministic(self):
        model = make_double_integrator(0.05)
        scn = _scenario(
            [_agent(0, (0, 0), (0, 0)), _agent(1, (0.3, 0), (0.3, 0)), _agent(2, (0, 0.3), (0, 0.3))]
        )
        sol = {i: _hold(*scn.agents[i].start.position, 4, model) for i in range(3)}
        conflicts = detect_conflicts(sol, scn)
        keys = [(c.t_start, c.agent, c.other) for c in conflicts]
        assert keys == sorted(keys)
        # pair (1, 2) sits 0.3 * sqrt(2) apart, so only two pairs violate
        assert [(c.agent, c.other) for c in conflicts] == [(0, 1), (0, 2)]


class TestSic:
    def test_stationary_at_goal_is_zero(self):
        model = make_double_integrator(0.05)
        sol = {0: _hold(1.0, 2.0, 5, model)}
        assert sic(sol, {0: np.array([1.0, 2.0, 0.0, 0.0])}) == pytest.approx(0.0)

    def test_length_plus_distance_to_go(self):
        # One straight 1 m hop that stops 2 m short of the goal: 1 + 2 = 3.
        states = np.array([[0, 0, 0, 0], [1, 0, 0, 0]], dtype=float)
        traj = Trajectory(states=states, inputs=np.zeros((1, 2)))
        assert sic({0: traj}, {0: np.array([3.0, 0.0, 0.0, 0.0])}) == pytest.approx(3.0)

    def test_additive_over_agents(self):
        states = np.array([[0, 0, 0, 0], [1, 0, 0, 0]], dtype=float)
        traj = Trajectory(states=states, inputs=np.zeros((1, 2)))
        goals = {0: np.array([3.0, 0.0, 0.0, 0.0]), 1: np.array([1.0, 0.0, 0.0, 0.0])}
        assert sic({0: traj, 1: traj}, goals) == pytest.approx(3.0 + 1.0)


class TestPlanStep:
    def _params(self):
        return MpcParams(horizon=10, dt=0.1)

    def test_far_apart_agents_no_expansions(self):
        params = self._params()
        model = params.model()
        scn = _scenario([_agent(0, (-3, -3), (-2, -3)), _agent(1, (3, 3), (2, 3))])
        refs = {a.id: goal_reference(a.goal, params.horizon) for a in scn.agents}
        warm = {a.id: hold_trajectory(model, a.start, params.horizon) for a in scn.agents}
        result = plan_step(scn, params, refs, warm)
        assert result.expansions == 0
        assert result.constraint_count == 0
        assert set(result.trajectories) == {0, 1}

    def test_single_agent_matches_plain_mpc(self):
        params = self._params()
        model = params.model()
        scn = _scenario([_agent(0, (0, 0), (1, 0))])
        ref = goal_reference(scn.agents[0].goal, params.horizon)
        warm = hold_trajectory(model, scn.agents[0].start, params.horizon)
        result = plan_step(scn, params, {0: ref}, {0: warm})
        direct, _ = solve_mpc(scn.agents[0], scn, params, ref, (), {}, warm)
        np.testing.assert_array_equal(result.trajectories[0].states, direct.states)
        np.testing.assert_array_equal(result.trajectories[0].inputs, direct.inputs)

    def test_head_on_swap_resolves_separation(self):
        params = MpcParams(horizon=20, dt=0.1)
        model = params.model()
        scn = _scenario([_agent(0, (-1, 0), (1, 0)), _agent(1, (1, 0), (-1, 0))])
        refs = {a.id: goal_reference(a.goal, params.horizon) for a in scn.agents}
        warm = {a.id: hold_trajectory(model, a.start, params.horizon) for a in scn.agents}
        result = plan_step(scn, params, refs, warm)
        assert result.expansions >= 1
        d = np.linalg.norm(
            result.trajectories[0].positions - result.trajectories[1].positions, axis=1
        )
        assert d.min() >= 0.35 - 1e-6
        assert result.constraint_count > 0

    def test_obstacle_conflict_resolved(self):
        params = MpcParams(horizon=20, dt=0.1)
        model = params.model()
        obs = Obstacle(center=(0.0, 0.0), diameter=0.4)
        scn = _scenario([_agent(0, (-1, 0.05), (1, 0.05))], [obs])
        refs = {0: goal_reference(scn.agents[0].goal, params.horizon)}
        warm = {0: hold_trajectory(model, scn.agents[0].start, params.horizon)}
        result = plan_step(scn, params, refs, warm)
        d = np.linalg.norm(result.trajectories[0].positions[1:] - obs.center, axis=1)
        assert d.min() >= scn.obstacle_keepout(obs) - 1e-6

    def test_determinism(self):
        params = MpcParams(horizon=20, dt=0.1)
        model = params.model()
        scn = _scenario([_agent(0, (-1, 0), (1, 0)), _agent(1, (1, 0), (-1, 0))])
        refs = {a.id: goal_reference(a.goal, params.horizon) for a in scn.agents}
        warm = {a.id: hold_trajectory(model, a.start, params.horizon) for a in scn.agents}
        r1 = plan_step(scn, params, refs, warm)
        r2 = plan_step(scn, params, refs, warm)
        for i in (0, 1):
            np.testing.assert_array_equal(r1.trajectories[i].states, r2.trajectories[i].states)
        assert r1.expansions == r2.expansions
        assert r1.constraint_count == r2.constraint_count

    def test_expansion_cap_failure(self):
        params = MpcParams(horizon=20, dt=0.1)
        model = params.model()
        scn = _scenario([_agent(0, (-1, 0), (1, 0)), _agent(1, (1, 0), (-1, 0))])
        refs = {a.id: goal_reference(a.goal, params.horizon) for a in scn.agents}
        warm = {a.id: hold_trajectory(model, a.start, params.horizon) for a in scn.agents}
        with pytest.raises(PlanStepFailure):
            plan_step(scn, params, refs, warm, expansion_cap=0)
