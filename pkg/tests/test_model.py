import numpy as np
import pytest

from cbmpc.model import (
    Agent,
    AgentState,
    Bounds,
    ControlInput,
    Obstacle,
    Scenario,
    load_scenario,
    make_double_integrator,
    propagate,
    rollout,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    validate_scenario,
)


def state(px, py, vx=0.0, vy=0.0):
    return AgentState(position=np.array([px, py]), velocity=np.array([vx, vy]))


def test_double_integrator_matrices():
    m = make_double_integrator(0.05)
    assert m.B[0, 0] == pytest.approx(0.00125)
    assert m.B[2, 0] == pytest.approx(0.05)
    assert m.A[0, 2] == pytest.approx(0.05)
    m1 = make_double_integrator(1.0)
    assert np.allclose(np.diag(m1.A), 1.0)
    assert m1.A[0, 2] == 1.0 and m1.A[1, 3] == 1.0


def test_double_integrator_rejects_bad_dt():
    with pytest.raises(ValueError):
        make_double_integrator(0.0)
    with pytest.raises(ValueError):
        make_double_integrator(-0.1)


def test_propagate_from_rest():
    m = make_double_integrator(0.05)
    x1 = propagate(m, state(0, 0), ControlInput(np.array([1.0, 0.0])))
    np.testing.assert_allclose(x1.as_vector(), [0.00125, 0.0, 0.05, 0.0])


def test_propagate_constant_velocity():
    m = make_double_integrator(0.05)
    x1 = propagate(m, state(1, 2, 0.5, 0), ControlInput(np.zeros(2)))
    np.testing.assert_allclose(x1.as_vector(), [1.025, 2.0, 0.5, 0.0])


def test_propagate_fixpoint_at_rest():
    m = make_double_integrator(0.05)
    x = state(-3.7, 12.0)
    x1 = propagate(m, x, ControlInput(np.zeros(2)))
    np.testing.assert_array_equal(x1.as_vector(), x.as_vector())


def test_propagate_linearity():
    m = make_double_integrator(0.1)
    rng = np.random.default_rng(0)
    for _ in range(10):
        z1, z2 = rng.standard_normal(4), rng.standard_normal(4)
        u1, u2 = rng.standard_normal(2), rng.standard_normal(2)
        lhs = propagate(
            m, AgentState.from_vector(z1 + z2), ControlInput(u1 + u2)
        ).as_vector()
        rhs = (
            propagate(m, AgentState.from_vector(z1), ControlInput(u1)).as_vector()
            + propagate(m, AgentState.from_vector(z2), ControlInput(u2)).as_vector()
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_rollout_dynamics_invariant():
    m = make_double_integrator(0.05)
    rng = np.random.default_rng(1)
    traj = rollout(m, state(0.3, -0.2, 0.1, 0.0), rng.standard_normal((25, 2)))
    assert traj.dynamics_residual(m) <= 1e-12


def make_scenario(agents, obstacles=()):
    return Scenario(
        agents=tuple(agents),
        obstacles=tuple(obstacles),
        bounds=Bounds(-5, 5, -5, 5),
    )


def test_validator_flags_identical_starts():
    s = make_scenario(
        [
            Agent(0, state(0, 0), state(1, 1)),
            Agent(1, state(0, 0), state(-1, -1)),
        ]
    )
    report = validate_scenario(s)
    assert any("condition 1" in v for v in report.violations)


def test_validator_flags_start_inside_obstacle():
    s = make_scenario(
        [Agent(0, state(0, 0), state(2, 2))],
        [Obstacle(center=np.array([0.1, 0.0]), diameter=0.5)],
    )
    report = validate_scenario(s)
    assert any("condition 2" in v for v in report.violations)


def test_validator_accepts_wide_obstacle_gap():
    s = make_scenario(
        [Agent(0, state(-4, -4), state(4, 4))],
        [
            Obstacle(center=np.array([-5 + 10, 0]), diameter=0.5),
            Obstacle(center=np.array([-5, 0]), diameter=0.5),
        ],
    )
    report = validate_scenario(s)
    assert not any("condition 3" in v for v in report.violations)


def test_scenario_roundtrip(tmp_path):
    s = make_scenario(
        [Agent(0, state(3, 3), state(-3, -3)), Agent(1, state(-3, -3), state(3, 3))],
        [Obstacle(center=np.array([1.0, -1.0]), diameter=0.4)],
    )
    path = tmp_path / "scenario.json"
    save_scenario(s, path)
    loaded = load_scenario(path)
    assert scenario_to_dict(loaded) == scenario_to_dict(s)
    assert scenario_from_dict(scenario_to_dict(s)).n_agents == 2
