"""Per-agent receding-horizon MPC: problem assembly around the SQP solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .model import Agent, AgentState, DynamicsModel, Scenario, Trajectory, make_double_integrator
from .sqp import (
    AvoidanceConstraint,
    SolveStats,
    SqpInfeasibleError,
    SqpOptions,
    TrajOptProblem,
    solve_sqp,
)

AGENT = "agent"
OBSTACLE = "obstacle"


@dataclass(frozen=True)
class MpcParams:
    horizon: int = 20
    q_weight: float = 5.0  # reference tracking
    r_weight: float = 1.0  # control effort
    p_weight: float = 40.0  # terminal deviation
    dt: float = 0.05
    speed_cap: float = 1.5  # per axis [m/s]
    accel_cap: float = 2.0  # per axis [m/s^2]

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.q_weight, self.r_weight, self.p_weight) < 0:
            raise ValueError("weights must be non-negative")

    @property
    def Q(self) -> np.ndarray:
        return self.q_weight * np.eye(4)

    @property
    def R(self) -> np.ndarray:
        return self.r_weight * np.eye(2)

    @property
    def P(self) -> np.ndarray:
        return self.p_weight * np.eye(4)

    def model(self) -> DynamicsModel:
        return make_double_integrator(self.dt)


@dataclass(frozen=True)
class ConstraintRecord:
    """A separation requirement for one agent over a horizon step range."""

    agent: int
    counterpart_kind: str  # AGENT | OBSTACLE
    counterpart: int  # agent id or obstacle index
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.counterpart_kind not in (AGENT, OBSTACLE):
            raise ValueError(f"unknown counterpart kind {self.counterpart_kind!r}")
        if not 0 <= self.t_start <= self.t_end:
            raise ValueError("invalid constraint time range")


def goal_reference(goal: AgentState, horizon: int) -> np.ndarray:
    """Constant reference at the goal state, shape (N+1, 4)."""
    return np.tile(goal.as_vector(), (horizon + 1, 1))


def trajectory_length(traj: Trajectory) -> float:
    """Sum of Euclidean lengths of consecutive position segments."""
    seg = np.diff(traj.positions, axis=0)
    return float(np.sum(np.linalg.norm(seg, axis=1)))


def shift_warm_start(model: DynamicsModel, prev: Trajectory) -> Trajectory:
    """Advance a plan one step: drop the first input, repeat the last one."""
    inputs = np.vstack([prev.inputs[1:], prev.inputs[-1:]])
    states = np.empty_like(prev.states)
    states[:-1] = prev.states[1:]
    states[-1] = model.A @ prev.states[-1] + model.B @ inputs[-1]
    return Trajectory(states=states, inputs=inputs)


def hold_trajectory(model: DynamicsModel, state: AgentState, horizon: int) -> Trajectory:
    """Zero-input rollout from a state; the default cold-start seed."""
    from .model import rollout

    return rollout(model, state, np.zeros((horizon, 2)))


def expand_constraints(
    scenario: Scenario,
    records: Sequence[ConstraintRecord],
    fixed_trajectories: Mapping[int, Trajectory],
    horizon: int,
    agent_index: int = 0,
) -> list[AvoidanceConstraint]:
    """Expand constraint records into per-step keep-out discs.

    Step 0 is the (fixed) current state and is skipped; agent-agent records
    use the counterpart's fixed trajectory positions as disc centers.
    """
    out: list[AvoidanceConstraint] = []
    sep = scenario.agent_separation()
    for rec in records:
        t_end = min(rec.t_end, horizon)
        if rec.counterpart_kind == AGENT:
            fixed = fixed_trajectories[rec.counterpart]
            for l in range(max(rec.t_start, 1), t_end + 1):
                out.append(
                    AvoidanceConstraint(
                        step=l, center=fixed.positions[l], radius=sep, agent=agent_index
                    )
                )
        else:
            obs = scenario.obstacles[rec.counterpart]
            keepout = scenario.obstacle_keepout(obs)
            for l in range(max(rec.t_start, 1), t_end + 1):
                out.append(
                    AvoidanceConstraint(step=l, center=obs.center, radius=keepout, agent=agent_index)
                )
    return out


def all_obstacle_records(scenario: Scenario, agent_id: int, horizon: int) -> list[ConstraintRecord]:
    """One record per obstacle covering the whole horizon."""
    return [
        ConstraintRecord(agent=agent_id, counterpart_kind=OBSTACLE, counterpart=m, t_start=0, t_end=horizon)
        for m in range(len(scenario.obstacles))
    ]


def solve_mpc(
    agent: Agent,
    scenario: Scenario,
    params: MpcParams,
    reference: np.ndarray,
    constraints: Sequence[ConstraintRecord],
    fixed_trajectories: Mapping[int, Trajectory],
    seed: Trajectory,
    options: Optional[SqpOptions] = None,
) -> tuple[Trajectory, SolveStats]:
    """Solve one agent's horizon problem with the given constraint set.

    The current state is the seed's initial state. Raises SqpInfeasibleError
    when no feasible trajectory is found.
    """
    N = params.horizon
    if seed.horizon != N:
        raise ValueError("seed horizon does not match params")
    reference = np.asarray(reference, dtype=float)
    if reference.shape != (N + 1, 4):
        raise ValueError("reference must be (N+1, 4)")
    for rec in constraints:
        if rec.counterpart_kind == AGENT and rec.counterpart not in fixed_trajectories:
            raise ValueError(f"no fixed trajectory for counterpart agent {rec.counterpart}")
    avoidance = expand_constraints(scenario, constraints, fixed_trajectories, N)
    problem = TrajOptProblem(
        model=params.model(),
        horizon=N,
        x0s=seed.states[0][None, :],
        references=reference[None, :, :],
        Q=params.Q,
        R=params.R,
        P=params.P,
        bounds=scenario.bounds,
        speed_cap=params.speed_cap,
        accel_cap=params.accel_cap,
        avoidance=avoidance,
    )
    trajs, stats = solve_sqp(problem, [seed], options)
    return trajs[0], stats
