"""Baseline multi-robot MPC planners: joint, prioritized, distributed, vanilla."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .conflict_tree import PlanStepFailure, PlanStepResult, detect_conflicts, node_constraint_rows
from .model import Scenario, Trajectory
from .mpc import AGENT, OBSTACLE, ConstraintRecord, MpcParams, all_obstacle_records, solve_mpc
from .sqp import (
    AvoidanceConstraint,
    PairwiseConstraint,
    SqpInfeasibleError,
    SqpOptions,
    TrajOptProblem,
    solve_sqp,
)


@dataclass(frozen=True)
class PriorityAssignment:
    order: tuple[int, ...]  # agent ids, highest priority first
    seed: int


def make_priorities(scenario: Scenario, seed: int) -> PriorityAssignment:
    """Random priority permutation, reproducible from the seed."""
    rng = np.random.default_rng(seed)
    ids = [a.id for a in scenario.agents]
    order = tuple(int(i) for i in rng.permutation(ids))
    return PriorityAssignment(order=order, seed=seed)


def joint_constraint_count(n_agents: int, n_obstacles: int, horizon: int) -> int:
    """Separation rows posed by joint MPC, counted once per involved agent."""
    pairs = n_agents * (n_agents - 1) // 2
    return horizon * (2 * pairs + n_agents * n_obstacles)


def plan_step_joint(
    scenario: Scenario,
    params: MpcParams,
    references: Mapping[int, np.ndarray],
    warm_starts: Mapping[int, Trajectory],
    sqp_options: Optional[SqpOptions] = None,
) -> PlanStepResult:
    """Single optimization over all agents with every coupling constraint."""
    N = params.horizon
    ids = [a.id for a in scenario.agents]
    index_of = {aid: k for k, aid in enumerate(ids)}
    sep = scenario.agent_separation()
    pairwise = [
        PairwiseConstraint(step=l, agent_i=index_of[i], agent_j=index_of[j], distance=sep)
        for k, i in enumerate(ids)
        for j in ids[k + 1:]
        for l in range(1, N + 1)
    ]
    avoidance = []
    for aid in ids:
        for m, obs in enumerate(scenario.obstacles):
            keepout = scenario.obstacle_keepout(obs)
            for l in range(1, N + 1):
                avoidance.append(
                    AvoidanceConstraint(step=l, center=obs.center, radius=keepout, agent=index_of[aid])
                )
    problem = TrajOptProblem(
        model=params.model(),
        horizon=N,
        x0s=np.stack([warm_starts[aid].states[0] for aid in ids]),
        references=np.stack([np.asarray(references[aid], float) for aid in ids]),
        Q=params.Q,
        R=params.R,
        P=params.P,
        bounds=scenario.bounds,
        speed_cap=params.speed_cap,
        accel_cap=params.accel_cap,
        avoidance=avoidance,
        pairwise=pairwise,
    )
    t0 = time.perf_counter()
    try:
        trajs, _ = solve_sqp(problem, [warm_starts[aid] for aid in ids], sqp_options)
    except SqpInfeasibleError as exc:
        raise PlanStepFailure(f"joint solve infeasible: {exc}") from None
    elapsed = time.perf_counter() - t0
    solution = {aid: trajs[index_of[aid]] for aid in ids}
    # One shared solve; split the wall time so per-agent sums match reality.
    share = elapsed / len(ids)
    return PlanStepResult(
        first_inputs={i: t.inputs[0].copy() for i, t in solution.items()},
        trajectories=solution,
        constraint_count=joint_constraint_count(len(ids), len(scenario.obstacles), N),
        expansions=0,
        solve_times={aid: share for aid in ids},
    )


def plan_step_prioritized(
    scenario: Scenario,
    params: MpcParams,
    priorities: PriorityAssignment,
    references: Mapping[int, np.ndarray],
    warm_starts: Mapping[int, Trajectory],
    sqp_options: Optional[SqpOptions] = None,
) -> PlanStepResult:
    """Sequential solves; each agent avoids all higher-priority trajectories."""
    N = params.horizon
    agents = {a.id: a for a in scenario.agents}
    solution: dict[int, Trajectory] = {}
    solve_times: dict[int, float] = {}
    total_rows = 0
    for rank, aid in enumerate(priorities.order):
        records = all_obstacle_records(scenario, aid, N)
        for higher in priorities.order[:rank]:
            records.append(
                ConstraintRecord(agent=aid, counterpart_kind=AGENT, counterpart=higher, t_start=0, t_end=N)
            )
        t0 = time.perf_counter()
        try:
            traj, _ = solve_mpc(
                agents[aid], scenario, params, references[aid], records, solution, warm_starts[aid], sqp_options
            )
        except SqpInfeasibleError as exc:
            raise PlanStepFailure(f"priority rank {rank} (agent {aid}) infeasible: {exc}") from None
        solve_times[aid] = time.perf_counter() - t0
        total_rows += node_constraint_rows(records, N)
        solution[aid] = traj
    return PlanStepResult(
        first_inputs={i: t.inputs[0].copy() for i, t in solution.items()},
        trajectories=solution,
        constraint_count=total_rows,
        expansions=0,
        solve_times=solve_times,
    )


def plan_step_vanilla(
    scenario: Scenario,
    params: MpcParams,
    references: Mapping[int, np.ndarray],
    warm_starts: Mapping[int, Trajectory],
    sqp_options: Optional[SqpOptions] = None,
) -> PlanStepResult:
    """Independent per-agent solves with obstacle constraints only."""
    N = params.horizon
    agents = {a.id: a for a in scenario.agents}
    solution: dict[int, Trajectory] = {}
    solve_times: dict[int, float] = {}
    total_rows = 0
    for aid in sorted(agents):
        records = all_obstacle_records(scenario, aid, N)
        t0 = time.perf_counter()
        try:
            traj, _ = solve_mpc(
                agents[aid], scenario, params, references[aid], records, {}, warm_starts[aid], sqp_options
            )
        except SqpInfeasibleError as exc:
            raise PlanStepFailure(f"vanilla solve infeasible for agent {aid}: {exc}") from None
        solve_times[aid] = time.perf_counter() - t0
        total_rows += node_constraint_rows(records, N)
        solution[aid] = traj
    return PlanStepResult(
        first_inputs={i: t.inputs[0].copy() for i, t in solution.items()},
        trajectories=solution,
        constraint_count=total_rows,
        expansions=0,
        solve_times=solve_times,
    )


def plan_step_distributed(
    scenario: Scenario,
    params: MpcParams,
    references: Mapping[int, np.ndarray],
    warm_starts: Mapping[int, Trajectory],
    max_rounds: int = 10,
    sqp_options: Optional[SqpOptions] = None,
) -> PlanStepResult:
    """On-demand conflict resolution without a coordinator.

    All agents first solve with obstacle constraints only, then share their
    predictions. Every agent involved in a detected conflict independently
    adds the constraint over [t_c, N] against the counterpart's shared
    prediction and re-solves; detection and re-solving repeat up to
    `max_rounds`, after which execution proceeds with the latest plans
    (residual conflicts surface in the execution audit or as deadlock).
    """
    N = params.horizon
    agents = {a.id: a for a in scenario.agents}
    solve_times: dict[int, float] = {aid: 0.0 for aid in agents}
    records: dict[int, list[ConstraintRecord]] = {
        aid: all_obstacle_records(scenario, aid, N) for aid in agents
    }

    def solve_one(aid, fixed):
        t0 = time.perf_counter()
        try:
            traj, _ = solve_mpc(
                agents[aid], scenario, params, references[aid], records[aid], fixed, warm_starts[aid], sqp_options
            )
        except SqpInfeasibleError as exc:
            raise PlanStepFailure(f"distributed solve infeasible for agent {aid}: {exc}") from None
        solve_times[aid] += time.perf_counter() - t0
        return traj

    predictions = {aid: solve_one(aid, {}) for aid in sorted(agents)}
    rounds = 0
    for _ in range(max_rounds):
        conflicts = detect_conflicts(predictions, scenario)
        if not conflicts:
            break
        rounds += 1
        involved: set[int] = set()
        for c in conflicts:
            if c.kind == AGENT:
                pairs = ((c.agent, c.other), (c.other, c.agent))
            else:
                pairs = ((c.agent, c.other),)
            for aid, other in pairs:
                kind = AGENT if c.kind == AGENT else OBSTACLE
                rec = ConstraintRecord(
                    agent=aid, counterpart_kind=kind, counterpart=other, t_start=c.t_start, t_end=N
                )
                if rec not in records[aid]:
                    records[aid].append(rec)
                involved.add(aid)
        shared = dict(predictions)  # simultaneous re-solve against shared plans
        for aid in sorted(involved):
            fixed = {i: t for i, t in shared.items() if i != aid}
            predictions[aid] = solve_one(aid, fixed)
    total_rows = sum(node_constraint_rows(records[aid], N) for aid in agents)
    return PlanStepResult(
        first_inputs={i: t.inputs[0].copy() for i, t in predictions.items()},
        trajectories=dict(predictions),
        constraint_count=total_rows,
        expansions=rounds,
        solve_times=solve_times,
    )
