"""Conflict-tree planner: best-first search over per-agent MPC solutions.

Each control step runs a small constraint-tree search. The root solves every
agent's MPC without separation or obstacle constraints; conflicts found in a
popped node spawn children that re-solve a single agent with the conflict
appended as a constraint over [t_c, N], counterpart trajectories held fixed
from the parent's solution.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .model import CONTACT_TOL, Scenario, Trajectory
from .mpc import (
    AGENT,
    OBSTACLE,
    ConstraintRecord,
    MpcParams,
    solve_mpc,
    trajectory_length,
)
from .sqp import SqpInfeasibleError, SqpOptions


@dataclass(frozen=True)
class Conflict:
    kind: str  # AGENT | OBSTACLE
    agent: int  # constrained-able agent id (first party)
    other: int  # second agent id, or obstacle index
    t_start: int
    t_end: int

    @property
    def parties(self) -> tuple[int, ...]:
        return (self.agent, self.other) if self.kind == AGENT else (self.agent,)


@dataclass
class CTNode:
    constraints: tuple[ConstraintRecord, ...]
    solution: dict[int, Trajectory]
    cost: float
    index: int  # creation order; FIFO tie-break in the open list

    def sort_key(self):
        return (self.cost, self.index)


@dataclass
class PlanStepResult:
    first_inputs: dict[int, np.ndarray]
    trajectories: dict[int, Trajectory]
    constraint_count: int  # separation rows posed in the returned node
    expansions: int
    solve_times: dict[int, float]  # per-agent MPC wall time this step


class PlanStepFailure(Exception):
    """No conflict-free node found (infeasible solves or cap exhausted)."""


def detect_conflicts(
    solution: Mapping[int, Trajectory], scenario: Scenario, tol: float = CONTACT_TOL
) -> list[Conflict]:
    """First violation per agent pair / agent-obstacle pair, over [t_c, N].

    Conflicts are ordered by earliest start time, ties by party ids, so the
    "first conflict" choice downstream is deterministic.
    """
    ids = sorted(solution.keys())
    lengths = {solution[i].horizon for i in ids}
    if len(lengths) > 1:
        raise ValueError("trajectories must share a horizon")
    N = lengths.pop() if lengths else 0
    sep = scenario.agent_separation()
    conflicts: list[Conflict] = []
    for ii in range(len(ids)):
        for jj in range(ii + 1, len(ids)):
            i, j = ids[ii], ids[jj]
            d = np.linalg.norm(solution[i].positions - solution[j].positions, axis=1)
            viol = np.nonzero(d < sep - tol)[0]
            if len(viol):
                conflicts.append(
                    Conflict(kind=AGENT, agent=i, other=j, t_start=int(viol[0]), t_end=N)
                )
    for i in ids:
        pos = solution[i].positions
        for m, obs in enumerate(scenario.obstacles):
            keepout = scenario.obstacle_keepout(obs)
            d = np.linalg.norm(pos - obs.center, axis=1)
            viol = np.nonzero(d < keepout - tol)[0]
            if len(viol):
                conflicts.append(
                    Conflict(kind=OBSTACLE, agent=i, other=m, t_start=int(viol[0]), t_end=N)
                )
    conflicts.sort(key=lambda c: (c.t_start, 0 if c.kind == AGENT else 1, c.agent, c.other))
    return conflicts


def sic(solution: Mapping[int, Trajectory], goals: Mapping[int, np.ndarray]) -> float:
    """Sum of individual costs: path length plus Euclidean cost-to-go."""
    total = 0.0
    for i, traj in solution.items():
        total += trajectory_length(traj)
        total += float(np.linalg.norm(traj.positions[-1] - np.asarray(goals[i])[:2]))
    return total


def _record_rows(rec: ConstraintRecord, horizon: int) -> int:
    return min(rec.t_end, horizon) - max(rec.t_start, 1) + 1


def node_constraint_rows(constraints: Sequence[ConstraintRecord], horizon: int) -> int:
    return sum(max(0, _record_rows(rec, horizon)) for rec in constraints)


def plan_step(
    scenario: Scenario,
    params: MpcParams,
    references: Mapping[int, np.ndarray],
    warm_starts: Mapping[int, Trajectory],
    expansion_cap: int = 100,
    sqp_options: Optional[SqpOptions] = None,
) -> PlanStepResult:
    """One CB-MPC control step. Raises PlanStepFailure when unresolvable."""
    N = params.horizon
    goals = {a.id: a.goal.as_vector() for a in scenario.agents}
    agents = {a.id: a for a in scenario.agents}
    solve_times = {a.id: 0.0 for a in scenario.agents}

    # Root: each agent ignores all separation and obstacle constraints.
    root_solution: dict[int, Trajectory] = {}
    try:
        for a in scenario.agents:
            t0 = time.perf_counter()
            traj, _ = solve_mpc(
                a, scenario, params, references[a.id], (), {}, warm_starts[a.id], sqp_options
            )
            solve_times[a.id] += time.perf_counter() - t0
            root_solution[a.id] = traj
    except SqpInfeasibleError as exc:
        raise PlanStepFailure(f"root solve infeasible: {exc}") from None

    counter = 0
    root = CTNode(constraints=(), solution=root_solution, cost=sic(root_solution, goals), index=counter)
    open_list: list[tuple[float, int, CTNode]] = []
    heapq.heappush(open_list, (root.cost, root.index, root))
    expansions = 0
    while open_list:
        _, _, node = heapq.heappop(open_list)
        conflicts = detect_conflicts(node.solution, scenario)
        if not conflicts:
            return PlanStepResult(
                first_inputs={i: t.inputs[0].copy() for i, t in node.solution.items()},
                trajectories=dict(node.solution),
                constraint_count=node_constraint_rows(node.constraints, N),
                expansions=expansions,
                solve_times=dict(solve_times),
            )
        if expansions >= expansion_cap:
            raise PlanStepFailure(f"expansion cap {expansion_cap} reached")
        expansions += 1
        conflict = conflicts[0]
        if conflict.kind == AGENT:
            branch_agents = [(conflict.agent, conflict.other), (conflict.other, conflict.agent)]
        else:
            branch_agents = [(conflict.agent, conflict.other)]
        for agent_id, other in branch_agents:
            kind = AGENT if conflict.kind == AGENT else OBSTACLE
            rec = ConstraintRecord(
                agent=agent_id,
                counterpart_kind=kind,
                counterpart=other,
                t_start=conflict.t_start,
                t_end=N,
            )
            constraints = node.constraints + (rec,)
            fixed = {i: t for i, t in node.solution.items() if i != agent_id}
            try:
                # Warm start from the parent's trajectory for this agent.
                t0 = time.perf_counter()
                traj, _ = solve_mpc(
                    agents[agent_id],
                    scenario,
                    params,
                    references[agent_id],
                    [c for c in constraints if c.agent == agent_id],
                    fixed,
                    node.solution[agent_id],
                    sqp_options,
                )
                solve_times[agent_id] += time.perf_counter() - t0
            except SqpInfeasibleError:
                continue  # this child is pruned
            solution = dict(node.solution)
            solution[agent_id] = traj
            counter += 1
            child = CTNode(
                constraints=constraints,
                solution=solution,
                cost=sic(solution, goals),
                index=counter,
            )
            heapq.heappush(open_list, (child.cost, child.index, child))
    raise PlanStepFailure("open list exhausted (all children infeasible)")
