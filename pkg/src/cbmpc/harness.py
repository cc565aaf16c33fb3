"""Receding-horizon episode executor, safety audit, and metric aggregation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .baselines import (
    make_priorities,
    plan_step_distributed,
    plan_step_joint,
    plan_step_prioritized,
    plan_step_vanilla,
)
from .cbs_grid import GridPlan, GridPlanError, plan_references, reference_window
from .conflict_tree import PlanStepFailure, plan_step
from .model import AgentState, ControlInput, Scenario, propagate
from .mpc import MpcParams, goal_reference, hold_trajectory, shift_warm_start
from .sqp import SqpOptions

SUCCESS = "success"
COLLISION = "collision"
INFEASIBLE = "infeasible"
DEADLOCK = "deadlock"
TIMEOUT = "timeout"

GOAL_SPEED = 0.05  # max speed at which an agent counts as arrived [m/s]
DEADLOCK_WINDOW = 20  # executed steps
DEADLOCK_PROGRESS = 0.1  # [m]
DEADLOCK_SPEED = 0.1  # [m/s]

PLANNERS = ("cbmpc", "joint", "prioritized", "distributed", "vanilla")


@dataclass
class EpisodeResult:
    """Executed histories and the definitive outcome of one episode."""

    outcome: str
    states: dict[int, np.ndarray]  # (T+1, 4) executed states per agent
    inputs: dict[int, np.ndarray]  # (T, 2) applied inputs per agent
    solve_times: list[dict[int, float]]  # per step, per agent [s]
    constraints_posed: list[int]  # per step
    expansions: list[int]  # per step
    makespan: float  # summed executed path length [m], nan unless success
    detail: str = ""

    @property
    def steps(self) -> int:
        return 0 if not self.states else next(iter(self.states.values())).shape[0] - 1

    @property
    def n_agents(self) -> int:
        return len(self.states)


@dataclass
class Metrics:
    """Aggregate quality and timing numbers over a set of episodes."""

    success_rate: float
    makespan: float
    t_avg: float
    t_max: float
    c_avg: float
    available: bool  # False when no episode succeeded


def check_deadlock(
    windows: Mapping[int, np.ndarray], goals: Mapping[int, np.ndarray], eps_g: float
) -> bool:
    """True if any non-arrived agent has stalled over the trailing window.

    Each window holds 21 states (20 executed steps). An agent stalls when its
    goal-distance reduction is under 0.1 m and its mean speed is under
    0.1 m/s, both strict.
    """
    for i, window in windows.items():
        goal = np.asarray(goals[i])[:2]
        d_end = float(np.linalg.norm(window[-1, :2] - goal))
        if d_end <= eps_g:
            continue
        reduction = float(np.linalg.norm(window[0, :2] - goal)) - d_end
        mean_speed = float(np.mean(np.linalg.norm(window[1:, 2:], axis=1)))
        if reduction < DEADLOCK_PROGRESS and mean_speed < DEADLOCK_SPEED:
            return True
    return False


def _audit_states(scenario: Scenario, positions: Mapping[int, np.ndarray]) -> Optional[str]:
    """Collision message for the current executed positions, or None."""
    ids = sorted(positions)
    sep = scenario.agent_separation()
    for k, i in enumerate(ids):
        for j in ids[k + 1:]:
            d = float(np.linalg.norm(positions[i] - positions[j]))
            if d < sep - 1e-6:
                return f"agents {i} and {j} at distance {d:.4f}"
    for i in ids:
        for m, obs in enumerate(scenario.obstacles):
            d = float(np.linalg.norm(positions[i] - obs.center))
            if d < scenario.obstacle_keepout(obs) - 1e-6:
                return f"agent {i} within keep-out of obstacle {m} (center distance {d:.4f})"
    return None


def _arrived(scenario: Scenario, states: Mapping[int, np.ndarray]) -> bool:
    for a in scenario.agents:
        x = states[a.id]
        if np.linalg.norm(x[:2] - a.goal.position) > scenario.eps_g:
            return False
        if np.linalg.norm(x[2:]) > GOAL_SPEED:
            return False
    return True


def _planner_fn(
    name: str, scenario: Scenario, seed: int
) -> Callable:
    if name == "cbmpc":
        return plan_step
    if name == "joint":
        return plan_step_joint
    if name == "vanilla":
        return plan_step_vanilla
    if name == "distributed":
        return plan_step_distributed
    if name == "prioritized":
        priorities = make_priorities(scenario, seed)

        def step(scn, params, refs, warm, sqp_options=None):
            return plan_step_prioritized(scn, params, priorities, refs, warm, sqp_options)

        return step
    raise ValueError(f"unknown planner {name!r}")


def run_episode(
    scenario: Scenario,
    planner: str,
    params: MpcParams,
    step_limit: int = 2000,
    reference: str = "goal",
    seed: int = 0,
    grid_cell: float = 0.25,
    v_ref: float = 0.5,
    sqp_options: Optional[SqpOptions] = None,
) -> EpisodeResult:
    """Execute one episode to a definitive outcome; never raises on failure."""
    model = params.model()
    N = params.horizon
    goals = {a.id: np.asarray(a.goal.position) for a in scenario.agents}
    plan: Optional[GridPlan] = None
    if reference == "cbs":
        try:
            plan = plan_references(scenario, cell=grid_cell, v_ref=v_ref)
        except GridPlanError as exc:
            return EpisodeResult(
                outcome=INFEASIBLE,
                states={a.id: a.start.as_vector()[None, :] for a in scenario.agents},
                inputs={a.id: np.zeros((0, 2)) for a in scenario.agents},
                solve_times=[],
                constraints_posed=[],
                expansions=[],
                makespan=float("nan"),
                detail=f"reference planning failed: {exc}",
            )
    elif reference not in ("goal", "none"):
        raise ValueError(f"unknown reference mode {reference!r}")

    step_fn = _planner_fn(planner, scenario, seed)
    goal_refs = {a.id: goal_reference(a.goal, N) for a in scenario.agents}
    current = {a.id: a.start.as_vector().copy() for a in scenario.agents}
    history = {a.id: [current[a.id].copy()] for a in scenario.agents}
    applied = {a.id: [] for a in scenario.agents}
    solve_times: list[dict[int, float]] = []
    constraints_posed: list[int] = []
    expansions: list[int] = []
    warm = {a.id: hold_trajectory(model, a.start, N) for a in scenario.agents}

    outcome, detail = TIMEOUT, f"step limit {step_limit} reached"
    for k in range(step_limit):
        if plan is not None:
            refs = {
                i: reference_window(plan, i, elapsed=k * params.dt, dt=params.dt, horizon=N)
                for i in goals
            }
        else:
            refs = goal_refs
        try:
            result = step_fn(scenario, params, refs, warm, sqp_options=sqp_options)
        except PlanStepFailure as exc:
            outcome, detail = INFEASIBLE, str(exc)
            break
        solve_times.append(dict(result.solve_times))
        constraints_posed.append(result.constraint_count)
        expansions.append(result.expansions)
        for i in goals:
            state = AgentState.from_vector(current[i])
            u = ControlInput(acceleration=tuple(result.first_inputs[i]))
            nxt = propagate(model, state, u).as_vector()
            applied[i].append(result.first_inputs[i].copy())
            history[i].append(nxt.copy())
            current[i] = nxt
        collision = _audit_states(scenario, {i: current[i][:2] for i in goals})
        if collision is not None:
            outcome, detail = COLLISION, collision
            break
        if _arrived(scenario, current):
            outcome, detail = SUCCESS, ""
            break
        if k + 1 >= DEADLOCK_WINDOW:
            windows = {
                i: np.asarray(history[i][-(DEADLOCK_WINDOW + 1):]) for i in goals
            }
            if check_deadlock(windows, goals, scenario.eps_g):
                outcome, detail = DEADLOCK, f"stalled at step {k + 1}"
                break
        warm = {i: shift_warm_start(model, result.trajectories[i]) for i in goals}

    states = {i: np.asarray(history[i]) for i in goals}
    inputs = {i: np.asarray(applied[i]).reshape(-1, 2) for i in goals}
    if outcome == SUCCESS:
        makespan = float(
            sum(np.linalg.norm(np.diff(s[:, :2], axis=0), axis=1).sum() for s in states.values())
        )
    else:
        makespan = float("nan")
    return EpisodeResult(
        outcome=outcome,
        states=states,
        inputs=inputs,
        solve_times=solve_times,
        constraints_posed=constraints_posed,
        expansions=expansions,
        makespan=makespan,
        detail=detail,
    )


def compute_metrics(episodes: list[EpisodeResult], mode: str = "per-robot") -> Metrics:
    """Aggregate over episodes; timing and makespan use successful runs only.

    per-robot mode averages solve time and posed constraints per timestep per
    robot; summed mode totals them across robots at each timestep (used when
    comparing against the joint planner's single coupled solve).
    """
    if mode not in ("per-robot", "summed"):
        raise ValueError(f"unknown metrics mode {mode!r}")
    if not episodes:
        raise ValueError("no episodes")
    wins = [e for e in episodes if e.outcome == SUCCESS]
    rate = len(wins) / len(episodes)
    if not wins:
        return Metrics(
            success_rate=rate,
            makespan=float("nan"),
            t_avg=float("nan"),
            t_max=float("nan"),
            c_avg=float("nan"),
            available=False,
        )
    t_samples: list[float] = []
    c_per_episode: list[float] = []
    for e in wins:
        if mode == "per-robot":
            t_samples.extend(t for step in e.solve_times for t in step.values())
            c_per_episode.append(sum(e.constraints_posed) / (len(e.constraints_posed) * e.n_agents))
        else:
            t_samples.extend(sum(step.values()) for step in e.solve_times)
            c_per_episode.append(sum(e.constraints_posed) / len(e.constraints_posed))
    return Metrics(
        success_rate=rate,
        makespan=float(np.mean([e.makespan for e in wins])),
        t_avg=float(np.mean(t_samples)),
        t_max=float(np.max(t_samples)),
        c_avg=float(np.mean(c_per_episode)),
        available=True,
    )


def write_episode_csv(result: EpisodeResult, path: str) -> None:
    """Per-step per-agent trace with solve time and posed-constraint count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "agent", "x", "y", "vx", "vy", "ux", "uy", "solve_time", "constraints_posed"]
        )
        for k in range(result.steps):
            for i in sorted(result.states):
                x = result.states[i][k + 1]
                u = result.inputs[i][k]
                writer.writerow(
                    [
                        k,
                        i,
                        f"{x[0]:.9f}",
                        f"{x[1]:.9f}",
                        f"{x[2]:.9f}",
                        f"{x[3]:.9f}",
                        f"{u[0]:.9f}",
                        f"{u[1]:.9f}",
                        f"{result.solve_times[k].get(i, 0.0):.6f}",
                        result.constraints_posed[k],
                    ]
                )


def write_summary_json(result: EpisodeResult, path: str, extra: Optional[dict] = None) -> None:
    metrics = compute_metrics([result]) if result.steps else None
    payload = {
        "outcome": result.outcome,
        "steps": result.steps,
        "detail": result.detail,
        "makespan": None if math.isnan(result.makespan) else result.makespan,
    }
    if metrics is not None:
        payload["metrics"] = {
            "success_rate": metrics.success_rate,
            "makespan": None if math.isnan(metrics.makespan) else metrics.makespan,
            "t_avg": None if math.isnan(metrics.t_avg) else metrics.t_avg,
            "t_max": None if math.isnan(metrics.t_max) else metrics.t_max,
            "c_avg": None if math.isnan(metrics.c_avg) else metrics.c_avg,
        }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
