"""Grid-based CBS planner used to generate tracking references.

Obstacles are rasterized onto a 4-connected grid; a conflict-based search
over time-expanded A* paths yields per-agent discrete plans, which are then
resampled into continuous state references at the MPC rate.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import Bounds, Scenario

Cell = tuple[int, int]

MOVES: tuple[Cell, ...] = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


class GridPlanError(Exception):
    """No collision-free discrete plan was found."""


@dataclass
class Grid:
    """Axis-aligned occupancy grid over the scenario bounds."""

    bounds: Bounds
    cell: float
    occupancy: np.ndarray  # (nx, ny) bool, True = blocked

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    def cell_of(self, point: np.ndarray) -> Cell:
        ix = int(np.clip((point[0] - self.bounds.xmin) // self.cell, 0, self.shape[0] - 1))
        iy = int(np.clip((point[1] - self.bounds.ymin) // self.cell, 0, self.shape[1] - 1))
        return (ix, iy)

    def center_of(self, cell: Cell) -> np.ndarray:
        return np.array(
            [
                self.bounds.xmin + (cell[0] + 0.5) * self.cell,
                self.bounds.ymin + (cell[1] + 0.5) * self.cell,
            ]
        )

    def passable(self, cell: Cell) -> bool:
        ix, iy = cell
        if not (0 <= ix < self.shape[0] and 0 <= iy < self.shape[1]):
            return False
        return not self.occupancy[ix, iy]


def build_grid(scenario: Scenario, cell: float = 0.25) -> Grid:
    """Rasterize obstacles, inflating by the robot keep-out distance."""
    b = scenario.bounds
    nx = max(1, int(round((b.xmax - b.xmin) / cell)))
    ny = max(1, int(round((b.ymax - b.ymin) / cell)))
    occ = np.zeros((nx, ny), dtype=bool)
    if scenario.obstacles:
        cx = b.xmin + (np.arange(nx) + 0.5) * cell
        cy = b.ymin + (np.arange(ny) + 0.5) * cell
        centers = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1)
        for obs in scenario.obstacles:
            keepout = scenario.obstacle_keepout(obs)
            d = np.linalg.norm(centers - np.asarray(obs.center), axis=-1)
            occ |= d < keepout
    return Grid(bounds=b, cell=cell, occupancy=occ)


@dataclass(frozen=True)
class VertexConstraint:
    cell: Cell
    time: int


@dataclass(frozen=True)
class EdgeConstraint:
    frm: Cell
    to: Cell
    time: int  # time of arrival at `to`


def astar(
    grid: Grid,
    start: Cell,
    goal: Cell,
    vertex_constraints: frozenset[VertexConstraint] = frozenset(),
    edge_constraints: frozenset[EdgeConstraint] = frozenset(),
    horizon_factor: int = 4,
) -> list[Cell]:
    """Time-expanded A* with wait moves; returns the cell sequence per step.

    The path cost is the last step at which the agent still has to move or
    dodge; waiting at the goal afterwards is free. The search gives up once
    paths exceed `horizon_factor` times a loose lower bound.
    """
    if not grid.passable(start) or not grid.passable(goal):
        raise GridPlanError(f"start {start} or goal {goal} blocked")
    latest_constraint = max(
        [c.time for c in vertex_constraints] + [c.time for c in edge_constraints],
        default=0,
    )
    lower = abs(start[0] - goal[0]) + abs(start[1] - goal[1])
    cap = max(horizon_factor * max(lower, 1), latest_constraint + 1, grid.shape[0] * grid.shape[1])

    def heuristic(c: Cell) -> int:
        return abs(c[0] - goal[0]) + abs(c[1] - goal[1])

    start_node = (start, 0)
    open_list: list[tuple[int, int, int, tuple[Cell, int]]] = []
    heapq.heappush(open_list, (heuristic(start), 0, 0, start_node))
    came: dict[tuple[Cell, int], tuple[Cell, int]] = {}
    closed: set[tuple[Cell, int]] = set()
    counter = 0
    while open_list:
        _, cost, _, node = heapq.heappop(open_list)
        if node in closed:
            continue
        closed.add(node)
        cell, t = node
        if cell == goal and t >= latest_constraint:
            path = [cell]
            while node in came:
                node = came[node]
                path.append(node[0])
            return path[::-1]
        if t >= cap:
            continue
        for dx, dy in MOVES:
            nxt = (cell[0] + dx, cell[1] + dy)
            if not grid.passable(nxt):
                continue
            if VertexConstraint(nxt, t + 1) in vertex_constraints:
                continue
            if EdgeConstraint(cell, nxt, t + 1) in edge_constraints:
                continue
            child = (nxt, t + 1)
            if child in closed:
                continue
            counter += 1
            came[child] = node
            heapq.heappush(open_list, (t + 1 + heuristic(nxt), t + 1, counter, child))
    raise GridPlanError(f"no path from {start} to {goal}")


def _position_at(path: Sequence[Cell], t: int) -> Cell:
    return path[t] if t < len(path) else path[-1]


def _first_conflict(paths: dict[int, list[Cell]]):
    """(kind, agent_i, agent_j, data, time) for the earliest conflict, or None."""
    ids = sorted(paths)
    makespan = max(len(p) for p in paths.values())
    for t in range(makespan):
        for k, i in enumerate(ids):
            for j in ids[k + 1:]:
                a, b = _position_at(paths[i], t), _position_at(paths[j], t)
                if a == b:
                    return ("vertex", i, j, a, t)
                if t > 0:
                    pa, pb = _position_at(paths[i], t - 1), _position_at(paths[j], t - 1)
                    if a == pb and b == pa:
                        return ("edge", i, j, (pa, a), t)
    return None


@dataclass
class _CbsNode:
    vertex: dict[int, frozenset[VertexConstraint]]
    edge: dict[int, frozenset[EdgeConstraint]]
    paths: dict[int, list[Cell]]
    cost: int
    index: int


def path_cost(path: Sequence[Cell]) -> int:
    """Steps until the agent finally rests at its terminal cell."""
    last = len(path) - 1
    while last > 0 and path[last - 1] == path[-1]:
        last -= 1
    return last


def cbs(
    grid: Grid,
    starts: dict[int, Cell],
    goals: dict[int, Cell],
    expansion_cap: int = 10_000,
) -> dict[int, list[Cell]]:
    """Conflict-based search; returns one discrete path per agent id."""
    ids = sorted(starts)
    vertex = {i: frozenset() for i in ids}
    edge = {i: frozenset() for i in ids}
    paths = {i: astar(grid, starts[i], goals[i]) for i in ids}
    counter = 0
    root = _CbsNode(vertex, edge, paths, sum(path_cost(p) for p in paths.values()), counter)
    open_list: list[tuple[int, int, _CbsNode]] = [(root.cost, root.index, root)]
    expansions = 0
    while open_list:
        _, _, node = heapq.heappop(open_list)
        conflict = _first_conflict(node.paths)
        if conflict is None:
            return node.paths
        if expansions >= expansion_cap:
            raise GridPlanError(f"CBS expansion cap {expansion_cap} reached")
        expansions += 1
        kind, i, j, data, t = conflict
        for agent in (i, j):
            new_vertex = dict(node.vertex)
            new_edge = dict(node.edge)
            if kind == "vertex":
                new_vertex[agent] = node.vertex[agent] | {VertexConstraint(data, t)}
            else:
                frm, to = data if agent == i else (data[1], data[0])
                new_edge[agent] = node.edge[agent] | {EdgeConstraint(frm, to, t)}
            try:
                new_path = astar(
                    grid, starts[agent], goals[agent], new_vertex[agent], new_edge[agent]
                )
            except GridPlanError:
                continue
            new_paths = dict(node.paths)
            new_paths[agent] = new_path
            counter += 1
            child = _CbsNode(
                new_vertex,
                new_edge,
                new_paths,
                sum(path_cost(p) for p in new_paths.values()),
                counter,
            )
            heapq.heappush(open_list, (child.cost, child.index, child))
    raise GridPlanError("CBS open list exhausted")


@dataclass
class GridPlan:
    """Discrete multi-agent plan with the geometry needed for resampling."""

    grid: Grid
    paths: dict[int, list[Cell]]
    v_ref: float = 0.5

    @property
    def step_duration(self) -> float:
        return self.grid.cell / self.v_ref

    def waypoints(self, agent_id: int) -> np.ndarray:
        return np.stack([self.grid.center_of(c) for c in self.paths[agent_id]])

    def position_at(self, agent_id: int, t: float) -> np.ndarray:
        """Piecewise-linear position along the plan, clamped at the end."""
        pts = self.waypoints(agent_id)
        if len(pts) == 1:
            return pts[0].copy()
        s = t / self.step_duration
        k = int(np.floor(s))
        if k >= len(pts) - 1:
            return pts[-1].copy()
        frac = s - k
        return (1 - frac) * pts[k] + frac * pts[k + 1]

    def to_dict(self) -> dict:
        return {
            "cell": self.grid.cell,
            "v_ref": self.v_ref,
            "paths": {str(i): [list(c) for c in p] for i, p in self.paths.items()},
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def plan_references(scenario: Scenario, cell: float = 0.25, v_ref: float = 0.5) -> GridPlan:
    """Run CBS over the rasterized scenario; start/goal snap to cell centers."""
    grid = build_grid(scenario, cell)
    starts = {a.id: grid.cell_of(np.asarray(a.start.position)) for a in scenario.agents}
    goals = {a.id: grid.cell_of(np.asarray(a.goal.position)) for a in scenario.agents}
    for a in scenario.agents:
        if not grid.passable(starts[a.id]):
            raise GridPlanError(f"agent {a.id} start cell blocked")
        if not grid.passable(goals[a.id]):
            raise GridPlanError(f"agent {a.id} goal cell blocked")
    paths = cbs(grid, starts, goals)
    return GridPlan(grid=grid, paths=paths, v_ref=v_ref)


def reference_window(
    plan: GridPlan, agent_id: int, elapsed: float, dt: float, horizon: int
) -> np.ndarray:
    """Sample an (N+1, 4) state reference from the plan at the MPC rate.

    Velocities come from forward differences of the sampled positions; the
    reference holds the final waypoint (zero velocity) once the plan ends.
    """
    times = elapsed + dt * np.arange(horizon + 2)
    pts = np.stack([plan.position_at(agent_id, t) for t in times])
    out = np.zeros((horizon + 1, 4))
    out[:, :2] = pts[:-1]
    out[:, 2:] = (pts[1:] - pts[:-1]) / dt
    return out
