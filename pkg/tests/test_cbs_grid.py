"""Tests for the grid planner: rasterization, A*, CBS, and reference sampling."""

import numpy as np
import pytest
from oracles import joint_astar_oracle

from cbmpc.cbs_grid import (
    EdgeConstraint,
    Grid,
    GridPlan,
    GridPlanError,
    VertexConstraint,
    astar,
    build_grid,
    cbs,
    path_cost,
    plan_references,
    reference_window,
)
from cbmpc.model import Agent, AgentState, Bounds, Obstacle, Scenario


def _empty_grid(nx, ny, cell=0.25):
    return Grid(
        bounds=Bounds(0.0, nx * cell, 0.0, ny * cell),
        cell=cell,
        occupancy=np.zeros((nx, ny), dtype=bool),
    )


def _audit(paths):
    """Assert no vertex or edge conflicts among discrete paths."""
    ids = sorted(paths)
    T = max(len(p) for p in paths.values())
    at = lambda p, t: p[t] if t < len(p) else p[-1]
    for t in range(T):
        for k, i in enumerate(ids):
            for j in ids[k + 1:]:
                assert at(paths[i], t) != at(paths[j], t)
                if t > 0:
                    assert not (
                        at(paths[i], t) == at(paths[j], t - 1)
                        and at(paths[j], t) == at(paths[i], t - 1)
                    )


class TestBuildGrid:
    def test_obstacle_blocks_inflated_cells(self):
        scn = Scenario(
            agents=(),
            obstacles=(Obstacle(center=(0.0, 0.0), diameter=0.4),),
            bounds=Bounds(-1.0, 1.0, -1.0, 1.0),
        )
        grid = build_grid(scn, cell=0.25)
        assert grid.shape == (8, 8)
        keepout = scn.obstacle_keepout(scn.obstacles[0])  # 0.2 + 0.15 + 0.05
        for ix in range(8):
            for iy in range(8):
                d = np.linalg.norm(grid.center_of((ix, iy)))
                assert grid.occupancy[ix, iy] == (d < keepout)

    def test_cell_roundtrip(self):
        grid = _empty_grid(4, 4)
        for cell in [(0, 0), (3, 3), (1, 2)]:
            assert grid.cell_of(grid.center_of(cell)) == cell


class TestAstar:
    def test_straight_line(self):
        grid = _empty_grid(5, 5)
        path = astar(grid, (0, 0), (4, 0))
        assert path[0] == (0, 0) and path[-1] == (4, 0)
        assert path_cost(path) == 4

    def test_detour_around_block(self):
        grid = _empty_grid(5, 1)
        grid.occupancy[2, 0] = True
        with pytest.raises(GridPlanError):
            astar(grid, (0, 0), (4, 0))

    def test_vertex_constraint_forces_wait(self):
        grid = _empty_grid(5, 1)
        blocked = frozenset({VertexConstraint((1, 0), 1)})
        path = astar(grid, (0, 0), (4, 0), vertex_constraints=blocked)
        assert (path[1], 1) != ((1, 0), 1)
        assert path_cost(path) == 5

    def test_edge_constraint_respected(self):
        grid = _empty_grid(5, 2)
        blocked = frozenset({EdgeConstraint((0, 0), (1, 0), 1)})
        path = astar(grid, (0, 0), (4, 0), edge_constraints=blocked)
        assert not (path[0] == (0, 0) and path[1] == (1, 0))
        assert path[-1] == (4, 0)


class TestCbs:
    def test_crossing_agents(self):
        grid = _empty_grid(5, 5)
        paths = cbs(grid, {0: (0, 2), 1: (2, 0)}, {0: (4, 2), 1: (2, 4)})
        _audit(paths)
        assert paths[0][-1] == (4, 2) and paths[1][-1] == (2, 4)

    def test_corridor_swap_needs_sidestep(self):
        grid = _empty_grid(5, 2)
        grid.occupancy[:, 1] = True
        grid.occupancy[2, 1] = False  # single passing bay
        paths = cbs(grid, {0: (0, 0), 1: (4, 0)}, {0: (4, 0), 1: (0, 0)})
        _audit(paths)

    def test_matches_joint_astar_oracle_on_random_grids(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 15:
            occ = np.zeros((4, 4), dtype=bool)
            n_blocked = rng.integers(0, 4)
            idx = rng.choice(16, size=n_blocked, replace=False)
            occ[np.unravel_index(idx, (4, 4))] = True
            free = [tuple(c) for c in np.argwhere(~occ)]
            if len(free) < 4:
                continue
            pick = rng.choice(len(free), size=4, replace=False)
            starts = {0: free[pick[0]], 1: free[pick[1]]}
            goals = {0: free[pick[2]], 1: free[pick[3]]}
            expected = joint_astar_oracle(occ, [starts[0], starts[1]], [goals[0], goals[1]])
            grid = Grid(bounds=Bounds(0, 1, 0, 1), cell=0.25, occupancy=occ)
            try:
                paths = cbs(grid, starts, goals)
                got = sum(path_cost(p) for p in paths.values())
            except GridPlanError:
                got = None
            if expected is None:
                assert got is None
            else:
                assert got == expected
                _audit(paths)
            checked += 1


class TestReferences:
    def _scenario(self):
        agents = (
            Agent(
                id=0,
                start=AgentState(position=(-0.875, 0.125), velocity=(0, 0)),
                goal=AgentState(position=(0.875, 0.125), velocity=(0, 0)),
            ),
        )
        return Scenario(agents=agents, obstacles=(), bounds=Bounds(-1, 1, -1, 1))

    def test_plan_and_window_shapes(self):
        scn = self._scenario()
        plan = plan_references(scn, cell=0.25, v_ref=0.5)
        ref = reference_window(plan, 0, elapsed=0.0, dt=0.05, horizon=20)
        assert ref.shape == (21, 4)
        np.testing.assert_allclose(ref[0, :2], [-0.875, 0.125], atol=1e-9)
        speeds = np.linalg.norm(ref[:, 2:], axis=1)
        assert speeds.max() <= 0.5 + 1e-9

    def test_window_clamps_at_goal(self):
        scn = self._scenario()
        plan = plan_references(scn, cell=0.25, v_ref=0.5)
        ref = reference_window(plan, 0, elapsed=100.0, dt=0.05, horizon=10)
        np.testing.assert_allclose(ref[:, :2], np.tile([0.875, 0.125], (11, 1)), atol=1e-9)
        np.testing.assert_allclose(ref[:, 2:], 0.0, atol=1e-12)

    def test_interpolation_midpoint(self):
        grid = _empty_grid(4, 1)
        plan = GridPlan(grid=grid, paths={0: [(0, 0), (1, 0)]}, v_ref=0.5)
        # half a step duration into the move: midway between cell centers
        mid = plan.position_at(0, 0.5 * plan.step_duration)
        np.testing.assert_allclose(mid, 0.5 * (grid.center_of((0, 0)) + grid.center_of((1, 0))))

    def test_plan_roundtrip_to_json(self, tmp_path):
        scn = self._scenario()
        plan = plan_references(scn)
        out = tmp_path / "plan.json"
        plan.save(str(out))
        import json

        data = json.loads(out.read_text())
        assert data["cell"] == 0.25
        assert data["paths"]["0"][0] == [0, 4]
