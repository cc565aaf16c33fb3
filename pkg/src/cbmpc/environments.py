"""Benchmark scenario generators: narrow corridor, open exchange, cluttered."""

from __future__ import annotations

import numpy as np

from .model import Agent, AgentState, Bounds, Obstacle, Scenario, validate_scenario

SQRT2 = float(np.sqrt(2.0))


def _agent(aid, start_xy, goal_xy):
    return Agent(
        id=aid,
        start=AgentState(position=tuple(start_xy), velocity=(0.0, 0.0)),
        goal=AgentState(position=tuple(goal_xy), velocity=(0.0, 0.0)),
    )


def make_narrow() -> Scenario:
    """Two robots swap ends of a diagonal corridor wide enough for one.

    The corridor runs along the (1, 1) diagonal, 3 m long, with walls built
    from 0.4 m discs every 0.3 m at 0.45 m lateral offset. One robot must
    yield outside the entrance while the other transits.
    """
    axis = np.array([1.0, 1.0]) / SQRT2
    normal = np.array([1.0, -1.0]) / SQRT2
    obstacles = []
    for s in np.arange(-1.5, 1.5 + 1e-9, 0.3):
        for side in (0.45, -0.45):
            center = s * axis + side * normal
            obstacles.append(Obstacle(center=tuple(center), diameter=0.4))
    a0 = _agent(0, (-3.0, -3.0), (3.0, 3.0))
    a1 = _agent(1, (3.0, 3.0), (-3.0, -3.0))
    scn = Scenario(
        agents=(a0, a1),
        obstacles=tuple(obstacles),
        bounds=Bounds(-4.0, 4.0, -4.0, 4.0),
    )
    # wall discs deliberately overlap, so skip the obstacle-gap condition
    report = validate_scenario(scn, check_obstacle_gaps=False)
    assert report.ok, report.violations
    return scn


def make_open(n_robots: int = 4) -> Scenario:
    """Robots on a circle swap with their antipodes across open space."""
    if not 2 <= n_robots <= 8:
        raise ValueError("open scenario supports 2..8 robots")
    radius = 2.0
    agents = []
    for i in range(n_robots):
        theta = 2.0 * np.pi * i / n_robots
        p = radius * np.array([np.cos(theta), np.sin(theta)])
        agents.append(_agent(i, p, -p))
    scn = Scenario(agents=tuple(agents), obstacles=(), bounds=Bounds(-3.0, 3.0, -3.0, 3.0))
    report = validate_scenario(scn)
    assert report.ok, report.violations
    return scn


def make_cluttered(seed: int, n_robots: int = 3, n_obstacles: int = 6) -> Scenario:
    """Random discs with random start/goal assignments, fully validated.

    Obstacles keep enough surface clearance for two robots abreast; starts
    and goals stay 3 robot diameters apart so episodes begin uncontended.
    """
    rng = np.random.default_rng(seed)
    bounds = Bounds(-2.5, 2.5, -2.5, 2.5)
    margin = 0.3
    spread = 0.9  # 3 * footprint diameter

    def sample_points(n, keep_distance, obstacles, clearance):
        pts: list[np.ndarray] = []
        for _ in range(10_000):
            p = rng.uniform(
                [bounds.xmin + margin, bounds.ymin + margin],
                [bounds.xmax - margin, bounds.ymax - margin],
            )
            if any(np.linalg.norm(p - q) < keep_distance for q in pts):
                continue
            if any(np.linalg.norm(p - o.center) < o.radius + clearance for o in obstacles):
                continue
            pts.append(p)
            if len(pts) == n:
                return pts
        return None

    for _ in range(10_000):
        obstacles: list[Obstacle] = []
        ok = True
        for _ in range(n_obstacles):
            diameter = rng.uniform(0.4, 0.8)
            center = rng.uniform(
                [bounds.xmin + 0.5, bounds.ymin + 0.5],
                [bounds.xmax - 0.5, bounds.ymax - 0.5],
            )
            cand = Obstacle(center=tuple(center), diameter=diameter)
            # gap for two robots side by side between obstacle surfaces
            if any(
                np.linalg.norm(cand.center - o.center) - cand.radius - o.radius < 0.7
                for o in obstacles
            ):
                ok = False
                break
            obstacles.append(cand)
        if not ok:
            continue
        starts = sample_points(n_robots, spread, obstacles, clearance=0.25)
        goals = sample_points(n_robots, spread, obstacles, clearance=0.25)
        if starts is None or goals is None:
            continue
        agents = tuple(_agent(i, starts[i], goals[i]) for i in range(n_robots))
        scn = Scenario(agents=agents, obstacles=tuple(obstacles), bounds=bounds)
        if validate_scenario(scn).ok:
            return scn
    raise RuntimeError(f"could not sample a valid cluttered scenario for seed {seed}")


def make_environment(name: str, seed: int = 0, n_robots: int = 0) -> Scenario:
    """Scenario factory keyed by environment name."""
    if name == "narrow":
        return make_narrow()
    if name == "open":
        return make_open(n_robots or 4)
    if name == "cluttered":
        return make_cluttered(seed, n_robots or 3)
    raise ValueError(f"unknown environment {name!r}")
