"""Core domain types: agents, dynamics, obstacles, scenarios, trajectories.

All quantities are planar (n=2) and metric: positions in meters, velocities in
m/s, accelerations in m/s^2. The state vector ordering is [x, y, vx, vy].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Distance comparisons (conflict detection, audits) share this slack so that a
# trajectory accepted by the solver is never re-flagged downstream.
CONTACT_TOL = 1e-6


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray  # (2,)
    velocity: np.ndarray  # (2,)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("agent state must be finite")

    @staticmethod
    def from_vector(z: np.ndarray) -> "AgentState":
        z = np.asarray(z, dtype=float)
        return AgentState(position=z[:2], velocity=z[2:4])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


@dataclass(frozen=True)
class ControlInput:
    acceleration: np.ndarray  # (2,)

    def __post_init__(self):
        object.__setattr__(self, "acceleration", np.asarray(self.acceleration, dtype=float))
        if not np.all(np.isfinite(self.acceleration)):
            raise ValueError("control input must be finite")

    def as_vector(self) -> np.ndarray:
        return np.asarray(self.acceleration)


@dataclass(frozen=True)
class DynamicsModel:
    """Discrete-time double integrator x+ = A x + B u."""

    dt: float
    A: np.ndarray  # (4, 4)
    B: np.ndarray  # (4, 2)


def make_double_integrator(dt: float) -> DynamicsModel:
    """Build the planar double-integrator model for step size dt."""
    if not (np.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive, got {dt}")
    A = np.eye(4)
    A[0, 2] = dt
    A[1, 3] = dt
    B = np.zeros((4, 2))
    B[0, 0] = 0.5 * dt * dt
    B[1, 1] = 0.5 * dt * dt
    B[2, 0] = dt
    B[3, 1] = dt
    return DynamicsModel(dt=dt, A=A, B=B)


def propagate(model: DynamicsModel, x: AgentState, u: ControlInput) -> AgentState:
    """One dynamics step: A x + B u."""
    z = model.A @ x.as_vector() + model.B @ u.as_vector()
    return AgentState.from_vector(z)


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray  # (2,)
    diameter: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.diameter > 0:
            raise ValueError("obstacle diameter must be positive")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter


@dataclass(frozen=True)
class Agent:
    id: int
    start: AgentState
    goal: AgentState


@dataclass(frozen=True)
class Bounds:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, p: np.ndarray, margin: float = 0.0) -> bool:
        return bool(
            self.xmin + margin <= p[0] <= self.xmax - margin
            and self.ymin + margin <= p[1] <= self.ymax - margin
        )


@dataclass(frozen=True)
class Scenario:
    agents: tuple[Agent, ...]
    obstacles: tuple[Obstacle, ...]
    bounds: Bounds
    footprint_diameter: float = 0.3
    eps_g: float = 0.2
    eps_r: float = 0.05
    eps_o: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")
        if not self.footprint_diameter > 0:
            raise ValueError("footprint diameter must be positive")
        if min(self.eps_g, self.eps_r, self.eps_o) < 0:
            raise ValueError("tolerances must be non-negative")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def agent_separation(self) -> float:
        """Required center-to-center distance between two robots."""
        return self.footprint_diameter + self.eps_r

    def obstacle_clearance(self) -> float:
        """Required clearance from a robot center to an obstacle surface."""
        return 0.5 * self.footprint_diameter + self.eps_o

    def obstacle_keepout(self, obs: Obstacle) -> float:
        """Required center-to-center distance from a robot to an obstacle."""
        return obs.radius + self.obstacle_clearance()


@dataclass(frozen=True)
class Trajectory:
    """A horizon-length plan: states (N+1, 4) and inputs (N, 2)."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))
        if self.states.ndim != 2 or self.states.shape[1] != 4:
            raise ValueError("states must be (N+1, 4)")
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 2:
            raise ValueError("inputs must be (N, 2)")
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError("states must be one longer than inputs")

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def dynamics_residual(self, model: DynamicsModel) -> float:
        pred = self.states[:-1] @ model.A.T + self.inputs @ model.B.T
        return float(np.max(np.abs(pred - self.states[1:]))) if self.horizon else 0.0

    def is_dynamically_consistent(self, model: DynamicsModel, tol: float = 1e-9) -> bool:
        return self.dynamics_residual(model) <= tol


def rollout(model: DynamicsModel, x0: AgentState, inputs: np.ndarray) -> Trajectory:
    """Build a trajectory by repeated propagation of x0 under the input sequence."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1, 2)
    states = np.empty((inputs.shape[0] + 1, 4))
    states[0] = x0.as_vector()
    for k in range(inputs.shape[0]):
        states[k + 1] = model.A @ states[k] + model.B @ inputs[k]
    return Trajectory(states=states, inputs=inputs)


@dataclass
class ValidityReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_scenario(scenario: Scenario, check_obstacle_gaps: bool = True) -> ValidityReport:
    """Check scenario feasibility conditions; returns a report, never raises.

    1. Start/goal discs are pairwise non-intersecting (starts vs starts, goals
       vs goals) at the robot separation distance.
    2. Starts and goals clear every obstacle inflated by D/2 + eps_o.
    3. Every obstacle pair leaves surface clearance for two inflated robots
       side by side: >= 2 * (D + eps_r).
    """
    report = ValidityReport()
    sep = scenario.agent_separation()
    agents = scenario.agents
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            a, b = agents[i], agents[j]
            ds = np.linalg.norm(a.start.position - b.start.position)
            dg = np.linalg.norm(a.goal.position - b.goal.position)
            if ds < sep:
                report.violations.append(
                    f"condition 1: starts of agents {a.id} and {b.id} are {ds:.3f} m apart (< {sep:.3f})"
                )
            if dg < sep:
                report.violations.append(
                    f"condition 1: goals of agents {a.id} and {b.id} are {dg:.3f} m apart (< {sep:.3f})"
                )
    for a in agents:
        for kind, p in (("start", a.start.position), ("goal", a.goal.position)):
            if not scenario.bounds.contains(p):
                report.violations.append(f"condition 1: {kind} of agent {a.id} is out of bounds")
            for m, obs in enumerate(scenario.obstacles):
                keepout = scenario.obstacle_keepout(obs)
                d = np.linalg.norm(p - obs.center)
                if d < keepout:
                    report.violations.append(
                        f"condition 2: {kind} of agent {a.id} is {d:.3f} m from obstacle {m} (< {keepout:.3f})"
                    )
    if check_obstacle_gaps:
        gap_needed = 2.0 * (scenario.footprint_diameter + scenario.eps_r)
        obs = scenario.obstacles
        for i in range(len(obs)):
            for j in range(i + 1, len(obs)):
                surface_gap = (
                    np.linalg.norm(obs[i].center - obs[j].center) - obs[i].radius - obs[j].radius
                )
                if surface_gap < gap_needed:
                    report.violations.append(
                        f"condition 3: obstacles {i} and {j} leave a {surface_gap:.3f} m gap (< {gap_needed:.3f})"
                    )
    return report


# ---------------------------------------------------------------------------
# Scenario file format (JSON). See README for the schema.
# ---------------------------------------------------------------------------

def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "agents": [
            {
                "id": a.id,
                "start": {"position": a.start.position.tolist(), "velocity": a.start.velocity.tolist()},
                "goal": {"position": a.goal.position.tolist(), "velocity": a.goal.velocity.tolist()},
            }
            for a in scenario.agents
        ],
        "obstacles": [
            {"center": o.center.tolist(), "diameter": o.diameter} for o in scenario.obstacles
        ],
        "bounds": {
            "xmin": scenario.bounds.xmin,
            "xmax": scenario.bounds.xmax,
            "ymin": scenario.bounds.ymin,
            "ymax": scenario.bounds.ymax,
        },
        "footprint_diameter": scenario.footprint_diameter,
        "eps_g": scenario.eps_g,
        "eps_r": scenario.eps_r,
        "eps_o": scenario.eps_o,
    }


def scenario_from_dict(data: dict) -> Scenario:
    def state(d):
        return AgentState(position=np.array(d["position"], float), velocity=np.array(d["velocity"], float))

    agents = tuple(
        Agent(id=int(a["id"]), start=state(a["start"]), goal=state(a["goal"])) for a in data["agents"]
    )
    obstacles = tuple(
        Obstacle(center=np.array(o["center"], float), diameter=float(o["diameter"]))
        for o in data.get("obstacles", [])
    )
    b = data["bounds"]
    return Scenario(
        agents=agents,
        obstacles=obstacles,
        bounds=Bounds(float(b["xmin"]), float(b["xmax"]), float(b["ymin"]), float(b["ymax"])),
        footprint_diameter=float(data.get("footprint_diameter", 0.3)),
        eps_g=float(data.get("eps_g", 0.2)),
        eps_r=float(data.get("eps_r", 0.05)),
        eps_o=float(data.get("eps_o", 0.05)),
    )


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as f:
        json.dump(scenario_to_dict(scenario), f, indent=2)


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return scenario_from_dict(json.load(f))
