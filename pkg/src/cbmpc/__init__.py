"""Conflict-based MPC for multi-robot motion planning, with baselines."""

from .model import (
    Agent,
    AgentState,
    Bounds,
    ControlInput,
    DynamicsModel,
    Obstacle,
    Scenario,
    Trajectory,
    load_scenario,
    make_double_integrator,
    propagate,
    rollout,
    save_scenario,
    validate_scenario,
)
from .qp import QpInfeasibleError, QpMaxIterationsError, QpProblem, QpResult, solve_qp
from .sqp import (
    AvoidanceConstraint,
    PairwiseConstraint,
    SolveStats,
    SqpInfeasibleError,
    SqpOptions,
    TrajOptProblem,
    solve_sqp,
)
from .mpc import (
    ConstraintRecord,
    MpcParams,
    goal_reference,
    hold_trajectory,
    shift_warm_start,
    solve_mpc,
    trajectory_length,
)
from .conflict_tree import (
    Conflict,
    CTNode,
    PlanStepFailure,
    PlanStepResult,
    detect_conflicts,
    plan_step,
    sic,
)
from .baselines import (
    PriorityAssignment,
    joint_constraint_count,
    make_priorities,
    plan_step_distributed,
    plan_step_joint,
    plan_step_prioritized,
    plan_step_vanilla,
)
from .cbs_grid import Grid, GridPlan, GridPlanError, build_grid, cbs, plan_references, reference_window
from .environments import make_cluttered, make_environment, make_narrow, make_open
from .harness import (
    EpisodeResult,
    Metrics,
    check_deadlock,
    compute_metrics,
    run_episode,
    write_episode_csv,
    write_summary_json,
)

__all__ = [name for name in dir() if not name.startswith("_")]
