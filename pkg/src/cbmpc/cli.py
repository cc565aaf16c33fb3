"""Command-line front end: single episodes, randomized batches, CSV reports."""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .environments import make_environment
from .harness import PLANNERS, SUCCESS, compute_metrics, run_episode, write_episode_csv, write_summary_json
from .model import Scenario, load_scenario
from .mpc import MpcParams

EXIT_OK = 0
EXIT_PLANNER_FAILURE = 1
EXIT_CONFIG_ERROR = 2

REFERENCES = ("goal", "none", "cbs")

AGGREGATE_COLUMNS = (
    "planner,env,robots,trial,seed,horizon,outcome,steps,makespan,c_avg,t_avg,t_max"
)


class ConfigError(Exception):
    """The run configuration does not validate."""


@dataclass
class RunConfig:
    env: str = "cluttered"
    scenario_file: Optional[str] = None
    planners: tuple[str, ...] = ("cbmpc",)
    horizon: int = 20
    robots: tuple[int, ...] = (0,)  # 0 = environment default
    trials: int = 1
    seed: int = 0
    reference: str = "goal"
    out: str = "runs"
    workers: int = 1
    params: dict = field(default_factory=dict)  # MpcParams overrides

    def validate(self) -> None:
        for p in self.planners:
            if p not in PLANNERS:
                raise ConfigError(f"unknown planner {p!r}")
        if not self.planners:
            raise ConfigError("at least one planner required")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.reference not in REFERENCES:
            raise ConfigError(f"unknown reference mode {self.reference!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.env not in ("narrow", "open", "cluttered") and self.scenario_file is None:
            raise ConfigError(f"unknown environment {self.env!r}")
        allowed = {f.name for f in dataclasses.fields(MpcParams)}
        bad = set(self.params) - allowed
        if bad:
            raise ConfigError(f"unknown MpcParams overrides: {sorted(bad)}")

    def mpc_params(self) -> MpcParams:
        return MpcParams(horizon=self.horizon, **self.params)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["planners"] = list(self.planners)
        d["robots"] = list(self.robots)
        return d

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        cfg = RunConfig()
        allowed = {f.name for f in dataclasses.fields(RunConfig)}
        bad = set(data) - allowed
        if bad:
            raise ConfigError(f"unknown config fields: {sorted(bad)}")
        for key, value in data.items():
            if key in ("planners", "robots"):
                value = tuple(value)
            setattr(cfg, key, value)
        return cfg


def _split_csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbmpc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "batch"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override its fields")
        p.add_argument("--env", choices=("narrow", "open", "cluttered"))
        p.add_argument("--scenario-file", dest="scenario_file")
        p.add_argument("--planner", help="planner name, or comma-separated list for batch")
        p.add_argument("--horizon", type=int)
        p.add_argument("--robots", help="robot count, or comma-separated list for batch")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--reference", choices=REFERENCES)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
    return parser


def parse_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    cfg = RunConfig.from_dict(data)
    if args.env is not None:
        cfg.env = args.env
    if args.scenario_file is not None:
        cfg.scenario_file = args.scenario_file
    if args.planner is not None:
        cfg.planners = tuple(_split_csv_list(args.planner))
    if args.horizon is not None:
        cfg.horizon = args.horizon
    if args.robots is not None:
        try:
            cfg.robots = tuple(int(r) for r in _split_csv_list(args.robots))
        except ValueError:
            raise ConfigError(f"invalid robot counts {args.robots!r}") from None
    if args.trials is not None:
        cfg.trials = args.trials
    if args.seed is not None:
        cfg.seed = args.seed
    if args.reference is not None:
        cfg.reference = args.reference
    if args.out is not None:
        cfg.out = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def _scenario_for(cfg: RunConfig, seed: int, robots: int) -> Scenario:
    if cfg.scenario_file is not None:
        try:
            return load_scenario(cfg.scenario_file)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load scenario file: {exc}") from None
    return make_environment(cfg.env, seed=seed, n_robots=robots)


def _artifact_stem(cfg: RunConfig, planner: str, seed: int, robots: int) -> str:
    env = cfg.env if cfg.scenario_file is None else "file"
    return f"{env}_{planner}_r{robots}_s{seed}_h{cfg.horizon}"


def _run_one(cfg: RunConfig, planner: str, seed: int, robots: int) -> dict:
    """One episode plus its artifacts; returns an aggregate-CSV row dict."""
    scenario = _scenario_for(cfg, seed, robots)
    result = run_episode(
        scenario,
        planner,
        cfg.mpc_params(),
        reference=cfg.reference,
        seed=seed,
    )
    os.makedirs(cfg.out, exist_ok=True)
    stem = os.path.join(cfg.out, _artifact_stem(cfg, planner, seed, robots))
    write_episode_csv(result, stem + ".csv")
    write_summary_json(result, stem + ".json", extra={"planner": planner, "seed": seed})
    metrics = compute_metrics([result])
    return {
        "planner": planner,
        "env": cfg.env if cfg.scenario_file is None else "file",
        "robots": scenario.n_agents,
        "seed": seed,
        "horizon": cfg.horizon,
        "outcome": result.outcome,
        "steps": result.steps,
        "makespan": result.makespan,
        "c_avg": metrics.c_avg,
        "t_avg": metrics.t_avg,
        "t_max": metrics.t_max,
    }


def cmd_run(cfg: RunConfig) -> int:
    if len(cfg.planners) != 1:
        raise ConfigError("run takes exactly one planner")
    row = _run_one(cfg, cfg.planners[0], cfg.seed, cfg.robots[0])
    print(f"{row['planner']} {row['env']}: {row['outcome']}")
    return EXIT_OK if row["outcome"] == SUCCESS else EXIT_PLANNER_FAILURE


def _batch_item(payload: tuple) -> dict:
    cfg_dict, planner, seed, robots, trial = payload
    cfg = RunConfig.from_dict(cfg_dict)
    row = _run_one(cfg, planner, seed, robots)
    row["trial"] = trial
    return row


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.9f}"
    return str(value)


def cmd_batch(cfg: RunConfig) -> int:
    jobs = []
    for robots in cfg.robots:
        for trial in range(cfg.trials):
            seed = cfg.seed + trial
            for planner in cfg.planners:
                jobs.append((cfg.to_dict(), planner, seed, robots, trial))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_batch_item, jobs))
    else:
        rows = [_batch_item(job) for job in jobs]

    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "aggregate.csv")
    columns = AGGREGATE_COLUMNS.split(",")
    with open(path, "w") as fh:
        fh.write(AGGREGATE_COLUMNS + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    n_success = sum(1 for r in rows if r["outcome"] == SUCCESS)
    print(f"{n_success}/{len(rows)} episodes succeeded; aggregate at {path}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_batch(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
