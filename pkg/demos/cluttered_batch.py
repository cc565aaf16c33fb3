"""Randomized cluttered trials comparing the coordinated planners.

Five random maps per robot count, no reference plan, goal tracking only.
Prints success rate and average metrics per planner and robot count.
"""

from cbmpc import MpcParams, compute_metrics, make_cluttered, run_episode

PLANNERS = ("cbmpc", "distributed", "prioritized")
ROBOT_COUNTS = (2, 3, 4)
TRIALS = 5


def main():
    params = MpcParams(horizon=20)
    print(f"{'planner':12s} {'robots':>6s} {'success':>8s} {'makespan':>9s} {'t_avg':>9s}")
    for n_robots in ROBOT_COUNTS:
        for planner in PLANNERS:
            episodes = [
                run_episode(make_cluttered(seed, n_robots=n_robots), planner, params, seed=seed)
                for seed in range(TRIALS)
            ]
            m = compute_metrics(episodes)
            makespan = f"{m.makespan:9.2f}" if m.available else "      n/a"
            t_avg = f"{m.t_avg * 1e3:7.1f}ms" if m.available else "      n/a"
            print(f"{planner:12s} {n_robots:>6d} {m.success_rate:8.0%} {makespan} {t_avg}")


if __name__ == "__main__":
    main()
