"""Benchmark harness: seeded rollouts, success-rate statistics, ablations.

Protocol: ``runs`` independent test runs per task (default 3), each of
``rollouts_per_run`` episodes (default 25).  A task reports the mean of its
per-run success rates and the sample (n-1) standard deviation over runs.
Level aggregates are unweighted over member tasks: the level's per-run rate
is the mean of its tasks' per-run rates, and mean/std are taken over those.

Episode seeds derive from (run seed, task name, episode index), so two
configurations that share seeds see identical scenes; the selection ablation
relies on this pairing.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Sequence

from .errors import XicmError
from .pipeline import Pipeline
from .sim import RolloutResult, TaskSpec, run_episode, stable_seed


@dataclass
class BenchConfig:
    tasks: list[str]
    runs: int = 3
    rollouts_per_run: int = 25
    seed: int = 7
    run_seeds: list[int] | None = None
    k: int = 18
    selection: str = "dynamics"
    backend: str = "echo_nearest"
    feature_mode: str = "vis_out+lang"

    def resolved_run_seeds(self) -> list[int]:
        if self.run_seeds is not None:
            if len(self.run_seeds) != self.runs:
                raise XicmError(
                    f"{len(self.run_seeds)} run seeds for {self.runs} runs"
                )
            if len(set(self.run_seeds)) != len(self.run_seeds):
                raise XicmError("run seeds must be distinct")
            return list(self.run_seeds)
        return [self.seed + i for i in range(self.runs)]

    def snapshot(self) -> dict:
        return {
            "tasks": list(self.tasks),
            "runs": self.runs,
            "rollouts_per_run": self.rollouts_per_run,
            "seed": self.seed,
            "run_seeds": self.resolved_run_seeds(),
            "k": self.k,
            "selection": self.selection,
            "backend": self.backend,
            "feature_mode": self.feature_mode,
            "std_definition": "sample_std_over_run_rates",
        }


def episode_seed(run_seed: int, task_name: str, episode_index: int) -> int:
    return stable_seed(run_seed, task_name, episode_index)


def mean_and_sample_std(rates: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0.0 for n=1."""
    mean = statistics.fmean(rates)
    std = statistics.stdev(rates) if len(rates) > 1 else 0.0
    return mean, std


@dataclass
class TaskStats:
    name: str
    level: str
    run_rates: list[float]
    mean: float
    std: float


@dataclass
class BenchReport:
    config: dict
    task_stats: dict[str, TaskStats]
    level_stats: dict[str, TaskStats]
    episodes: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        def stats_dict(s: TaskStats) -> dict:
            return {"level": s.level, "run_rates": s.run_rates, "mean": s.mean, "std": s.std}

        return {
            "config": self.config,
            "tasks": {name: stats_dict(s) for name, s in self.task_stats.items()},
            "levels": {name: stats_dict(s) for name, s in self.level_stats.items()},
            "episodes": self.episodes,
        }


def aggregate_report(config: dict, tasks: list[TaskSpec], results: list[RolloutResult],
                     runs: int, rollouts_per_run: int, run_seeds: list[int]) -> BenchReport:
    """Build the report from the raw episode results (grouped arbitrarily)."""
    by_key = {}
    for res in results:
        by_key.setdefault(res.task_name, []).append(res)

    episodes = []
    task_stats: dict[str, TaskStats] = {}
    per_task_run_rates: dict[str, list[float]] = {}
    for task in tasks:
        rows = by_key.get(task.name, [])
        if len(rows) != runs * rollouts_per_run:
            raise XicmError(
                f"task {task.name!r}: expected {runs * rollouts_per_run} episodes, got {len(rows)}"
            )
        seed_to_run = {}
        ordered: list[list[RolloutResult]] = [[] for _ in range(runs)]
        for run_idx, run_seed in enumerate(run_seeds):
            for ep_idx in range(rollouts_per_run):
                seed_to_run[episode_seed(run_seed, task.name, ep_idx)] = (run_idx, ep_idx)
        for res in rows:
            if res.episode_seed not in seed_to_run:
                raise XicmError(f"unexpected episode seed {res.episode_seed} for {task.name!r}")
            ordered[seed_to_run[res.episode_seed][0]].append(res)
        rates = []
        for run_idx, run_rows in enumerate(ordered):
            run_rows.sort(key=lambda r: seed_to_run[r.episode_seed][1])
            rates.append(sum(1 for r in run_rows if r.success) / rollouts_per_run)
            for r in run_rows:
                episodes.append(
                    {
                        "task": r.task_name,
                        "run": run_idx,
                        "episode": seed_to_run[r.episode_seed][1],
                        "seed": r.episode_seed,
                        "success": r.success,
                        "steps_executed": r.steps_executed,
                        "failure_reason": r.failure_reason,
                    }
                )
        mean, std = mean_and_sample_std(rates)
        task_stats[task.name] = TaskStats(task.name, task.level.value, rates, mean, std)
        per_task_run_rates[task.name] = rates

    level_stats: dict[str, TaskStats] = {}
    groups: dict[str, list[TaskSpec]] = {}
    for task in tasks:
        groups.setdefault(task.level.value, []).append(task)
    groups["all"] = list(tasks)
    for level_name, members in groups.items():
        level_rates = [
            statistics.fmean(per_task_run_rates[t.name][r] for t in members)
            for r in range(runs)
        ]
        mean, std = mean_and_sample_std(level_rates)
        level_stats[level_name] = TaskStats(level_name, level_name, level_rates, mean, std)

    return BenchReport(config=config, task_stats=task_stats, level_stats=level_stats, episodes=episodes)


def run_benchmark(cfg: BenchConfig, pipeline: Pipeline, task_library: dict[str, TaskSpec]) -> BenchReport:
    """Run the full grid of (task, run, episode) rollouts and aggregate."""
    tasks = []
    for name in cfg.tasks:
        if name not in task_library:
            raise XicmError(f"unknown task {name!r}")
        tasks.append(task_library[name])
    run_seeds = cfg.resolved_run_seeds()
    pipe = pipeline.with_selection(cfg.selection).with_k(cfg.k)
    results: list[RolloutResult] = []
    for task in tasks:
        for run_seed in run_seeds:
            for ep_idx in range(cfg.rollouts_per_run):
                results.append(run_episode(task, episode_seed(run_seed, task.name, ep_idx), pipe))
    return aggregate_report(cfg.snapshot(), tasks, results, cfg.runs, cfg.rollouts_per_run, run_seeds)


@dataclass
class AblationResult:
    dynamics: BenchReport
    random: BenchReport

    def deltas(self) -> dict[str, float]:
        """Per-task mean difference (dynamics - random), plus levels."""
        out = {}
        for name, stats in self.dynamics.task_stats.items():
            out[name] = stats.mean - self.random.task_stats[name].mean
        for name, stats in self.dynamics.level_stats.items():
            out[f"level:{name}"] = stats.mean - self.random.level_stats[name].mean
        return out


def ablate_selection(cfg: BenchConfig, pipeline: Pipeline, task_library: dict[str, TaskSpec]) -> AblationResult:
    """Dynamics vs random selection under identical episode seeds."""
    from dataclasses import replace as dc_replace

    dyn = run_benchmark(dc_replace(cfg, selection="dynamics"), pipeline, task_library)
    rnd = run_benchmark(dc_replace(cfg, selection="random"), pipeline, task_library)
    return AblationResult(dynamics=dyn, random=rnd)


def sweep_k(cfg: BenchConfig, pipeline: Pipeline, task_library: dict[str, TaskSpec],
            k_values: Sequence[int]) -> list[tuple[int, float, float, BenchReport]]:
    """Benchmark once per K under shared seeds; rows are (k, mean, std, report).

    mean/std refer to the all-task aggregate.
    """
    from dataclasses import replace as dc_replace

    rows = []
    for k in k_values:
        report = run_benchmark(dc_replace(cfg, k=int(k)), pipeline, task_library)
        agg = report.level_stats["all"]
        rows.append((int(k), agg.mean, agg.std, report))
    return rows
