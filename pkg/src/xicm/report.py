"""Report rendering: JSON (full precision), CSV, markdown grid, figures.

Human-readable percentages use one decimal place; JSON and CSV keep full
float precision.  The JSON is byte-stable: sorted keys, no timestamps or
latency fields, so identical runs produce identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .bench import AblationResult, BenchReport, TaskStats

LEVEL_ORDER = ["seen", "unseen_level1", "unseen_level2", "all"]


def pct(rate: float) -> str:
    """0.3 -> '30.0' (percent, one decimal)."""
    return f"{100.0 * rate:.1f}"


def format_mean_std(mean: float, std: float) -> str:
    return f"{pct(mean)} ({pct(std)})"


def report_json_text(report: BenchReport) -> str:
    return json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"


def write_report_json(report: BenchReport, path: str | Path) -> None:
    Path(path).write_text(report_json_text(report))


def load_report_json(path: str | Path) -> BenchReport:
    obj = json.loads(Path(path).read_text())

    def stats_from(name: str, d: dict) -> TaskStats:
        return TaskStats(name, d["level"], list(d["run_rates"]), d["mean"], d["std"])

    # sort_keys alphabetizes the tasks mapping on disk; the config's task list
    # still carries benchmark order, so restore insertion order from it.  CSV,
    # markdown, and the figure all iterate that order, and re-rendering must
    # reproduce the original files byte for byte.
    tasks = obj["tasks"]
    order = [n for n in obj["config"].get("tasks", []) if n in tasks]
    order += [n for n in tasks if n not in order]
    return BenchReport(
        config=obj["config"],
        task_stats={n: stats_from(n, tasks[n]) for n in order},
        level_stats={k: stats_from(k, v) for k, v in obj["levels"].items()},
        episodes=list(obj["episodes"]),
    )


def write_report_csv(report: BenchReport, path: str | Path) -> None:
    runs = len(next(iter(report.task_stats.values())).run_rates) if report.task_stats else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "level"] + [f"run{i + 1}" for i in range(runs)] + ["mean", "std"])
        for name, s in report.task_stats.items():
            writer.writerow([name, s.level] + [repr(r) for r in s.run_rates] + [repr(s.mean), repr(s.std)])
        for name in LEVEL_ORDER:
            if name in report.level_stats:
                s = report.level_stats[name]
                writer.writerow([name, "aggregate"] + [repr(r) for r in s.run_rates] + [repr(s.mean), repr(s.std)])


def write_report_md(report: BenchReport, path: str | Path) -> None:
    lines = [
        "# Benchmark report",
        "",
        f"Success rates in percent, mean over {report.config.get('runs')} runs of "
        f"{report.config.get('rollouts_per_run')} rollouts; std is the sample (n-1) "
        "standard deviation over per-run rates.",
        "",
        "| task | level | success % (std) |",
        "| --- | --- | --- |",
    ]
    for name, s in report.task_stats.items():
        lines.append(f"| {name} | {s.level} | {format_mean_std(s.mean, s.std)} |")
    lines.append("| --- | --- | --- |")
    for name in LEVEL_ORDER:
        if name in report.level_stats:
            s = report.level_stats[name]
            lines.append(f"| {name} | aggregate | {format_mean_std(s.mean, s.std)} |")
    Path(path).write_text("\n".join(lines) + "\n")


def render_report_figure(report: BenchReport, path: str | Path) -> None:
    """Per-task success bars with run-to-run std as error bars."""
    names = list(report.task_stats)
    means = [100.0 * report.task_stats[n].mean for n in names]
    stds = [100.0 * report.task_stats[n].std for n in names]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(names) + 2.0), 4.0))
    ax.bar(range(len(names)), means, yerr=stds, capsize=3, color="#4878cf")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("success rate (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Success rate per task")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_files(report: BenchReport, out_dir: str | Path, stem: str = "report") -> list[Path]:
    """Emit report.<json|csv|md|png> into out_dir; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.json", out / f"{stem}.csv", out / f"{stem}.md", out / f"{stem}.png"]
    write_report_json(report, paths[0])
    write_report_csv(report, paths[1])
    write_report_md(report, paths[2])
    render_report_figure(report, paths[3])
    return paths


# -- ablation


def write_ablation_files(result: AblationResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    deltas = result.deltas()
    payload = {
        "dynamics": result.dynamics.to_json_dict(),
        "random": result.random.to_json_dict(),
        "delta": deltas,
    }
    json_path = out / "ablation.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    md_lines = [
        "# Selection ablation (paired seeds)",
        "",
        "| task | dynamics % (std) | random % (std) | delta pts |",
        "| --- | --- | --- | --- |",
    ]
    for name, s in result.dynamics.task_stats.items():
        r = result.random.task_stats[name]
        md_lines.append(
            f"| {name} | {format_mean_std(s.mean, s.std)} | {format_mean_std(r.mean, r.std)} "
            f"| {100.0 * deltas[name]:+.1f} |"
        )
    for name in LEVEL_ORDER:
        if name in result.dynamics.level_stats:
            s = result.dynamics.level_stats[name]
            r = result.random.level_stats[name]
            md_lines.append(
                f"| {name} (aggregate) | {format_mean_std(s.mean, s.std)} | "
                f"{format_mean_std(r.mean, r.std)} | {100.0 * deltas['level:' + name]:+.1f} |"
            )
    md_path = out / "ablation.md"
    md_path.write_text("\n".join(md_lines) + "\n")

    names = list(result.dynamics.task_stats)
    dyn = [100.0 * result.dynamics.task_stats[n].mean for n in names]
    rnd = [100.0 * result.random.task_stats[n].mean for n in names]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.8 * len(names) + 2.0), 4.0))
    xs = range(len(names))
    width = 0.38
    ax.bar([x - width / 2 for x in xs], dyn, width=width, label="dynamics", color="#4878cf")
    ax.bar([x + width / 2 for x in xs], rnd, width=width, label="random", color="#d65f5f")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("success rate (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.set_title("Demonstration selection: dynamics vs random")
    fig.tight_layout()
    png_path = out / "ablation.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [json_path, md_path, png_path]


# -- K sweep


def write_sweep_files(rows: Sequence[tuple[int, float, float, BenchReport]], out_dir: str | Path) -> list[Path]:
    """rows: (k, all-task mean, std, report). Writes sweep.csv and sweep.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mean", "std"])
        for k, mean, std, _ in rows:
            writer.writerow([k, repr(mean), repr(std)])

    ks = [r[0] for r in rows]
    means = [100.0 * r[1] for r in rows]
    stds = [100.0 * r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(ks, means, yerr=stds, marker="o", capsize=3, color="#4878cf")
    ax.set_xlabel("K (demonstrations in prompt)")
    ax.set_ylabel("success rate (%)")
    ax.set_title("Success vs number of in-context demonstrations")
    ax.set_ylim(0, 105)
    fig.tight_layout()
    png_path = out / "sweep.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]
