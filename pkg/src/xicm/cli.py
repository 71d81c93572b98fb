"""Command-line interface.

Subcommands cover the full pipeline: simgen, ingest, extract-keyframes,
embed, train-dynamics, select, prompt, predict, rollout, bench, ablate,
sweep-k, report.  Exit codes: 0 success, 1 domain error, 2 usage error.
Errors print one structured line to stderr: ``error: <code>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bench import BenchConfig, ablate_selection, run_benchmark, sweep_k
from .config import CliConfig, parse_overrides
from .demo_store import load_dataset, save_dataset
from .dynamics import (
    DynamicsPredictor,
    FeatureMode,
    TrainConfig,
    embed_dataset,
    export_features,
    load_embeddings,
    pool_features,
    save_embeddings,
    train_dynamics_predictor,
)
from .errors import ConfigError, XicmError
from .gateway import EchoNearestBackend, Gateway, GatewayConfig, ScriptedBackend
from .keyframes import extract_keyframes
from .pipeline import Pipeline
from .prompting import textualize_action
from .report import (
    load_report_json,
    write_ablation_files,
    write_report_files,
    write_sweep_files,
)
from .sim import SimConfig, generate_seen_dataset, make_observation, object_records, run_episode
from .tasks import TASK_LIBRARY, oracle_backend, resolve_task_set, tasks_by_names

_FLAG_TO_KEY = {
    "seed": "seed",
    "k": "k",
    "mode": "feature_mode",
    "epsilon": "epsilon",
    "dataset": "dataset",
    "features": "features",
    "predictor": "predictor",
    "backend": "bench.backend",
    "runs": "bench.runs",
    "rollouts": "bench.rollouts",
    "tasks": "bench.tasks",
    "selection": "bench.selection",
    "endpoint": "gateway.endpoint",
    "model": "gateway.model",
    "temperature": "gateway.temperature",
    "timeout": "gateway.timeout",
    "max_retries": "gateway.max_retries",
    "cache_dir": "cache_dir",
}


def _common_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="flat key=value config file")
    parent.add_argument("--seed", type=int, help="global seed")
    parent.add_argument("--print-config", action="store_true", help="print resolved config with provenance and exit")
    parent.add_argument("--quiet", action="store_true", help="suppress informational output")
    return parent


def _resolve_config(args: argparse.Namespace) -> CliConfig:
    flags = {}
    for attr, key in _FLAG_TO_KEY.items():
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = value
    for pair_list in (getattr(args, "overrides", None) or [],):
        flags.update(parse_overrides(list(pair_list)))
    return CliConfig.resolve(getattr(args, "config", None), flags)


def _say(args: argparse.Namespace, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message)


def _gateway_from(cfg: CliConfig, backend_name: str) -> Gateway:
    gcfg = GatewayConfig(
        endpoint_url=cfg["gateway.endpoint"],
        model_name=cfg["gateway.model"],
        api_key=cfg["gateway.api_key"],
        temperature=cfg["gateway.temperature"],
        max_output_tokens=cfg["gateway.max_output_tokens"],
        request_timeout=cfg["gateway.timeout"],
        max_retries=cfg["gateway.max_retries"],
        max_concurrent_requests=cfg["gateway.concurrency"],
    )
    if backend_name in ("echo", "echo_nearest"):
        backend = EchoNearestBackend()
    elif backend_name == "scripted":
        backend = oracle_backend()
    elif backend_name == "http":
        from .gateway import HttpBackend

        backend = HttpBackend(gcfg)
    else:
        raise ConfigError(f"unknown backend {backend_name!r} (choose http, echo_nearest, scripted)")
    cache_dir = cfg["cache_dir"] or None
    return Gateway(cfg=gcfg, backend=backend, cache_dir=cache_dir)


def _build_pipeline(cfg: CliConfig, backend_name: str) -> Pipeline:
    if not cfg["dataset"]:
        raise ConfigError("no dataset configured (set dataset=... or --dataset)")
    dataset = load_dataset(cfg["dataset"])
    embeddings = load_embeddings(cfg["features"]) if cfg["features"] else embed_dataset(dataset)
    predictor = DynamicsPredictor.load(cfg["predictor"]) if cfg["predictor"] else None
    mode = FeatureMode.parse(cfg["feature_mode"])
    return Pipeline.build(
        dataset,
        gateway=_gateway_from(cfg, backend_name),
        predictor=predictor,
        embeddings=embeddings,
        mode=mode,
        k=cfg["k"],
        velocity_epsilon=cfg["epsilon"],
        selection=cfg["bench.selection"],
    )


def _bench_config(cfg: CliConfig) -> BenchConfig:
    return BenchConfig(
        tasks=[t.name for t in resolve_task_set(cfg["bench.tasks"])],
        runs=cfg["bench.runs"],
        rollouts_per_run=cfg["bench.rollouts"],
        seed=cfg["seed"],
        k=cfg["k"],
        selection=cfg["bench.selection"],
        backend=cfg["bench.backend"],
        feature_mode=cfg["feature_mode"],
    )


def _query_scene(cfg: CliConfig, task_name: str | None, episode_seed: int):
    """Observation and object records for a query: a sampled task scene, or
    an empty table when no task is given."""
    from .sim import HOME_POSE, SceneState
    import numpy as np

    if task_name:
        task = tasks_by_names([task_name])[0]
        scene = task.scene_sampler(episode_seed)
        language = task.language
    else:
        scene = SceneState(objects={}, gripper_pose=HOME_POSE, receptacles={}, rng=np.random.default_rng(episode_seed))
        language = ""
    return scene, language


# ---------------------------------------------------------------------------
# subcommands


def cmd_simgen(args: argparse.Namespace, cfg: CliConfig) -> int:
    tasks = resolve_task_set(args.tasks)
    sim_cfg = SimConfig(episodes_per_task=args.episodes, seed=cfg["seed"], image_size=args.image_size)
    dataset = generate_seen_dataset(tasks, sim_cfg)
    save_dataset(dataset, args.out)
    _say(args, f"wrote {len(dataset)} demos across {len(dataset.tasks)} tasks to {args.out}")
    return 0


def cmd_ingest(args: argparse.Namespace, cfg: CliConfig) -> int:
    dataset = load_dataset(cfg["dataset"])
    counts = ", ".join(f"{t}={len(dataset.by_task(t))}" for t in dataset.tasks)
    _say(args, f"ok: {len(dataset)} demos, {len(dataset.tasks)} tasks ({counts})")
    return 0


def cmd_extract_keyframes(args: argparse.Namespace, cfg: CliConfig) -> int:
    dataset = load_dataset(cfg["dataset"])
    lines = []
    for demo in dataset.demos:
        seq = extract_keyframes(demo, cfg["epsilon"])
        lines.append(
            json.dumps(
                {
                    "demo_id": seq.demo_id,
                    "keyframes": [
                        {
                            "t": t,
                            "action": {
                                "pos": list(a.position),
                                "rpy": list(a.rpy),
                                "gripper_open": 1 if a.gripper_open else 0,
                            },
                        }
                        for t, a in seq.keyframes
                    ],
                },
                sort_keys=True,
            )
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        _say(args, f"wrote key actions for {len(dataset)} demos to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_embed(args: argparse.Namespace, cfg: CliConfig) -> int:
    dataset = load_dataset(cfg["dataset"])
    embeddings = embed_dataset(dataset)
    mode_tag = args.mode or "base"
    if mode_tag == "base":
        save_embeddings(embeddings, args.out)
    else:
        mode = FeatureMode.parse(mode_tag)
        predictor = DynamicsPredictor.load(cfg["predictor"]) if cfg["predictor"] else None
        export_features(pool_features(embeddings, predictor, mode), args.out)
    _say(args, f"wrote {len(embeddings)} feature rows ({mode_tag}) to {args.out}")
    return 0


def cmd_train_dynamics(args: argparse.Namespace, cfg: CliConfig) -> int:
    if cfg["features"]:
        embeddings = load_embeddings(cfg["features"])
    elif cfg["dataset"]:
        embeddings = embed_dataset(load_dataset(cfg["dataset"]))
    else:
        raise ConfigError("train-dynamics needs features=... or dataset=...")
    train_cfg = TrainConfig(
        hidden=args.hidden,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=cfg["seed"],
    )
    predictor, history = train_dynamics_predictor(embeddings, train_cfg)
    predictor.save(args.out)
    _say(
        args,
        f"trained on {len(embeddings)} demos: loss {predictor.final_loss:.6g} "
        f"(constant-mean baseline {predictor.baseline_loss:.6g}, {len(history)} epochs) -> {args.out}",
    )
    return 0


def cmd_select(args: argparse.Namespace, cfg: CliConfig) -> int:
    pipeline = _build_pipeline(cfg, "echo_nearest")
    scene, language = _query_scene(cfg, args.task, args.episode_seed)
    if args.query:
        language = args.query
    obs = make_observation(scene, 0, image_size=pipeline.image_size)
    result = pipeline.with_k(cfg["k"]).select(language, obs)
    print("rank,demo_id,score")
    for rank, (idx, score) in enumerate(zip(result.indices, result.scores), start=1):
        print(f"{rank},{pipeline.dataset.demos[idx].id},{score:.6f}")
    return 0


def _bundle_for_query(args: argparse.Namespace, cfg: CliConfig, pipeline: Pipeline):
    scene, language = _query_scene(cfg, args.task, args.episode_seed)
    if args.query:
        language = args.query
    if not language:
        raise ConfigError("need --query or --task to build a prompt")
    obs = make_observation(scene, 0, image_size=pipeline.image_size)
    selection = pipeline.select(language, obs, selection_seed=args.episode_seed)
    return pipeline.build_query_prompt(language, object_records(scene), selection), scene


def cmd_prompt(args: argparse.Namespace, cfg: CliConfig) -> int:
    pipeline = _build_pipeline(cfg, "echo_nearest")
    bundle, _ = _bundle_for_query(args, cfg, pipeline)
    sys.stdout.write(bundle.rendered)
    return 0


def cmd_predict(args: argparse.Namespace, cfg: CliConfig) -> int:
    from .gateway import EpisodeContext
    from .prompting import parse_prediction

    backend = args.backend or "http"
    pipeline = _build_pipeline(cfg, backend)
    bundle, scene = _bundle_for_query(args, cfg, pipeline)
    context = EpisodeContext(task_name=args.task or "", episode_seed=args.episode_seed, scene=scene)
    record = pipeline.gateway.complete(bundle, context)
    prediction = parse_prediction(record.response_text, pipeline.grid_resolution)
    for warning in prediction.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for action in prediction.actions:
        print(textualize_action(action))
    return 0


def cmd_rollout(args: argparse.Namespace, cfg: CliConfig) -> int:
    backend = args.backend or cfg["bench.backend"]
    pipeline = _build_pipeline(cfg, backend)
    task = tasks_by_names([args.task])[0]
    result = run_episode(task, args.episode_seed, pipeline)
    print(
        json.dumps(
            {
                "task": result.task_name,
                "episode_seed": result.episode_seed,
                "success": result.success,
                "steps_executed": result.steps_executed,
                "failure_reason": result.failure_reason,
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_bench(args: argparse.Namespace, cfg: CliConfig) -> int:
    bench_cfg = _bench_config(cfg)
    pipeline = _build_pipeline(cfg, bench_cfg.backend)
    report = run_benchmark(bench_cfg, pipeline, TASK_LIBRARY)
    paths = write_report_files(report, args.out)
    _say(args, "wrote " + ", ".join(str(p) for p in paths))
    agg = report.level_stats["all"]
    _say(args, f"all tasks: {100 * agg.mean:.1f} ({100 * agg.std:.1f})")
    return 0


def cmd_ablate(args: argparse.Namespace, cfg: CliConfig) -> int:
    bench_cfg = _bench_config(cfg)
    pipeline = _build_pipeline(cfg, bench_cfg.backend)
    result = ablate_selection(bench_cfg, pipeline, TASK_LIBRARY)
    paths = write_ablation_files(result, args.out)
    _say(args, "wrote " + ", ".join(str(p) for p in paths))
    delta = result.deltas()["level:all"]
    _say(args, f"dynamics - random (all tasks): {100 * delta:+.1f} points")
    return 0


def cmd_sweep_k(args: argparse.Namespace, cfg: CliConfig) -> int:
    k_values = [int(v) for v in args.k_values.split(",") if v.strip()]
    if not k_values:
        raise ConfigError("no K values given")
    bench_cfg = _bench_config(cfg)
    pipeline = _build_pipeline(cfg, bench_cfg.backend)
    rows = sweep_k(bench_cfg, pipeline, TASK_LIBRARY, k_values)
    paths = write_sweep_files(rows, args.out)
    _say(args, "wrote " + ", ".join(str(p) for p in paths))
    for k, mean, std, _ in rows:
        _say(args, f"K={k}: {100 * mean:.1f} ({100 * std:.1f})")
    return 0


def cmd_report(args: argparse.Namespace, cfg: CliConfig) -> int:
    report = load_report_json(args.input)
    paths = write_report_files(report, args.out, stem=args.stem)
    _say(args, "wrote " + ", ".join(str(p) for p in paths))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xicm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"xicm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _common_parent()

    p = sub.add_parser("simgen", parents=[parent], help="generate scripted demonstrations")
    p.add_argument("--tasks", default="seen", help="'seen' or comma-separated seen task names")
    p.add_argument("--episodes", type=int, default=20, help="episodes per task")
    p.add_argument("--image-size", type=int, default=48)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_simgen)

    p = sub.add_parser("ingest", parents=[parent], help="validate a dataset directory")
    p.add_argument("--dataset", help="dataset directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extract-keyframes", parents=[parent], help="extract key actions to JSONL")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--epsilon", type=float, help="joint-velocity threshold (rad/s)")
    p.add_argument("--out", help="output JSONL path (default: stdout)")
    p.set_defaults(func=cmd_extract_keyframes)

    p = sub.add_parser("embed", parents=[parent], help="compute features to a binary file")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--mode", help="'base' (default) or a selection feature mode")
    p.add_argument("--predictor", help="trained predictor (.npz), for vis_out modes")
    p.add_argument("--out", required=True, help="output feature file")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train-dynamics", parents=[parent], help="train the dynamics predictor")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--features", help="base feature file from 'embed'")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--lr", type=float, default=4.0)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True, help="output predictor path (.npz)")
    p.set_defaults(func=cmd_train_dynamics)

    def add_pipeline_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--dataset", help="dataset directory")
        p.add_argument("--features", help="base feature file")
        p.add_argument("--predictor", help="trained predictor (.npz)")
        p.add_argument("--mode", help="feature mode (default vis_out+lang)")
        p.add_argument("--k", type=int, help="demonstrations per prompt")

    p = sub.add_parser("select", parents=[parent], help="print top-K demos for a query")
    add_pipeline_flags(p)
    p.add_argument("--task", help="sample the query scene from this task")
    p.add_argument("--query", help="query language (defaults to the task's)")
    p.add_argument("--episode-seed", type=int, default=0)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("prompt", parents=[parent], help="render the prompt for a query")
    add_pipeline_flags(p)
    p.add_argument("--task", help="sample the query scene from this task")
    p.add_argument("--query", help="query language")
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--dry-run", action="store_true", help="build the prompt without querying any backend (this command never queries)")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("predict", parents=[parent], help="query the model and parse actions")
    add_pipeline_flags(p)
    p.add_argument("--task", help="sample the query scene from this task")
    p.add_argument("--query", help="query language")
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--backend", choices=["http", "echo_nearest", "scripted"], help="default http")
    p.add_argument("--endpoint", help="chat-completions endpoint URL")
    p.add_argument("--model", help="model name")
    p.add_argument("--temperature", type=float)
    p.add_argument("--cache-dir", dest="cache_dir", help="completion cache directory")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rollout", parents=[parent], help="run one episode end to end")
    add_pipeline_flags(p)
    p.add_argument("--task", required=True)
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--backend", choices=["http", "echo_nearest", "scripted"])
    p.set_defaults(func=cmd_rollout)

    for name, func, extra_help in (
        ("bench", cmd_bench, "run the benchmark grid and write reports"),
        ("ablate", cmd_ablate, "paired dynamics-vs-random selection ablation"),
        ("sweep-k", cmd_sweep_k, "benchmark across K values"),
    ):
        p = sub.add_parser(name, parents=[parent], help=extra_help)
        add_pipeline_flags(p)
        p.add_argument("--tasks", help="'seen' | 'unseen' | 'all' | comma-separated names")
        p.add_argument("--runs", type=int)
        p.add_argument("--rollouts", type=int)
        p.add_argument("--selection", choices=["dynamics", "random"])
        p.add_argument("--backend", choices=["http", "echo_nearest", "scripted"])
        p.add_argument("--out", default=f"{name.replace('-', '_')}_out")
        if name == "sweep-k":
            p.add_argument("--k-values", default="1,2,4,8,12,18")
        p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
        p.set_defaults(func=func)

    p = sub.add_parser("report", parents=[parent], help="re-render files from a report.json")
    p.add_argument("--input", required=True, help="existing report.json")
    p.add_argument("--out", default="report_out")
    p.add_argument("--stem", default="report")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if getattr(args, "print_config", False):
            print(cfg.provenance_dump())
            return 0
        return args.func(args, cfg)
    except XicmError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
