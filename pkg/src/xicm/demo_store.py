"""Demonstration storage: core record types plus dataset load/save.

A dataset on disk is a directory with a ``manifest.json`` and one JSONL file
per task (``<task>.jsonl``, one episode per line).  Loading validates every
record and produces a canonical in-memory view: demonstrations sorted by id,
so file enumeration order never changes dataset content.

Angles are stored and handled in degrees; every rpy triple is wrapped into
[0, 360) at construction time.  The gripper flag is boolean in memory and the
manifest records the integer encoding used by the discretizer (1=open).
"""

from __future__ import annotations

import base64
import binascii
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import DatasetError

Vec3 = tuple[float, float, float]


def wrap_degrees(angle: float) -> float:
    """Wrap an angle in degrees into [0, 360).

    Guards against the float quirk where ``x % 360`` returns 360.0 exactly
    for tiny negative x.
    """
    w = float(angle) % 360.0
    if w >= 360.0:
        w = 0.0
    return w


def _vec3(value: Any, *, field_name: str) -> Vec3:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise DatasetError(f"expected 3-vector, got {value!r}", field=field_name)
    try:
        return (float(value[0]), float(value[1]), float(value[2]))
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"non-numeric 3-vector {value!r}", field=field_name) from exc


@dataclass(frozen=True)
class WorkspaceBounds:
    """Axis-aligned workspace box and the per-axis grid resolution."""

    min_xyz: Vec3
    max_xyz: Vec3
    grid_resolution: int = 100

    def __post_init__(self) -> None:
        if self.grid_resolution < 2:
            raise DatasetError(f"grid_resolution must be >= 2, got {self.grid_resolution}")
        for lo, hi, axis in zip(self.min_xyz, self.max_xyz, "xyz"):
            if not (lo < hi):
                raise DatasetError(f"workspace min must be < max on {axis} ({lo} vs {hi})")

    @property
    def extent(self) -> Vec3:
        return tuple(hi - lo for lo, hi in zip(self.min_xyz, self.max_xyz))  # type: ignore[return-value]


@dataclass(frozen=True)
class Pose7:
    """End-effector pose: xyz position, rpy in degrees [0, 360), gripper flag."""

    position: Vec3
    rpy: Vec3
    gripper_open: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "rpy", tuple(wrap_degrees(v) for v in self.rpy))
        object.__setattr__(self, "gripper_open", bool(self.gripper_open))


@dataclass(frozen=True)
class ObjectRecord:
    """A named scene entity and its center, as shown to the model."""

    name: str
    center_xyz: Vec3

    def __post_init__(self) -> None:
        name = str(self.name).strip().lower()
        if not name:
            raise DatasetError("object name must be non-empty", field="name")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "center_xyz", tuple(float(v) for v in self.center_xyz))


@dataclass(frozen=True)
class Observation:
    """One trajectory step: raw RGB buffer plus proprioception."""

    width: int
    height: int
    rgb: bytes
    joint_velocities: tuple[float, ...]
    gripper_open: bool
    timestep: int

    def __post_init__(self) -> None:
        if self.timestep < 0:
            raise DatasetError(f"timestep must be >= 0, got {self.timestep}", field="t")
        expected = self.width * self.height * 3
        if len(self.rgb) != expected:
            raise DatasetError(
                f"rgb buffer has {len(self.rgb)} bytes, expected {expected} for {self.width}x{self.height}x3",
                field="rgb",
            )


@dataclass(frozen=True)
class Demonstration:
    """A full recorded episode: language, objects, T observations, T actions."""

    id: str
    task_name: str
    language: str
    objects: tuple[ObjectRecord, ...]
    observations: tuple[Observation, ...]
    actions: tuple[Pose7, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise DatasetError("demonstration id must be non-empty", field="id")
        if len(self.observations) != len(self.actions):
            raise DatasetError(
                f"demo {self.id}: {len(self.observations)} observations vs {len(self.actions)} actions",
                field="steps",
            )
        if len(self.observations) < 2:
            raise DatasetError(f"demo {self.id}: need at least 2 steps", field="steps")
        prev = -1
        for obs in self.observations:
            if obs.timestep <= prev:
                raise DatasetError(
                    f"demo {self.id}: timesteps must be strictly increasing", field="t"
                )
            prev = obs.timestep


@dataclass(frozen=True)
class Dataset:
    """Immutable handle over a validated set of demonstrations."""

    workspace: WorkspaceBounds
    tasks: tuple[str, ...]
    demos: tuple[Demonstration, ...]
    sim_params: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.demos)

    def by_task(self, task_name: str) -> list[Demonstration]:
        return [d for d in self.demos if d.task_name == task_name]


# ---------------------------------------------------------------------------
# serialization


def _pose_to_json(p: Pose7) -> dict:
    return {"pos": list(p.position), "rpy": list(p.rpy), "gripper_open": 1 if p.gripper_open else 0}


def _pose_from_json(obj: Any, *, where: str) -> Pose7:
    if not isinstance(obj, dict):
        raise DatasetError(f"action must be an object, got {type(obj).__name__}", field=where)
    for key in ("pos", "rpy", "gripper_open"):
        if key not in obj:
            raise DatasetError(f"action missing key {key!r}", field=where)
    return Pose7(
        position=_vec3(obj["pos"], field_name=f"{where}.pos"),
        rpy=_vec3(obj["rpy"], field_name=f"{where}.rpy"),
        gripper_open=bool(obj["gripper_open"]),
    )


def demo_to_json(demo: Demonstration) -> dict:
    steps = []
    for obs, act in zip(demo.observations, demo.actions):
        steps.append(
            {
                "t": obs.timestep,
                "rgb": {
                    "w": obs.width,
                    "h": obs.height,
                    "data_b64": base64.b64encode(obs.rgb).decode("ascii"),
                },
                "joint_vel": list(obs.joint_velocities),
                "gripper_open": 1 if obs.gripper_open else 0,
                "action": _pose_to_json(act),
            }
        )
    return {
        "id": demo.id,
        "task": demo.task_name,
        "language": demo.language,
        "objects": [{"name": o.name, "center": list(o.center_xyz)} for o in demo.objects],
        "steps": steps,
    }


def demo_from_json(obj: Any, *, file: str = "", line: int = 0) -> Demonstration:
    def fail(message: str, fieldname: str) -> DatasetError:
        return DatasetError(message, file=file, line=line, field=fieldname)

    if not isinstance(obj, dict):
        raise fail(f"episode must be a JSON object, got {type(obj).__name__}", "")
    for key in ("id", "task", "language", "objects", "steps"):
        if key not in obj:
            raise fail(f"episode missing key {key!r}", key)

    objects = []
    for i, rec in enumerate(obj["objects"]):
        if not isinstance(rec, dict) or "name" not in rec or "center" not in rec:
            raise fail(f"object #{i} must have name and center", f"objects[{i}]")
        try:
            objects.append(ObjectRecord(rec["name"], _vec3(rec["center"], field_name="center")))
        except DatasetError as exc:
            raise fail(str(exc), f"objects[{i}]") from exc

    observations = []
    actions = []
    for i, step in enumerate(obj["steps"]):
        where = f"steps[{i}]"
        if not isinstance(step, dict):
            raise fail("step must be a JSON object", where)
        for key in ("t", "rgb", "joint_vel", "gripper_open", "action"):
            if key not in step:
                raise fail(f"step missing key {key!r}", f"{where}.{key}")
        rgb = step["rgb"]
        if not isinstance(rgb, dict) or not {"w", "h", "data_b64"} <= set(rgb):
            raise fail("rgb must have w, h, data_b64", f"{where}.rgb")
        try:
            buf = base64.b64decode(rgb["data_b64"], validate=True)
        except (binascii.Error, ValueError) as exc:
            raise fail(f"rgb data is not valid base64: {exc}", f"{where}.rgb.data_b64") from exc
        vel = step["joint_vel"]
        if not isinstance(vel, list) or not vel:
            raise fail("joint_vel must be a non-empty list", f"{where}.joint_vel")
        try:
            vel_t = tuple(float(v) for v in vel)
        except (TypeError, ValueError) as exc:
            raise fail(f"non-numeric joint velocity in {vel!r}", f"{where}.joint_vel") from exc
        if any(not math.isfinite(v) for v in vel_t):
            raise fail("joint velocities must be finite", f"{where}.joint_vel")
        try:
            observations.append(
                Observation(
                    width=int(rgb["w"]),
                    height=int(rgb["h"]),
                    rgb=buf,
                    joint_velocities=vel_t,
                    gripper_open=bool(step["gripper_open"]),
                    timestep=int(step["t"]),
                )
            )
            actions.append(_pose_from_json(step["action"], where=f"{where}.action"))
        except DatasetError as exc:
            raise fail(str(exc), where) from exc

    try:
        return Demonstration(
            id=str(obj["id"]),
            task_name=str(obj["task"]),
            language=str(obj["language"]),
            objects=tuple(objects),
            observations=tuple(observations),
            actions=tuple(actions),
        )
    except DatasetError as exc:
        raise fail(str(exc), "") from exc


def save_dataset(dataset: Dataset, root: str | Path) -> None:
    """Write manifest.json plus one <task>.jsonl per task under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "workspace": {
            "min": list(dataset.workspace.min_xyz),
            "max": list(dataset.workspace.max_xyz),
            "grid": dataset.workspace.grid_resolution,
        },
        "tasks": list(dataset.tasks),
        # recorded so prompt construction and parsing agree on polarity
        "gripper": {"open": 1, "closed": 0},
    }
    if dataset.sim_params:
        manifest["sim"] = dict(dataset.sim_params)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for task in dataset.tasks:
        path = root / f"{task}.jsonl"
        with path.open("w") as fh:
            for demo in dataset.by_task(task):
                fh.write(json.dumps(demo_to_json(demo), sort_keys=True) + "\n")


def load_dataset(root: str | Path) -> Dataset:
    """Load and validate a dataset directory.

    Demonstrations are returned sorted by id, so the result is independent of
    file enumeration order.  Any schema violation raises DatasetError naming
    the file, line and field.
    """
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError("manifest.json not found", file=str(manifest_path))
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest is not valid JSON: {exc}", file=str(manifest_path)) from exc
    ws_obj = manifest.get("workspace")
    if not isinstance(ws_obj, dict) or not {"min", "max", "grid"} <= set(ws_obj):
        raise DatasetError("manifest workspace must have min, max, grid", file=str(manifest_path), field="workspace")
    workspace = WorkspaceBounds(
        min_xyz=_vec3(ws_obj["min"], field_name="workspace.min"),
        max_xyz=_vec3(ws_obj["max"], field_name="workspace.max"),
        grid_resolution=int(ws_obj["grid"]),
    )
    tasks = manifest.get("tasks")
    if not isinstance(tasks, list) or not all(isinstance(t, str) for t in tasks):
        raise DatasetError("manifest tasks must be a list of names", file=str(manifest_path), field="tasks")

    demos: list[Demonstration] = []
    seen_ids: dict[str, str] = {}
    for task in tasks:
        path = root / f"{task}.jsonl"
        if not path.is_file():
            raise DatasetError(f"missing episode file for task {task!r}", file=str(path))
        with path.open() as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"invalid JSON: {exc}", file=str(path), line=lineno) from exc
                demo = demo_from_json(obj, file=str(path), line=lineno)
                if demo.task_name != task:
                    raise DatasetError(
                        f"episode task {demo.task_name!r} does not match file task {task!r}",
                        file=str(path), line=lineno, field="task",
                    )
                if demo.id in seen_ids:
                    raise DatasetError(
                        f"duplicate demo id {demo.id!r} (first seen in {seen_ids[demo.id]})",
                        file=str(path), line=lineno, field="id",
                    )
                seen_ids[demo.id] = str(path)
                demos.append(demo)

    demos.sort(key=lambda d: d.id)
    return Dataset(
        workspace=workspace,
        tasks=tuple(tasks),
        demos=tuple(demos),
        sim_params=dict(manifest.get("sim", {})),
    )


def dataset_counts(dataset: Dataset) -> dict[str, int]:
    """Episode count per task, in manifest order."""
    counts = {task: 0 for task in dataset.tasks}
    for demo in dataset.demos:
        counts[demo.task_name] = counts.get(demo.task_name, 0) + 1
    return counts


def iter_steps(demo: Demonstration) -> Iterable[tuple[Observation, Pose7]]:
    return zip(demo.observations, demo.actions)
