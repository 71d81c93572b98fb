"""Deterministic kinematic tabletop simulator.

No physics: the gripper teleports through dequantized waypoints.  An
open-to-close transition attaches the nearest movable object within the grasp
radius; close-to-open detaches it where it stands.  Regions are axis-aligned
boxes; success predicates are pure functions of the final scene.  Rendering
is a flat-color top-down blob image so pooled visual features carry real
signal (object identity and placement).
"""

from __future__ import annotations

import enum
import hashlib
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .demo_store import Demonstration, ObjectRecord, Observation, Pose7, WorkspaceBounds
from .discretize import QuantizationRangeError, QuantizedPose, dequantize_pose
from .errors import NoActionsFound, SimError
from .keyframes import DEFAULT_VELOCITY_EPSILON

Vec3 = tuple[float, float, float]

WORKSPACE = WorkspaceBounds(min_xyz=(0.0, -0.5, 0.0), max_xyz=(1.0, 0.5, 0.5), grid_resolution=100)
GRASP_RADIUS = 0.05  # m
REGION_TOL = 0.04  # m, region half-extent in x/y
TABLE_Z = 0.02  # resting height of object centers
HOME_POSE = Pose7(position=(0.5, 0.0, 0.35), rpy=(0.0, 180.0, 0.0), gripper_open=True)
DEFAULT_IMAGE_SIZE = 48
BACKGROUND_RGB = (26, 26, 26)
JOINT_COUNT = 7

FAIL_NO_ACTIONS = "no_actions"
FAIL_OUT_OF_WORKSPACE = "out_of_workspace"
FAIL_PREDICATE = "predicate_false"
FAIL_PARSE = "parse_failure"


def stable_seed(*parts: object) -> int:
    """Platform-stable 63-bit seed from any mix of parts."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def color_for(name: str) -> tuple[int, int, int]:
    """Fallback flat color for names without a palette entry."""
    h = zlib.crc32(name.encode("utf-8"))
    return (64 + (h & 0x7F), 64 + ((h >> 7) & 0x7F), 64 + ((h >> 14) & 0x7F))


@dataclass
class SceneObject:
    """A movable entity; tracks the gripper while attached."""

    center: Vec3
    color: tuple[int, int, int]
    attached: bool = False


@dataclass(frozen=True)
class Region:
    """Axis-aligned box with a display color."""

    lo: Vec3
    hi: Vec3
    color: tuple[int, int, int]

    def contains(self, p: Vec3) -> bool:
        return all(lo <= v <= hi for v, lo, hi in zip(p, self.lo, self.hi))

    @property
    def center(self) -> Vec3:
        return tuple((lo + hi) / 2.0 for lo, hi in zip(self.lo, self.hi))  # type: ignore[return-value]


def box_region(cx: float, cy: float, color: tuple[int, int, int],
               half_xy: float = REGION_TOL, z_lo: float = 0.0, z_hi: float = 0.12) -> Region:
    return Region(lo=(cx - half_xy, cy - half_xy, z_lo), hi=(cx + half_xy, cy + half_xy, z_hi), color=color)


@dataclass
class SceneState:
    """Mutable world state: movables, gripper, regions, private rng stream."""

    objects: dict[str, SceneObject]
    gripper_pose: Pose7
    receptacles: dict[str, Region]
    rng: np.random.Generator

    def clone(self) -> "SceneState":
        return SceneState(
            objects={k: SceneObject(v.center, v.color, v.attached) for k, v in self.objects.items()},
            gripper_pose=self.gripper_pose,
            receptacles=dict(self.receptacles),
            rng=self.rng,
        )

    def attached_name(self) -> str | None:
        for name, obj in self.objects.items():
            if obj.attached:
                return name
        return None


class TaskLevel(enum.Enum):
    SEEN = "seen"
    UNSEEN_L1 = "unseen_level1"
    UNSEEN_L2 = "unseen_level2"


@dataclass(frozen=True)
class TaskSpec:
    """A task: how to sample scenes, judge success, and (seen only) solve it."""

    name: str
    level: TaskLevel
    language: str
    motion_verb: str
    object_nouns: frozenset[str]
    scene_sampler: Callable[[int], SceneState]
    success_predicate: Callable[[SceneState], bool]
    scripted_policy: Callable[[SceneState], list[Pose7]] | None = None
    grasp_anchors: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class RolloutResult:
    task_name: str
    episode_seed: int
    success: bool
    steps_executed: int
    failure_reason: str | None


# ---------------------------------------------------------------------------
# rendering


def render_scene(scene: SceneState, image_size: int = DEFAULT_IMAGE_SIZE) -> bytes:
    """Top-down flat-color render: regions first, movables on top."""
    size = int(image_size)
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:, :] = BACKGROUND_RGB
    ext_x = WORKSPACE.max_xyz[0] - WORKSPACE.min_xyz[0]
    ext_y = WORKSPACE.max_xyz[1] - WORKSPACE.min_xyz[1]

    def to_px(x: float, y: float) -> tuple[int, int]:
        col = int(round((x - WORKSPACE.min_xyz[0]) / ext_x * (size - 1)))
        row = int(round((y - WORKSPACE.min_xyz[1]) / ext_y * (size - 1)))
        return row, col

    def fill(row: int, col: int, half: int, color: tuple[int, int, int]) -> None:
        r0, r1 = max(row - half, 0), min(row + half + 1, size)
        c0, c1 = max(col - half, 0), min(col + half + 1, size)
        if r0 < r1 and c0 < c1:
            img[r0:r1, c0:c1] = color

    for region in scene.receptacles.values():
        cx, cy, _ = region.center
        row, col = to_px(cx, cy)
        half_m = (region.hi[0] - region.lo[0]) / 2.0
        half = max(3, int(round(half_m / ext_x * size)))
        fill(row, col, half, region.color)
    obj_half = max(2, size // 16)
    for obj in scene.objects.values():
        row, col = to_px(obj.center[0], obj.center[1])
        fill(row, col, obj_half, obj.color)
    return img.tobytes()


def make_observation(
    scene: SceneState,
    timestep: int,
    joint_velocities: tuple[float, ...] | None = None,
    image_size: int = DEFAULT_IMAGE_SIZE,
) -> Observation:
    vel = joint_velocities if joint_velocities is not None else (0.0,) * JOINT_COUNT
    return Observation(
        width=image_size,
        height=image_size,
        rgb=render_scene(scene, image_size),
        joint_velocities=tuple(vel),
        gripper_open=scene.gripper_pose.gripper_open,
        timestep=timestep,
    )


def object_records(scene: SceneState) -> tuple[ObjectRecord, ...]:
    """Ground-truth entity list shown to the model: movables, then regions."""
    records = [ObjectRecord(name, obj.center) for name, obj in scene.objects.items()]
    records.extend(ObjectRecord(name, region.center) for name, region in scene.receptacles.items())
    return tuple(records)


# ---------------------------------------------------------------------------
# kinematics


def _dist3(a: Vec3, b: Vec3) -> float:
    return float(np.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))))


def move_gripper(scene: SceneState, position: Vec3, rpy: Vec3, gripper_open: bool) -> None:
    """Teleport the gripper; the attached object (if any) tracks it.
    Does not process attach/detach transitions."""
    scene.gripper_pose = Pose7(position=position, rpy=rpy, gripper_open=gripper_open)
    name = scene.attached_name()
    if name is not None:
        scene.objects[name].center = scene.gripper_pose.position


def apply_gripper_transition(scene: SceneState, was_open: bool, grasp_radius: float = GRASP_RADIUS) -> None:
    """Attach on open->close (nearest movable within radius), detach on close->open."""
    now_open = scene.gripper_pose.gripper_open
    if was_open == now_open:
        return
    if now_open:
        for obj in scene.objects.values():
            obj.attached = False
        return
    if scene.attached_name() is not None:
        return  # at most one object attached
    best_name, best_dist = None, grasp_radius
    for name, obj in scene.objects.items():
        d = _dist3(obj.center, scene.gripper_pose.position)
        if d <= best_dist:
            best_name, best_dist = name, d
    if best_name is not None:
        scene.objects[best_name].attached = True
        scene.objects[best_name].center = scene.gripper_pose.position


def step_to_waypoint(scene: SceneState, pose: Pose7, grasp_radius: float = GRASP_RADIUS) -> None:
    """Move to a waypoint, then process any gripper transition there."""
    was_open = scene.gripper_pose.gripper_open
    move_gripper(scene, pose.position, pose.rpy, pose.gripper_open)
    apply_gripper_transition(scene, was_open, grasp_radius)


def execute_actions(
    scene: SceneState,
    actions: list[QuantizedPose] | tuple[QuantizedPose, ...],
    ws: WorkspaceBounds = WORKSPACE,
    success_predicate: Callable[[SceneState], bool] | None = None,
    *,
    grasp_radius: float = GRASP_RADIUS,
    task_name: str = "",
    episode_seed: int = 0,
) -> RolloutResult:
    """Dequantize and execute a key-action sequence; judge the final scene.

    Mutates ``scene``.  Collision-free by construction.
    """
    if not actions:
        return RolloutResult(task_name, episode_seed, False, 0, FAIL_NO_ACTIONS)
    steps = 0
    for q in actions:
        try:
            pose = dequantize_pose(q, ws)
        except QuantizationRangeError:
            return RolloutResult(task_name, episode_seed, False, steps, FAIL_OUT_OF_WORKSPACE)
        step_to_waypoint(scene, pose, grasp_radius)
        steps += 1
    ok = bool(success_predicate(scene)) if success_predicate is not None else False
    return RolloutResult(task_name, episode_seed, ok, steps, None if ok else FAIL_PREDICATE)


# ---------------------------------------------------------------------------
# demonstration synthesis


@dataclass
class SimConfig:
    episodes_per_task: int = 20
    seed: int = 7
    image_size: int = DEFAULT_IMAGE_SIZE
    velocity_epsilon: float = DEFAULT_VELOCITY_EPSILON
    min_segment_steps: int = 2
    max_segment_steps: int = 4


def synthesize_demo(
    task: TaskSpec,
    scene: SceneState,
    rng: np.random.Generator,
    demo_id: str,
    cfg: SimConfig,
) -> Demonstration:
    """Run the scripted policy as a dense trajectory with rendered frames.

    Intermediate steps move fast (max joint speed well above the keyframe
    epsilon); waypoint steps settle near zero, and gripper flags flip exactly
    at waypoints, so key-action extraction recovers the waypoints.
    """
    if task.scripted_policy is None:
        raise SimError(f"task {task.name!r} has no scripted policy")
    records = object_records(scene)
    waypoints = task.scripted_policy(scene)
    if not waypoints:
        raise SimError(f"scripted policy for {task.name!r} produced no waypoints")
    work = scene.clone()

    observations: list[Observation] = []
    actions: list[Pose7] = []

    def moving_vel() -> tuple[float, ...]:
        return tuple(rng.uniform(cfg.velocity_epsilon * 8.0, 1.4, size=JOINT_COUNT))

    def settled_vel() -> tuple[float, ...]:
        return tuple(rng.uniform(0.0, cfg.velocity_epsilon * 0.4, size=JOINT_COUNT))

    def emit(vel: tuple[float, ...]) -> None:
        t = len(observations)
        observations.append(
            Observation(
                width=cfg.image_size,
                height=cfg.image_size,
                rgb=render_scene(work, cfg.image_size),
                joint_velocities=vel,
                gripper_open=work.gripper_pose.gripper_open,
                timestep=t,
            )
        )
        actions.append(work.gripper_pose)

    emit(moving_vel())  # t=0, home pose, already in motion
    prev = work.gripper_pose
    for wp in waypoints:
        n_mid = int(rng.integers(cfg.min_segment_steps, cfg.max_segment_steps + 1))
        for s in range(1, n_mid + 1):
            frac = s / (n_mid + 1)
            pos = tuple(p + (q - p) * frac for p, q in zip(prev.position, wp.position))
            move_gripper(work, pos, prev.rpy, prev.gripper_open)
            emit(moving_vel())
        step_to_waypoint(work, wp)
        emit(settled_vel())
        prev = wp

    if not task.success_predicate(work):
        raise SimError(f"scripted policy failed its own task {task.name!r} (demo {demo_id})")
    return Demonstration(
        id=demo_id,
        task_name=task.name,
        language=task.language,
        objects=records,
        observations=tuple(observations),
        actions=tuple(actions),
    )


def generate_seen_dataset(tasks: list[TaskSpec], cfg: SimConfig | None = None):
    """Synthesize a validated dataset of scripted demonstrations.

    Every episode is self-checked against the task's success predicate.
    Deterministic given cfg.seed.
    """
    from .demo_store import Dataset  # local to keep module import cheap

    cfg = cfg or SimConfig()
    demos = []
    for task in tasks:
        if task.scripted_policy is None:
            raise SimError(f"cannot generate demos for {task.name!r}: no scripted policy")
        for index in range(cfg.episodes_per_task):
            scene = task.scene_sampler(stable_seed(cfg.seed, task.name, index))
            traj_rng = np.random.default_rng(stable_seed(cfg.seed, task.name, index, "traj"))
            demos.append(synthesize_demo(task, scene, traj_rng, f"{task.name}-{index:04d}", cfg))
    demos.sort(key=lambda d: d.id)
    return Dataset(
        workspace=WORKSPACE,
        tasks=tuple(t.name for t in tasks),
        demos=tuple(demos),
        sim_params={
            "grasp_radius": GRASP_RADIUS,
            "region_tolerance": REGION_TOL,
            "image_size": cfg.image_size,
            "velocity_epsilon": cfg.velocity_epsilon,
        },
    )


# ---------------------------------------------------------------------------
# episodes


def run_episode(task: TaskSpec, episode_seed: int, pipeline) -> RolloutResult:
    """One zero-shot episode: sample scene, predict actions, execute, judge."""
    from .gateway import EpisodeContext

    scene = task.scene_sampler(episode_seed)
    obs0 = make_observation(scene, 0, image_size=pipeline.image_size)
    records = object_records(scene)
    context = EpisodeContext(task_name=task.name, episode_seed=episode_seed, scene=scene)
    try:
        outcome = pipeline.predict(
            task.language, records, obs0, selection_seed=episode_seed, context=context
        )
    except NoActionsFound:
        return RolloutResult(task.name, episode_seed, False, 0, FAIL_PARSE)
    return execute_actions(
        scene,
        outcome.prediction.actions,
        WORKSPACE,
        task.success_predicate,
        task_name=task.name,
        episode_seed=episode_seed,
    )
