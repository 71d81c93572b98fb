"""The built-in task library: 8 seen, 4 level-1 unseen, 3 level-2 unseen.

Level-1 unseen tasks share an object noun or motion verb with some seen task;
level-2 tasks share neither (enforced by vocabulary_audit).  Every unseen
task is geometrically analogous to one seen family (same grasp anchors, same
goal region), so copying a well-chosen seen demonstration solves it, while a
random demonstration almost never does: that is what makes the selection
ablation informative.

Scene sampling draws the movable's anchor plus a +-5 mm jitter from the
episode seed; grasp anchors across the library stay at least two grasp radii
apart so a demonstration aimed at the wrong anchor never grabs anything.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .demo_store import Pose7
from .errors import SimError
from .sim import (
    HOME_POSE,
    REGION_TOL,
    TABLE_Z,
    Region,
    SceneObject,
    SceneState,
    TaskLevel,
    TaskSpec,
    box_region,
)

APPROACH_Z = 0.16
GRASP_Z = 0.03
LIFT_Z = 0.18
RELEASE_Z = 0.05
STACK_RELEASE_Z = 0.06
SLIDE_Z = 0.03
RPY = (0.0, 180.0, 0.0)
JITTER = 0.005

PALETTE: dict[str, tuple[int, int, int]] = {
    "button": (220, 40, 40),
    "lever": (230, 60, 52),
    "switch": (220, 40, 40),
    "red block": (225, 35, 45),
    "green block": (45, 200, 60),
    "cup": (45, 205, 225),
    "ring": (55, 195, 215),
    "rack": (150, 60, 205),
    "peg": (140, 68, 198),
    "block": (50, 90, 230),
    "brick": (58, 95, 226),
    "rubbish": (65, 100, 222),
    "bin": (205, 185, 40),
    "shelf": (198, 190, 52),
    "drawer": (150, 95, 45),
    "basket": (160, 100, 52),
    "item": (225, 60, 190),
    "ball": (215, 70, 182),
    "lid": (185, 185, 195),
    "pot": (95, 95, 105),
    "zone": (240, 150, 40),
    "open zone": (235, 235, 235),
}

XY = tuple[float, float]

# grasp anchors per family; all pairwise distances >= 0.10 m across the library
ANCHORS_PUSH: tuple[XY, ...] = ((0.24, -0.14), (0.38, -0.28), (0.52, -0.14))
ANCHORS_STACK: tuple[XY, ...] = ((0.24, 0.14), (0.38, 0.28), (0.52, 0.14))
ANCHORS_BIN: tuple[XY, ...] = ((0.24, 0.42), (0.38, 0.42), (0.52, 0.42))
ANCHORS_DRAWER: tuple[XY, ...] = ((0.10, -0.42), (0.24, -0.42), (0.38, -0.42))
ANCHORS_LID: tuple[XY, ...] = ((0.66, -0.28), (0.80, -0.28), (0.66, -0.42))
ANCHORS_PLACE: tuple[XY, ...] = ((0.10, 0.0), (0.10, 0.14), (0.10, 0.28))
ANCHORS_SLIDE: tuple[XY, ...] = ((0.66, 0.0), (0.80, 0.0), (0.80, 0.14))
ANCHORS_ITEM: tuple[XY, ...] = ((0.52, 0.0), (0.52, -0.28), (0.66, -0.14))

STACK_BASE: XY = (0.66, 0.14)
BIN_CENTER: XY = (0.80, 0.42)
DRAWER_PULL_DX = 0.14
POT_CENTER: XY = (0.80, -0.42)
RACK_CENTER: XY = (0.10, 0.42)
ZONE_CENTER: XY = (0.90, 0.0)
ITEM_DRAWER_CENTER: XY = (0.38, 0.0)


def _pose(x: float, y: float, z: float, open_: bool) -> Pose7:
    return Pose7(position=(x, y, z), rpy=RPY, gripper_open=open_)


def _color(name: str) -> tuple[int, int, int]:
    from .sim import color_for

    return PALETTE.get(name, color_for(name))


def _sample_movable(rng: np.random.Generator, anchors: Sequence[XY]) -> tuple[float, float, float]:
    ax, ay = anchors[int(rng.integers(len(anchors)))]
    jx, jy = rng.uniform(-JITTER, JITTER, size=2)
    return (ax + jx, ay + jy, TABLE_Z)


SceneBuilder = Callable[[np.random.Generator], tuple[dict[str, SceneObject], dict[str, Region]]]


def _make_sampler(build: SceneBuilder) -> Callable[[int], SceneState]:
    def sampler(seed: int) -> SceneState:
        rng = np.random.default_rng(seed)
        objects, receptacles = build(rng)
        return SceneState(objects=objects, gripper_pose=HOME_POSE, receptacles=receptacles, rng=rng)

    return sampler


def _dist_xy(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


# -- predicate factories


def _pressed(obj_name: str) -> Callable[[SceneState], bool]:
    def pred(scene: SceneState) -> bool:
        obj = scene.objects[obj_name]
        grip = scene.gripper_pose
        return (
            not obj.attached
            and not grip.gripper_open
            and _dist_xy(grip.position, obj.center) <= REGION_TOL
            and grip.position[2] <= 0.06
        )

    return pred


def _in_region(obj_name: str, region_name: str) -> Callable[[SceneState], bool]:
    def pred(scene: SceneState) -> bool:
        obj = scene.objects[obj_name]
        return not obj.attached and scene.receptacles[region_name].contains(obj.center)

    return pred


def _stacked(top_name: str, base_name: str) -> Callable[[SceneState], bool]:
    def pred(scene: SceneState) -> bool:
        top, base = scene.objects[top_name], scene.objects[base_name]
        return (
            not top.attached
            and _dist_xy(top.center, base.center) <= REGION_TOL
            and top.center[2] >= base.center[2] + 0.01
        )

    return pred


# -- policy factories (waypoint lists; gripper flags flip exactly at waypoints)


def _press_policy(obj_name: str) -> Callable[[SceneState], list[Pose7]]:
    def policy(scene: SceneState) -> list[Pose7]:
        x, y, _ = scene.objects[obj_name].center
        return [_pose(x, y, APPROACH_Z, False), _pose(x, y, GRASP_Z, False)]

    return policy


def _pick_place_policy(
    obj_name: str, target_xy: Callable[[SceneState], XY], release_z: float = RELEASE_Z
) -> Callable[[SceneState], list[Pose7]]:
    def policy(scene: SceneState) -> list[Pose7]:
        x, y, _ = scene.objects[obj_name].center
        tx, ty = target_xy(scene)
        return [
            _pose(x, y, APPROACH_Z, True),
            _pose(x, y, GRASP_Z, False),
            _pose(x, y, LIFT_Z, False),
            _pose(tx, ty, LIFT_Z, False),
            _pose(tx, ty, release_z, True),
        ]

    return policy


def _drag_policy(obj_name: str, target_xy: Callable[[SceneState], XY]) -> Callable[[SceneState], list[Pose7]]:
    def policy(scene: SceneState) -> list[Pose7]:
        x, y, _ = scene.objects[obj_name].center
        tx, ty = target_xy(scene)
        return [
            _pose(x, y, APPROACH_Z, True),
            _pose(x, y, SLIDE_Z, False),
            _pose(tx, ty, SLIDE_Z, False),
            _pose(tx, ty, SLIDE_Z, True),
        ]

    return policy


# -- scene builders


def _lone_object_scene(obj_name: str, anchors: Sequence[XY]) -> SceneBuilder:
    def build(rng: np.random.Generator):
        return {obj_name: SceneObject(_sample_movable(rng, anchors), _color(obj_name))}, {}

    return build


def _object_plus_region_scene(obj_name: str, anchors: Sequence[XY], region_name: str, center: XY) -> SceneBuilder:
    def build(rng: np.random.Generator):
        objects = {obj_name: SceneObject(_sample_movable(rng, anchors), _color(obj_name))}
        regions = {region_name: box_region(center[0], center[1], _color(region_name))}
        return objects, regions

    return build


def _stack_scene(top_name: str, anchors: Sequence[XY], base_name: str, base_xy: XY) -> SceneBuilder:
    def build(rng: np.random.Generator):
        objects = {
            top_name: SceneObject(_sample_movable(rng, anchors), _color(top_name)),
            base_name: SceneObject((base_xy[0], base_xy[1], TABLE_Z), _color(base_name)),
        }
        return objects, {}

    return build


def _drawer_scene(rng: np.random.Generator):
    center = _sample_movable(rng, ANCHORS_DRAWER)
    objects = {"drawer": SceneObject(center, _color("drawer"))}
    # the pull target travels with the sampled drawer position
    regions = {"open zone": box_region(center[0] + DRAWER_PULL_DX, center[1], _color("open zone"))}
    return objects, regions


def _drawer_target(scene: SceneState) -> XY:
    cx, cy, _ = scene.receptacles["open zone"].center
    return (cx, cy)


def _fixed_target(xy: XY) -> Callable[[SceneState], XY]:
    return lambda scene: xy


def _base_target(base_name: str) -> Callable[[SceneState], XY]:
    def target(scene: SceneState) -> XY:
        bx, by, _ = scene.objects[base_name].center
        return (bx, by)

    return target


def _task(
    name: str,
    level: TaskLevel,
    language: str,
    verb: str,
    nouns: Sequence[str],
    builder: SceneBuilder,
    predicate: Callable[[SceneState], bool],
    policy: Callable[[SceneState], list[Pose7]] | None,
    anchors: Sequence[XY],
) -> TaskSpec:
    return TaskSpec(
        name=name,
        level=level,
        language=language,
        motion_verb=verb,
        object_nouns=frozenset(nouns),
        scene_sampler=_make_sampler(builder),
        success_predicate=predicate,
        scripted_policy=policy if level == TaskLevel.SEEN else None,
        grasp_anchors=tuple(anchors),
    )


def build_task_library() -> dict[str, TaskSpec]:
    seen = [
        _task(
            "push_button", TaskLevel.SEEN, "push the button", "push", ["button"],
            _lone_object_scene("button", ANCHORS_PUSH),
            _pressed("button"), _press_policy("button"), ANCHORS_PUSH,
        ),
        _task(
            "stack_block", TaskLevel.SEEN, "stack the red block on the green block", "stack", ["block"],
            _stack_scene("red block", ANCHORS_STACK, "green block", STACK_BASE),
            _stacked("red block", "green block"),
            _pick_place_policy("red block", _base_target("green block"), STACK_RELEASE_Z),
            ANCHORS_STACK,
        ),
        _task(
            "put_block_in_bin", TaskLevel.SEEN, "put the block in the bin", "put", ["block", "bin"],
            _object_plus_region_scene("block", ANCHORS_BIN, "bin", BIN_CENTER),
            _in_region("block", "bin"),
            _pick_place_policy("block", _fixed_target(BIN_CENTER)),
            ANCHORS_BIN,
        ),
        _task(
            "open_drawer", TaskLevel.SEEN, "open the drawer", "open", ["drawer"],
            _drawer_scene,
            _in_region("drawer", "open zone"),
            _drag_policy("drawer", _drawer_target),
            ANCHORS_DRAWER,
        ),
        _task(
            "close_lid", TaskLevel.SEEN, "close the lid on the pot", "close", ["lid", "pot"],
            _object_plus_region_scene("lid", ANCHORS_LID, "pot", POT_CENTER),
            _in_region("lid", "pot"),
            _pick_place_policy("lid", _fixed_target(POT_CENTER)),
            ANCHORS_LID,
        ),
        _task(
            "place_cup_on_rack", TaskLevel.SEEN, "place the cup on the rack", "place", ["cup", "rack"],
            _object_plus_region_scene("cup", ANCHORS_PLACE, "rack", RACK_CENTER),
            _in_region("cup", "rack"),
            _pick_place_policy("cup", _fixed_target(RACK_CENTER)),
            ANCHORS_PLACE,
        ),
        _task(
            "slide_block_to_zone", TaskLevel.SEEN, "slide the block to the zone", "slide", ["block", "zone"],
            _object_plus_region_scene("block", ANCHORS_SLIDE, "zone", ZONE_CENTER),
            _in_region("block", "zone"),
            _drag_policy("block", _fixed_target(ZONE_CENTER)),
            ANCHORS_SLIDE,
        ),
        _task(
            "put_item_in_drawer", TaskLevel.SEEN, "put the item in the drawer", "put", ["item", "drawer"],
            _object_plus_region_scene("item", ANCHORS_ITEM, "drawer", ITEM_DRAWER_CENTER),
            _in_region("item", "drawer"),
            _pick_place_policy("item", _fixed_target(ITEM_DRAWER_CENTER)),
            ANCHORS_ITEM,
        ),
    ]
    level1 = [
        _task(
            # level-1 via the shared verb; "brick" keeps the language clear of
            # the three seen tasks that all mention a block
            "put_block_on_shelf", TaskLevel.UNSEEN_L1, "put the brick on the shelf", "put", ["brick", "shelf"],
            _object_plus_region_scene("brick", ANCHORS_BIN, "shelf", BIN_CENTER),
            _in_region("brick", "shelf"),
            _pick_place_policy("brick", _fixed_target(BIN_CENTER)),
            ANCHORS_BIN,
        ),
        _task(
            "push_lever", TaskLevel.UNSEEN_L1, "push the lever", "push", ["lever"],
            _lone_object_scene("lever", ANCHORS_PUSH),
            _pressed("lever"), _press_policy("lever"), ANCHORS_PUSH,
        ),
        _task(
            "stack_cup", TaskLevel.UNSEEN_L1, "stack the cup on the green block", "stack", ["cup", "block"],
            _stack_scene("cup", ANCHORS_STACK, "green block", STACK_BASE),
            _stacked("cup", "green block"),
            _pick_place_policy("cup", _base_target("green block"), STACK_RELEASE_Z),
            ANCHORS_STACK,
        ),
        _task(
            "put_rubbish_in_bin", TaskLevel.UNSEEN_L1, "put the rubbish in the bin", "put", ["rubbish", "bin"],
            _object_plus_region_scene("rubbish", ANCHORS_BIN, "bin", BIN_CENTER),
            _in_region("rubbish", "bin"),
            _pick_place_policy("rubbish", _fixed_target(BIN_CENTER)),
            ANCHORS_BIN,
        ),
    ]
    level2 = [
        _task(
            "hang_ring_on_peg", TaskLevel.UNSEEN_L2, "hang the ring on the peg", "hang", ["ring", "peg"],
            _object_plus_region_scene("ring", ANCHORS_PLACE, "peg", RACK_CENTER),
            _in_region("ring", "peg"),
            _pick_place_policy("ring", _fixed_target(RACK_CENTER)),
            ANCHORS_PLACE,
        ),
        _task(
            "toss_ball_into_basket", TaskLevel.UNSEEN_L2, "toss the ball into the basket", "toss", ["ball", "basket"],
            _object_plus_region_scene("ball", ANCHORS_ITEM, "basket", ITEM_DRAWER_CENTER),
            _in_region("ball", "basket"),
            _pick_place_policy("ball", _fixed_target(ITEM_DRAWER_CENTER)),
            ANCHORS_ITEM,
        ),
        _task(
            "press_switch", TaskLevel.UNSEEN_L2, "press the switch", "press", ["switch"],
            _lone_object_scene("switch", ANCHORS_PUSH),
            _pressed("switch"), _press_policy("switch"), ANCHORS_PUSH,
        ),
    ]
    return {t.name: t for t in seen + level1 + level2}


TASK_LIBRARY: dict[str, TaskSpec] = build_task_library()


def seen_tasks() -> list[TaskSpec]:
    return [t for t in TASK_LIBRARY.values() if t.level == TaskLevel.SEEN]


def unseen_tasks() -> list[TaskSpec]:
    return [t for t in TASK_LIBRARY.values() if t.level != TaskLevel.SEEN]


def tasks_by_names(names: Sequence[str]) -> list[TaskSpec]:
    out = []
    for name in names:
        if name not in TASK_LIBRARY:
            raise SimError(f"unknown task {name!r}; known: {sorted(TASK_LIBRARY)}")
        out.append(TASK_LIBRARY[name])
    return out


def resolve_task_set(spec: str) -> list[TaskSpec]:
    """'seen' | 'unseen' | 'all' | comma-separated task names."""
    if spec == "seen":
        return seen_tasks()
    if spec == "unseen":
        return unseen_tasks()
    if spec == "all":
        return list(TASK_LIBRARY.values())
    return tasks_by_names([s.strip() for s in spec.split(",") if s.strip()])


def vocabulary_audit(tasks: Sequence[TaskSpec] | None = None) -> None:
    """Enforce the level semantics over declared verbs and nouns.

    Level-1 tasks must share a motion verb or an object noun with some seen
    task; level-2 tasks must share neither.  Raises SimError on violation.
    """
    tasks = list(tasks) if tasks is not None else list(TASK_LIBRARY.values())
    seen_verbs = {t.motion_verb for t in tasks if t.level == TaskLevel.SEEN}
    seen_nouns: set[str] = set()
    for t in tasks:
        if t.level == TaskLevel.SEEN:
            seen_nouns |= set(t.object_nouns)
    for t in tasks:
        shares = t.motion_verb in seen_verbs or bool(set(t.object_nouns) & seen_nouns)
        if t.level == TaskLevel.UNSEEN_L1 and not shares:
            raise SimError(f"level-1 task {t.name!r} shares no verb or noun with seen tasks")
        if t.level == TaskLevel.UNSEEN_L2 and shares:
            raise SimError(f"level-2 task {t.name!r} overlaps seen vocabulary")


def oracle_script(bundle, context) -> str:
    """Scripted-backend hook: replay the task's own policy on the live scene.

    Only works for tasks that ship a policy (the seen set); used as the
    upper-bound oracle when benchmarking.
    """
    from .discretize import quantize_pose
    from .prompting import textualize_action
    from .sim import WORKSPACE

    if context is None or not context.task_name:
        raise SimError("oracle backend needs an episode context with a task name")
    task = tasks_by_names([context.task_name])[0]
    if task.scripted_policy is None:
        raise SimError(f"task {task.name!r} has no scripted policy")
    waypoints = task.scripted_policy(context.scene)
    lines = [textualize_action(quantize_pose(p, WORKSPACE)) for p in waypoints]
    return "\n".join(lines)


def oracle_backend():
    """A gateway backend that answers with the task's scripted policy."""
    from .gateway import ScriptedBackend

    return ScriptedBackend(oracle_script)
