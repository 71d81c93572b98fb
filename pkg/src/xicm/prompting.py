"""Prompt construction and action parsing.

The prompt template is frozen (see TEMPLATE_VERSION): a system preamble, then
one block per retrieved demonstration, then the query block.  Blocks are
separated by a single blank line and sorted by similarity (descending, ties
broken by demo id ascending).  A demonstration block looks like::

    Task: put the block in the bin
    Objects: block: [52, 50, 19]; bin: [80, 85, 10]
    Actions:
    [53, 57, 17, 0, 36, 53, 0]
    [80, 85, 12, 0, 36, 53, 1]

The query block is identical but stops after the ``Actions:`` line.  Parsing
accepts any text and recovers every 7-integer bracket group in order of
appearance; out-of-range components are clamped so near-miss generations
still execute.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .discretize import ANGLE_BINS, QuantizedObject, QuantizedPose
from .errors import NoActionsFound

TEMPLATE_VERSION = 1
ARROW_TOKEN = "Actions:"
NO_OBJECTS_PLACEHOLDER = "(no objects)"

_ACTION_RE = re.compile(
    r"\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]"
)
_OBJECT_RE = re.compile(r"^\s*(.+?)\s*:\s*\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]\s*$")


def system_text(grid_resolution: int = 100) -> str:
    """The frozen system preamble, parameterized only by grid size."""
    gmax = grid_resolution - 1
    return (
        "You are controlling a robot arm on a tabletop workspace. Positions are integer "
        f"cells on a {grid_resolution}x{grid_resolution}x{grid_resolution} grid, so x, y and z each lie in 0..{gmax}. "
        f"Orientations are integer bins for roll, pitch and yaw in 0..{ANGLE_BINS - 1}, each bin spanning 5 degrees. "
        "The gripper flag is 1 when the gripper is open and 0 when it is closed.\n"
        "Each example below lists a task, the object positions on the grid, and the sequence of "
        "end-effector actions that completes the task, one action per line in the form "
        "[x, y, z, roll, pitch, yaw, gripper].\n"
        "Complete the final task: output only its action sequence, one bracketed action per line."
    )


def textualize_object(obj: QuantizedObject) -> str:
    return f"{obj.name}: [{obj.x}, {obj.y}, {obj.z}]"


def textualize_action(q: QuantizedPose) -> str:
    return f"[{q.x}, {q.y}, {q.z}, {q.roll}, {q.pitch}, {q.yaw}, {q.gripper}]"


def parse_object(text: str) -> QuantizedObject:
    """Inverse of textualize_object for a single object line."""
    m = _OBJECT_RE.match(text)
    if m is None:
        raise NoActionsFound(f"not an object line: {text!r}")
    return QuantizedObject(name=m.group(1), x=int(m.group(2)), y=int(m.group(3)), z=int(m.group(4)))


@dataclass(frozen=True)
class DemoBlock:
    """One textualized demonstration plus its retrieval score."""

    demo_id: str
    language: str
    objects: tuple[QuantizedObject, ...]
    actions: tuple[QuantizedPose, ...]
    similarity: float

    def __post_init__(self) -> None:
        if not self.actions:
            raise ValueError(f"demo block {self.demo_id} has no actions")

    def object_line(self) -> str:
        if not self.objects:
            return f"Objects: {NO_OBJECTS_PLACEHOLDER}"
        return "Objects: " + "; ".join(textualize_object(o) for o in self.objects)

    def render(self) -> str:
        lines = [f"Task: {self.language}", self.object_line(), ARROW_TOKEN]
        lines.extend(textualize_action(a) for a in self.actions)
        return "\n".join(lines)


def render_query_block(language: str, objects: tuple[QuantizedObject, ...]) -> str:
    if objects:
        object_line = "Objects: " + "; ".join(textualize_object(o) for o in objects)
    else:
        object_line = f"Objects: {NO_OBJECTS_PLACEHOLDER}"
    return "\n".join([f"Task: {language}", object_line, ARROW_TOKEN])


@dataclass(frozen=True)
class PromptBundle:
    """A fully rendered prompt plus the pieces it was built from.

    ``rendered`` is a pure function of the other fields; ``user_text`` is
    everything after the system preamble (what goes into the user message).
    """

    system: str
    blocks: tuple[DemoBlock, ...]
    query_language: str
    query_objects: tuple[QuantizedObject, ...]

    @property
    def user_text(self) -> str:
        parts = [b.render() for b in self.blocks]
        parts.append(render_query_block(self.query_language, self.query_objects))
        return "\n\n".join(parts)

    @property
    def rendered(self) -> str:
        return f"{self.system}\n\n{self.user_text}\n"


def build_prompt(
    blocks: list[DemoBlock] | tuple[DemoBlock, ...],
    query_language: str,
    query_objects: tuple[QuantizedObject, ...] | list[QuantizedObject],
    grid_resolution: int = 100,
) -> PromptBundle:
    """Assemble the prompt; block order is (similarity desc, demo id asc)."""
    ordered = tuple(sorted(blocks, key=lambda b: (-b.similarity, b.demo_id)))
    return PromptBundle(
        system=system_text(grid_resolution),
        blocks=ordered,
        query_language=query_language,
        query_objects=tuple(query_objects),
    )


@dataclass
class ActionPrediction:
    """Parsed actions from a model response."""

    actions: list[QuantizedPose]
    raw_text: str
    warnings: list[str] = field(default_factory=list)


def _clamp(value: int, lo: int, hi: int, what: str, warnings: list[str]) -> int:
    if value < lo or value > hi:
        clamped = min(max(value, lo), hi)
        warnings.append(f"{what} {value} outside [{lo}, {hi}], clamped to {clamped}")
        return clamped
    return value


def parse_prediction(text: str, grid_resolution: int = 100) -> ActionPrediction:
    """Recover every 7-integer action from free-form model output.

    Raises NoActionsFound when the text has no bracketed 7-integer group.
    """
    warnings: list[str] = []
    actions: list[QuantizedPose] = []
    gmax = grid_resolution - 1
    for m in _ACTION_RE.finditer(text):
        vals = [int(g) for g in m.groups()]
        actions.append(
            QuantizedPose(
                x=_clamp(vals[0], 0, gmax, "x", warnings),
                y=_clamp(vals[1], 0, gmax, "y", warnings),
                z=_clamp(vals[2], 0, gmax, "z", warnings),
                roll=_clamp(vals[3], 0, ANGLE_BINS - 1, "roll", warnings),
                pitch=_clamp(vals[4], 0, ANGLE_BINS - 1, "pitch", warnings),
                yaw=_clamp(vals[5], 0, ANGLE_BINS - 1, "yaw", warnings),
                gripper=_clamp(vals[6], 0, 1, "gripper", warnings),
            )
        )
    if not actions:
        raise NoActionsFound("no bracketed 7-integer action found in response")
    return ActionPrediction(actions=actions, raw_text=text, warnings=warnings)
