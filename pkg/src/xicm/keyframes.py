"""Key-action extraction from dense trajectories.

A timestep t >= 1 is a keyframe when the commanded gripper flag toggles,
when all joint velocities are near zero (the arm has settled), or when it is
the final step.  t = 0 is never a keyframe: it is the start state, not an
action worth replaying.  Consecutive keyframes with an identical pose are
coalesced down to the earliest one.
"""

from __future__ import annotations

from dataclasses import dataclass

from .demo_store import Demonstration, Pose7

DEFAULT_VELOCITY_EPSILON = 0.01  # rad/s


@dataclass(frozen=True)
class KeyActionSequence:
    """Ordered key actions for one demonstration."""

    demo_id: str
    keyframes: tuple[tuple[int, Pose7], ...]

    def __post_init__(self) -> None:
        prev = -1
        for t, _ in self.keyframes:
            if t <= prev:
                raise ValueError(f"keyframe timesteps must be strictly increasing in {self.demo_id}")
            prev = t

    @property
    def timesteps(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.keyframes)

    @property
    def actions(self) -> tuple[Pose7, ...]:
        return tuple(a for _, a in self.keyframes)


def keyframe_timesteps(demo: Demonstration, velocity_epsilon: float = DEFAULT_VELOCITY_EPSILON) -> list[int]:
    """Raw keyframe timesteps before duplicate coalescing."""
    out = []
    last = len(demo.actions) - 1
    for t in range(1, last + 1):
        toggled = demo.actions[t].gripper_open != demo.actions[t - 1].gripper_open
        settled = max(abs(v) for v in demo.observations[t].joint_velocities) < velocity_epsilon
        if toggled or settled or t == last:
            out.append(t)
    return out


def extract_keyframes(demo: Demonstration, velocity_epsilon: float = DEFAULT_VELOCITY_EPSILON) -> KeyActionSequence:
    """Extract the key-action sequence of a demonstration.

    The final trajectory step is always included, so the result is never
    empty.  Deterministic: same demo and epsilon give the same sequence.
    """
    frames: list[tuple[int, Pose7]] = []
    for t in keyframe_timesteps(demo, velocity_epsilon):
        action = demo.actions[t]
        if frames and frames[-1][1] == action:
            continue  # duplicate of the previous keyframe; keep the earliest
        frames.append((t, action))
    return KeyActionSequence(demo_id=demo.id, keyframes=tuple(frames))
