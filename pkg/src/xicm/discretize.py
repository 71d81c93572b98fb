"""Pose discretization onto the workspace grid.

Positions map onto an integer grid (default 100 cells per axis, half-open
cells with a closed top so every in-bounds point lands in a valid cell) and
angles onto 72 bins of 5 degrees.  Dequantization returns cell/bin centers,
so a quantize/dequantize round trip starting from integers is the identity
and starting from continuous values stays within half a cell (2.5 degrees
for angles).

Gripper encoding: 1 = open, 0 = closed (also recorded in dataset manifests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .demo_store import ObjectRecord, Pose7, WorkspaceBounds, wrap_degrees
from .errors import XicmError

ANGLE_BINS = 72
ANGLE_BIN_DEG = 360.0 / ANGLE_BINS
GRIPPER_OPEN = 1
GRIPPER_CLOSED = 0


class QuantizationRangeError(XicmError):
    """An integer grid coordinate was outside the valid range."""

    code = "quantization_range"


@dataclass(frozen=True)
class QuantizedPose:
    """A pose as 7 integers: grid xyz, angle bins, gripper flag."""

    x: int
    y: int
    z: int
    roll: int
    pitch: int
    yaw: int
    gripper: int

    def as_tuple(self) -> tuple[int, int, int, int, int, int, int]:
        return (self.x, self.y, self.z, self.roll, self.pitch, self.yaw, self.gripper)


@dataclass(frozen=True)
class QuantizedObject:
    name: str
    x: int
    y: int
    z: int

    def cell(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.z)


def quantize_position(p: tuple[float, float, float], ws: WorkspaceBounds) -> tuple[int, int, int]:
    """Map a continuous point to grid cells; out-of-bounds values clamp."""
    r = ws.grid_resolution
    out = []
    for v, lo, hi in zip(p, ws.min_xyz, ws.max_xyz):
        cell = math.floor((float(v) - lo) / (hi - lo) * r)
        out.append(min(max(cell, 0), r - 1))
    return (out[0], out[1], out[2])


def dequantize_position(cell: tuple[int, int, int], ws: WorkspaceBounds) -> tuple[float, float, float]:
    """Cell index to cell center. Raises QuantizationRangeError if out of range."""
    r = ws.grid_resolution
    out = []
    for c, lo, hi in zip(cell, ws.min_xyz, ws.max_xyz):
        c = int(c)
        if not 0 <= c < r:
            raise QuantizationRangeError(f"cell index {c} outside [0, {r - 1}]")
        out.append(lo + (c + 0.5) * (hi - lo) / r)
    return (out[0], out[1], out[2])


def quantize_angle(deg: float) -> int:
    """Degrees (any real) to a 5-degree bin in [0, 71]."""
    w = wrap_degrees(deg)
    return min(int(w // ANGLE_BIN_DEG), ANGLE_BINS - 1)


def dequantize_angle(bin_index: int) -> float:
    """Bin index to bin-center degrees."""
    b = int(bin_index)
    if not 0 <= b < ANGLE_BINS:
        raise QuantizationRangeError(f"angle bin {b} outside [0, {ANGLE_BINS - 1}]")
    return b * ANGLE_BIN_DEG + ANGLE_BIN_DEG / 2.0


def quantize_pose(pose: Pose7, ws: WorkspaceBounds) -> QuantizedPose:
    x, y, z = quantize_position(pose.position, ws)
    return QuantizedPose(
        x=x, y=y, z=z,
        roll=quantize_angle(pose.rpy[0]),
        pitch=quantize_angle(pose.rpy[1]),
        yaw=quantize_angle(pose.rpy[2]),
        gripper=GRIPPER_OPEN if pose.gripper_open else GRIPPER_CLOSED,
    )


def dequantize_pose(q: QuantizedPose, ws: WorkspaceBounds) -> Pose7:
    if q.gripper not in (GRIPPER_OPEN, GRIPPER_CLOSED):
        raise QuantizationRangeError(f"gripper flag {q.gripper} must be 0 or 1")
    return Pose7(
        position=dequantize_position((q.x, q.y, q.z), ws),
        rpy=(dequantize_angle(q.roll), dequantize_angle(q.pitch), dequantize_angle(q.yaw)),
        gripper_open=q.gripper == GRIPPER_OPEN,
    )


def quantize_object(obj: ObjectRecord, ws: WorkspaceBounds) -> QuantizedObject:
    x, y, z = quantize_position(obj.center_xyz, ws)
    return QuantizedObject(name=obj.name, x=x, y=y, z=z)
