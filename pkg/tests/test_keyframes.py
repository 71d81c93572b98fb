"""Key-action extraction: hand-traced fixture plus invariants."""

import numpy as np
import pytest

from conftest import MOVING, SETTLED, build_demo
from xicm.demo_store import Pose7
from xicm.keyframes import (
    DEFAULT_VELOCITY_EPSILON,
    KeyActionSequence,
    extract_keyframes,
    keyframe_timesteps,
)

RPY = (0.0, 180.0, 0.0)


def _pose(x: float, open_: bool) -> Pose7:
    return Pose7(position=(x, 0.0, 0.1), rpy=RPY, gripper_open=open_)


def _trace_demo():
    """Seven steps covering every trigger:

    t=0 start (never a keyframe), t=1 gripper toggles shut, t=2 arm settles,
    t=3 moving, t=4 gripper toggles open, t=5 settles on the same pose as t=4
    (coalesced away), t=6 final step with a new pose.
    """
    poses = [
        _pose(0.30, True),
        _pose(0.40, False),
        _pose(0.50, False),
        _pose(0.60, False),
        _pose(0.70, True),
        _pose(0.70, True),
        _pose(0.80, True),
    ]
    vels = [MOVING, MOVING, SETTLED, MOVING, MOVING, (0.002,) * 7, MOVING]
    return build_demo(poses, vels), poses


def test_hand_traced_raw_timesteps():
    demo, _ = _trace_demo()
    assert keyframe_timesteps(demo) == [1, 2, 4, 5, 6]


def test_hand_traced_coalescing():
    demo, poses = _trace_demo()
    seq = extract_keyframes(demo)
    assert seq.demo_id == demo.id
    assert seq.timesteps == (1, 2, 4, 6)
    assert seq.actions == (poses[1], poses[2], poses[4], poses[6])


def test_step_zero_never_selected():
    poses = [_pose(0.3, True), _pose(0.4, True), _pose(0.5, True)]
    demo = build_demo(poses, [SETTLED, SETTLED, SETTLED])
    raw = keyframe_timesteps(demo)
    assert 0 not in raw
    assert raw == [1, 2]


def test_final_step_always_included():
    poses = [_pose(0.3, True), _pose(0.4, True), _pose(0.5, True)]
    demo = build_demo(poses, [MOVING, MOVING, MOVING])
    assert keyframe_timesteps(demo) == [2]
    seq = extract_keyframes(demo)
    assert seq.timesteps == (2,)
    assert len(seq.actions) >= 1


def test_zero_epsilon_keeps_only_toggles_and_final():
    demo, _ = _trace_demo()
    assert keyframe_timesteps(demo, velocity_epsilon=0.0) == [1, 4, 6]


def _random_demo(rng: np.random.Generator):
    n = int(rng.integers(2, 12))
    poses = []
    vels = []
    open_ = True
    for t in range(n):
        if rng.random() < 0.3:
            open_ = not open_
        poses.append(_pose(float(rng.uniform(0.1, 0.9)), open_))
        vels.append(tuple(rng.uniform(0.0, 1.0, size=7)))
    return build_demo(poses, vels)


def test_epsilon_monotonicity_seeded():
    rng = np.random.default_rng(5)
    for _ in range(50):
        demo = _random_demo(rng)
        eps_small, eps_large = sorted(rng.uniform(0.0, 1.2, size=2))
        small = set(keyframe_timesteps(demo, eps_small))
        large = set(keyframe_timesteps(demo, eps_large))
        assert small <= large


def test_extraction_is_deterministic_and_ordered():
    rng = np.random.default_rng(6)
    for _ in range(50):
        demo = _random_demo(rng)
        a = extract_keyframes(demo)
        b = extract_keyframes(demo)
        assert a == b
        assert list(a.timesteps) == sorted(a.timesteps)
        assert a.timesteps[-1] == len(demo.actions) - 1
        assert len(a.actions) >= 1


def test_toggles_survive_any_epsilon():
    demo, _ = _trace_demo()
    for eps in (0.0, 1e-6, 0.01, 10.0):
        raw = keyframe_timesteps(demo, eps)
        assert 1 in raw and 4 in raw


def test_keyaction_sequence_rejects_unordered_timesteps():
    p = _pose(0.3, True)
    with pytest.raises(ValueError):
        KeyActionSequence(demo_id="x", keyframes=((2, p), (1, p)))


def test_default_epsilon_value():
    assert DEFAULT_VELOCITY_EPSILON == 0.01


def test_generated_demos_extract_cleanly(small_dataset):
    for demo in small_dataset.demos:
        seq = extract_keyframes(demo)
        assert seq.timesteps[-1] == len(demo.actions) - 1
        # synthesized trajectories settle at every waypoint, so every
        # extracted action is a policy waypoint pose, never a mid-flight one
        assert 0 < len(seq.actions) < len(demo.actions)
