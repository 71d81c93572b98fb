"""Record validation, angle wrapping, and dataset round trips."""

import json
import math

import pytest
from hypothesis import given, strategies as st

from conftest import MOVING, SETTLED, build_demo, make_obs
from xicm.demo_store import (
    Dataset,
    Demonstration,
    ObjectRecord,
    Observation,
    Pose7,
    WorkspaceBounds,
    dataset_counts,
    demo_from_json,
    demo_to_json,
    iter_steps,
    load_dataset,
    save_dataset,
    wrap_degrees,
)
from xicm.errors import DatasetError

WS = WorkspaceBounds(min_xyz=(0.0, -0.5, 0.0), max_xyz=(1.0, 0.5, 0.5))


# -- wrap_degrees


@pytest.mark.parametrize(
    "angle,expected",
    [
        (0.0, 0.0),
        (359.0, 359.0),
        (360.0, 0.0),
        (-5.0, 355.0),
        (725.0, 5.0),
        (-360.0, 0.0),
        (720.0, 0.0),
    ],
)
def test_wrap_degrees_cases(angle, expected):
    assert wrap_degrees(angle) == pytest.approx(expected, abs=1e-9)


def test_wrap_degrees_tiny_negative_guard():
    # (-1e-15) % 360.0 is exactly 360.0 in floats; the result must still be < 360
    w = wrap_degrees(-1e-15)
    assert w == 0.0


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_wrap_degrees_range_and_equivalence(angle):
    w = wrap_degrees(angle)
    assert 0.0 <= w < 360.0
    assert abs(math.remainder(w - angle, 360.0)) < 1e-6


# -- record validation


def test_workspace_rejects_degenerate_axis():
    with pytest.raises(DatasetError):
        WorkspaceBounds(min_xyz=(0, 0, 0), max_xyz=(1, 0, 1))
    with pytest.raises(DatasetError):
        WorkspaceBounds(min_xyz=(0, 0, 0), max_xyz=(1, 1, 1), grid_resolution=1)


def test_workspace_extent():
    assert WS.extent == (1.0, 1.0, 0.5)


def test_pose_wraps_angles_on_construction():
    p = Pose7(position=(0, 0, 0), rpy=(-5.0, 725.0, 360.0), gripper_open=1)
    assert p.rpy == pytest.approx((355.0, 5.0, 0.0))
    assert p.gripper_open is True
    assert isinstance(p.position[0], float)


def test_object_record_normalizes_name():
    rec = ObjectRecord("  Block ", (0.1, 0.2, 0.3))
    assert rec.name == "block"
    with pytest.raises(DatasetError):
        ObjectRecord("   ", (0, 0, 0))


def test_observation_checks_buffer_and_timestep():
    with pytest.raises(DatasetError):
        Observation(width=8, height=8, rgb=b"\x00" * 10, joint_velocities=(0.0,), gripper_open=True, timestep=0)
    with pytest.raises(DatasetError):
        make_obs(-1)


def test_demonstration_invariants():
    poses = [Pose7((0.5, 0.0, 0.3), (0, 180, 0), True), Pose7((0.5, 0.0, 0.2), (0, 180, 0), False)]
    demo = build_demo(poses, [MOVING, SETTLED])
    assert len(demo.observations) == 2

    with pytest.raises(DatasetError):
        build_demo(poses, [MOVING, SETTLED], demo_id="")
    with pytest.raises(DatasetError):
        build_demo(poses[:1], [MOVING])  # fewer than 2 steps
    with pytest.raises(DatasetError):
        Demonstration(
            id="x", task_name="t", language="l", objects=(),
            observations=(make_obs(0),), actions=tuple(poses),
        )
    with pytest.raises(DatasetError):
        Demonstration(
            id="x", task_name="t", language="l", objects=(),
            observations=(make_obs(1), make_obs(1)), actions=tuple(poses),
        )


# -- JSON and directory round trips


def _tiny_demo(demo_id="a-0", task="task_a", language="do the thing a"):
    poses = [
        Pose7((0.5, 0.0, 0.35), (0.0, 180.0, 0.0), True),
        Pose7((0.52, -0.1, 0.03), (0.0, 180.0, 45.0), False),
        Pose7((0.8, 0.35, 0.05), (0.0, 180.0, 45.0), True),
    ]
    vels = [MOVING, SETTLED, MOVING]
    return build_demo(
        poses, vels, demo_id=demo_id, task=task, language=language,
        objects=(ObjectRecord("block", (0.52, -0.1, 0.02)), ObjectRecord("bin", (0.8, 0.35, 0.0))),
    )


def test_demo_json_round_trip():
    demo = _tiny_demo()
    again = demo_from_json(demo_to_json(demo))
    assert again == demo


def test_demo_json_reports_location_of_bad_field():
    obj = demo_to_json(_tiny_demo())
    obj["steps"][1]["joint_vel"] = []
    with pytest.raises(DatasetError) as err:
        demo_from_json(obj, file="demo.jsonl", line=3)
    assert err.value.file == "demo.jsonl"
    assert err.value.line == 3
    assert "joint_vel" in err.value.field


def test_demo_json_rejects_bad_base64_and_nonfinite_velocity():
    obj = demo_to_json(_tiny_demo())
    obj["steps"][0]["rgb"]["data_b64"] = "@@not-base64@@"
    with pytest.raises(DatasetError):
        demo_from_json(obj)

    obj = demo_to_json(_tiny_demo())
    obj["steps"][0]["joint_vel"][0] = float("inf")
    with pytest.raises(DatasetError):
        demo_from_json(obj)


def _tiny_dataset():
    demos = (
        _tiny_demo("a-0", "task_a"),
        _tiny_demo("a-1", "task_a"),
        _tiny_demo("b-0", "task_b", language="do the thing b"),
    )
    return Dataset(workspace=WS, tasks=("task_a", "task_b"), demos=demos, sim_params={"image_size": 8})


def test_save_load_round_trip(tmp_path):
    dataset = _tiny_dataset()
    save_dataset(dataset, tmp_path / "data")
    loaded = load_dataset(tmp_path / "data")
    assert loaded.workspace == dataset.workspace
    assert loaded.tasks == dataset.tasks
    assert loaded.demos == dataset.demos
    assert loaded.sim_params["image_size"] == 8
    assert dataset_counts(loaded) == {"task_a": 2, "task_b": 1}


def test_load_sorts_demos_by_id(tmp_path):
    dataset = _tiny_dataset()
    save_dataset(dataset, tmp_path / "data")
    # rewrite one file with lines reversed; load order must not change
    path = tmp_path / "data" / "task_a.jsonl"
    lines = path.read_text().strip().splitlines()
    path.write_text("\n".join(reversed(lines)) + "\n")
    loaded = load_dataset(tmp_path / "data")
    assert [d.id for d in loaded.demos] == ["a-0", "a-1", "b-0"]


def test_load_missing_manifest(tmp_path):
    with pytest.raises(DatasetError) as err:
        load_dataset(tmp_path)
    assert "manifest" in str(err.value)


def test_load_corrupt_line_names_file_and_line(tmp_path):
    save_dataset(_tiny_dataset(), tmp_path / "data")
    path = tmp_path / "data" / "task_b.jsonl"
    with path.open("a") as fh:
        fh.write("{not json\n")
    with pytest.raises(DatasetError) as err:
        load_dataset(tmp_path / "data")
    assert err.value.file.endswith("task_b.jsonl")
    assert err.value.line == 2


def test_load_duplicate_id(tmp_path):
    save_dataset(_tiny_dataset(), tmp_path / "data")
    path = tmp_path / "data" / "task_a.jsonl"
    first = path.read_text().splitlines()[0]
    with path.open("a") as fh:
        fh.write(first + "\n")
    with pytest.raises(DatasetError) as err:
        load_dataset(tmp_path / "data")
    assert err.value.field == "id"


def test_load_task_mismatch(tmp_path):
    save_dataset(_tiny_dataset(), tmp_path / "data")
    path = tmp_path / "data" / "task_b.jsonl"
    line = json.loads(path.read_text().splitlines()[0])
    line["task"] = "task_a"
    line["id"] = "b-9"
    with path.open("a") as fh:
        fh.write(json.dumps(line) + "\n")
    with pytest.raises(DatasetError) as err:
        load_dataset(tmp_path / "data")
    assert err.value.field == "task"


def test_load_missing_task_file(tmp_path):
    save_dataset(_tiny_dataset(), tmp_path / "data")
    (tmp_path / "data" / "task_b.jsonl").unlink()
    with pytest.raises(DatasetError) as err:
        load_dataset(tmp_path / "data")
    assert "task_b" in str(err.value)


def test_manifest_records_gripper_polarity(tmp_path):
    save_dataset(_tiny_dataset(), tmp_path / "data")
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
    assert manifest["gripper"] == {"open": 1, "closed": 0}
    assert manifest["workspace"]["grid"] == 100


def test_iter_steps_pairs_observations_with_actions():
    demo = _tiny_demo()
    steps = list(iter_steps(demo))
    assert len(steps) == 3
    assert steps[0] == (demo.observations[0], demo.actions[0])


def test_generated_dataset_loads_cleanly(small_dataset, tmp_path):
    save_dataset(small_dataset, tmp_path / "gen")
    loaded = load_dataset(tmp_path / "gen")
    assert loaded.demos == small_dataset.demos
    assert len(loaded) == 24
    assert all(count == 3 for count in dataset_counts(loaded).values())
