"""Shared fixtures: generated datasets at two scales plus tiny hand-built demos.

The "small" fixtures (3 episodes per task) keep unit tests fast; the
"protocol" fixtures (8 episodes per task) back the end-to-end benchmark
tests.  Both are session scoped because generation and training are pure
functions of the seed.
"""

from __future__ import annotations

import numpy as np
import pytest

from xicm.demo_store import Demonstration, Observation, Pose7
from xicm.dynamics import DemoEmbedding, embed_dataset, train_dynamics_predictor
from xicm.gateway import EchoNearestBackend, Gateway, GatewayConfig, ScriptedBackend
from xicm.sim import JOINT_COUNT, SimConfig, generate_seen_dataset
from xicm.tasks import oracle_backend, seen_tasks

# Free-form text with no digits or brackets: parsing must find zero actions.
PROSE_ANSWER = (
    "I would move the gripper above the object, close it, and then place "
    "the object at the goal location."
)

MOVING = (0.5,) * JOINT_COUNT
SETTLED = (0.001,) * JOINT_COUNT


def solid_rgb(size: int = 8, color: tuple[int, int, int] = (26, 26, 26)) -> bytes:
    return bytes(color) * (size * size)


def make_obs(
    timestep: int,
    vel: tuple[float, ...] = MOVING,
    *,
    size: int = 8,
    gripper_open: bool = True,
    color: tuple[int, int, int] = (26, 26, 26),
) -> Observation:
    return Observation(
        width=size,
        height=size,
        rgb=solid_rgb(size, color),
        joint_velocities=tuple(vel),
        gripper_open=gripper_open,
        timestep=timestep,
    )


def build_demo(
    poses: list[Pose7],
    vels: list[tuple[float, ...]],
    *,
    demo_id: str = "demo-0000",
    task: str = "put_block_in_bin",
    language: str = "put the block in the bin",
    objects: tuple = (),
) -> Demonstration:
    assert len(poses) == len(vels)
    observations = tuple(
        make_obs(t, vel=v, gripper_open=p.gripper_open)
        for t, (p, v) in enumerate(zip(poses, vels))
    )
    return Demonstration(
        id=demo_id,
        task_name=task,
        language=language,
        objects=tuple(objects),
        observations=observations,
        actions=tuple(poses),
    )


def echo_gateway() -> Gateway:
    return Gateway(cfg=GatewayConfig(), backend=EchoNearestBackend())


def oracle_gateway() -> Gateway:
    return Gateway(cfg=GatewayConfig(), backend=oracle_backend())


def prose_gateway() -> Gateway:
    return Gateway(cfg=GatewayConfig(), backend=ScriptedBackend(PROSE_ANSWER))


def identity_motion_embeddings(embeddings: list[DemoEmbedding]) -> list[DemoEmbedding]:
    """Relabel real embeddings so the final frame equals the first frame."""
    return [
        DemoEmbedding(e.demo_id, e.vis_first, e.lang, vis_last=e.vis_first)
        for e in embeddings
    ]


@pytest.fixture(scope="session")
def small_dataset():
    return generate_seen_dataset(seen_tasks(), SimConfig(episodes_per_task=3, seed=7))


@pytest.fixture(scope="session")
def small_embeddings(small_dataset):
    return embed_dataset(small_dataset)


@pytest.fixture(scope="session")
def small_predictor(small_embeddings):
    predictor, _ = train_dynamics_predictor(small_embeddings)
    return predictor


@pytest.fixture(scope="session")
def protocol_dataset():
    return generate_seen_dataset(seen_tasks(), SimConfig(episodes_per_task=8, seed=7))


@pytest.fixture(scope="session")
def protocol_embeddings(protocol_dataset):
    return embed_dataset(protocol_dataset)


@pytest.fixture(scope="session")
def protocol_predictor(protocol_embeddings):
    predictor, _ = train_dynamics_predictor(protocol_embeddings)
    return predictor


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
