import numpy as np
import pytest

from ctxmotion.data import JOINT_DIM, SceneSequence
from ctxmotion.model import ModelConfig
from ctxmotion.synthetic import ScenarioSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Every branch switched on, but small enough for finite differences."""
    return ModelConfig(context=True, li=True, omp=True, human_hidden=8, context_hidden=4,
                       interaction_hidden=3, observed=3, predicted=4, scale_inputs=True)


@pytest.fixture(scope="session")
def pick_place():
    return generate(ScenarioSpec("pick_place", duration=40, noise=0.0, seed=3))


def moving_scene(n_frames=30, step=10.0, with_object=True):
    """One human translating ``step`` mm per frame along x, optionally a static cup."""
    t = np.arange(n_frames, dtype=np.float64)
    base = np.tile(np.arange(18, dtype=np.float64)[:, None] * [10.0, 20.0, 50.0], (1, 1))
    joints = base[None] + np.stack([t * step, 0 * t, 0 * t], axis=1)[:, None, :]
    joints = joints.reshape(n_frames, 1, JOINT_DIM)
    lo = joints.reshape(n_frames, 18, 3).min(axis=1)
    hi = joints.reshape(n_frames, 18, 3).max(axis=1)
    boxes = np.concatenate([lo, hi], axis=1)[:, None]
    ids, types = ["h"], ["human"]
    if with_object:
        cup = np.tile([400.0, 0.0, 700.0, 480.0, 80.0, 800.0], (n_frames, 1))[:, None]
        boxes = np.concatenate([boxes, cup], axis=1)
        joints = np.concatenate([joints, np.zeros((n_frames, 1, JOINT_DIM))], axis=1)
        ids, types = ids + ["c"], types + ["cup"]
    return SceneSequence(ids, types, boxes, joints, name="moving")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
