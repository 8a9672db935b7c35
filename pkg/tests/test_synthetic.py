import io

import numpy as np
import pytest

from ctxmotion.data import JOINT_NAMES, box_centers, box_vertices, extract_windows
from ctxmotion.evaluation import horizon_errors
from ctxmotion.model import zero_velocity_batch
from ctxmotion.synthetic import MAX_STEP_MM, KINDS, ScenarioSpec, SpecError, generate

R_HAND = JOINT_NAMES.index("r_hand")


@pytest.mark.parametrize("kind", KINDS)
def test_same_seed_same_scene(kind):
    a, ga = generate(ScenarioSpec(kind, seed=11))
    b, gb = generate(ScenarioSpec(kind, seed=11))
    assert np.array_equal(a.boxes, b.boxes) and np.array_equal(a.joints, b.joints)
    assert ga.pairs == gb.pairs
    c, _ = generate(ScenarioSpec(kind, seed=12))
    assert not np.array_equal(a.boxes, c.boxes)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(4))
def test_noise_free_motion_is_bounded(kind, seed):
    seq, _ = generate(ScenarioSpec(kind, duration=70, noise=0.0, seed=seed))
    assert np.abs(np.diff(seq.joints, axis=0)).max() <= MAX_STEP_MM
    corners = box_vertices(seq.boxes)
    assert np.linalg.norm(np.diff(corners, axis=0), axis=-1).max() <= MAX_STEP_MM
    assert np.all(seq.boxes[..., :3] <= seq.boxes[..., 3:])


@pytest.mark.parametrize("seed", range(4))
def test_attached_object_keeps_constant_offset(seed):
    seq, gt = generate(ScenarioSpec("pick_place", noise=0.0, seed=seed))
    frames = gt.frames_with("human_0", "object_0")
    assert len(frames) > 5
    hand = seq.joints[frames, 0].reshape(len(frames), 18, 3)[:, R_HAND]
    offset = box_centers(seq.boxes[frames, 1]) - hand
    np.testing.assert_allclose(offset, offset[:1].repeat(len(frames), 0), atol=1e-9, rtol=0)


def test_pass_object_changes_holder():
    seq, gt = generate(ScenarioSpec("pass_object", noise=0.0, seed=2))
    a, b = gt.frames_with("human_0", "object_0"), gt.frames_with("human_1", "object_0")
    assert a and b and max(a) < min(b)
    assert seq.entity_types.count("human") == 2


def test_static_clutter_is_solved_by_zero_velocity():
    seq, gt = generate(ScenarioSpec("static_clutter", noise=0.0, seed=5))
    assert all(not p for p in gt.pairs)
    assert np.array_equal(seq.boxes[0], seq.boxes[-1])
    errs = horizon_errors(extract_windows(seq, stride=5), lambda b: zero_velocity_batch(b))
    assert not errs["human"].any() and not errs["object"].any()


def test_noise_amplitude():
    clean, _ = generate(ScenarioSpec("static_clutter", noise=0.0, seed=6))
    noisy, _ = generate(ScenarioSpec("static_clutter", noise=5.0, seed=6))
    d = (noisy.joints - clean.joints)[:, 0]
    assert 4.0 < d.std() < 6.0


def test_ground_truth_csv():
    _, gt = generate(ScenarioSpec("pick_place", noise=0.0, seed=0))
    buf = io.StringIO()
    gt.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "frame,src,dst"
    assert len(lines) - 1 == len(gt.frames_with("human_0", "object_0"))


@pytest.mark.parametrize("spec", [
    ScenarioSpec("juggling"), ScenarioSpec(duration=29), ScenarioSpec(noise=-1.0),
    ScenarioSpec(n_distractors=-2),
])
def test_invalid_specs(spec):
    with pytest.raises(SpecError):
        generate(spec)
