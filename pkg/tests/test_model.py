import math

import numpy as np
import pytest

from ctxmotion import autodiff as ad
from ctxmotion.autodiff import ContractError, Tensor
from ctxmotion.model import (
    VARIANTS,
    ConfigError,
    ModelConfig,
    WindowBatch,
    count_parameters,
    forward,
    forward_batch,
    human_step,
    init_params,
    object_step,
    param_shapes,
    zero_params,
    zero_velocity_baseline,
)

from .oracles import gradient_check, two_entity_window

SMALL = dict(human_hidden=6, context_hidden=4, interaction_hidden=3, observed=4, predicted=5)
TRAINABLE = [v for v in VARIANTS if v != "zv"]


def small(variant, **kw):
    return ModelConfig.for_variant(variant, **{**SMALL, **kw})


# configuration and parameter counts


def test_inconsistent_flags():
    with pytest.raises(ConfigError):
        ModelConfig(context=False, omp=True)
    with pytest.raises(ConfigError):
        ModelConfig(context=False, li=True)
    with pytest.raises(ConfigError):
        ModelConfig.for_variant("zv")


@pytest.mark.parametrize("variant", TRAINABLE)
def test_variant_names_round_trip(variant):
    cfg = ModelConfig.for_variant(variant)
    assert cfg.variant == variant
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_full_width_count_written_out():
    hh, hc, mid, f0 = 1024, 256, 128, 6 + 15 + 54
    gru = lambda f, c: 3 * c * (f + c + 2)  # noqa: E731
    expected = (gru(54, hh) + (hh + hc) * 54 + 54          # human branch
                + 2 * f0 * hc + gru(hc, hc)                 # edge conv + context GRU
                + 2 * hc * mid + mid                        # interaction head
                + hc * 6 + 6)                               # object head
    assert count_parameters(ModelConfig.for_variant("crnn-omp-li")) == expected


def test_context_branch_count_is_additive():
    with_ctx = count_parameters(ModelConfig.for_variant("crnn"))
    without = count_parameters(ModelConfig.for_variant("rnn"))
    f0 = 75
    branch = 2 * f0 * 256 + 3 * 256 * (256 + 256 + 2) + 256 * 54
    assert with_ctx - without == branch


def test_interaction_head_count():
    diff = count_parameters(ModelConfig.for_variant("crnn-li")) - count_parameters(
        ModelConfig.for_variant("crnn"))
    assert diff == 2 * 256 * 128 + 128 * 1


def test_doubling_vocabulary_touches_only_feature_terms():
    a = ModelConfig.for_variant("crnn-omp-li")
    b = ModelConfig.for_variant("crnn-omp-li", vocab_size=30)
    sa, sb = param_shapes(a), param_shapes(b)
    changed = {k for k in sa if sa[k] != sb[k]}
    assert changed == {"context.edge.w"}
    assert count_parameters(b) - count_parameters(a) == 2 * 15 * 256


def test_init_is_glorot_with_zero_biases():
    cfg = small("crnn-omp-li")
    params = init_params(cfg, np.random.default_rng(0))
    for name, p in params.items():
        if p.data.ndim == 1:
            assert not p.data.any(), name
        else:
            assert np.abs(p.data).max() <= math.sqrt(6 / sum(p.shape))


# baseline collapse and bookkeeping


@pytest.mark.parametrize("variant", TRAINABLE)
def test_zero_parameters_collapse_to_zero_velocity(variant):
    cfg = small(variant)
    win = two_entity_window(cfg)
    got = forward(win, cfg, zero_params(cfg))
    zv = zero_velocity_baseline(win, cfg.observed, cfg.predicted)
    assert np.array_equal(got.poses, zv.poses)
    if cfg.omp:
        assert np.array_equal(got.boxes[:, 1], zv.boxes[:, 1])


def test_non_omp_bundle_covers_observed_frames_only():
    cfg = small("crnn-li")
    b = forward(two_entity_window(cfg), cfg, init_params(cfg, np.random.default_rng(1)))
    assert b.boxes is None
    assert b.interactions.shape == (cfg.observed, 2, 2)
    assert np.array_equal(b.interactions[0], np.eye(2))


def test_omp_interaction_series_length():
    cfg = ModelConfig.for_variant("crnn-omp-li", human_hidden=6, context_hidden=4, interaction_hidden=3)
    b = forward(two_entity_window(cfg), cfg, init_params(cfg, np.random.default_rng(2)))
    assert b.interactions.shape == (29, 2, 2)
    assert b.poses.shape == (20, 1, 18, 3) and b.boxes.shape == (20, 2, 6)
    np.testing.assert_allclose(b.interactions.sum(axis=2), 1.0, atol=1e-12)


def test_rnn_has_no_interactions():
    cfg = small("rnn")
    b = forward(two_entity_window(cfg), cfg, init_params(cfg, np.random.default_rng(3)))
    assert b.interactions.size == 0


@pytest.mark.parametrize("variant", ["rnn", "crnn", "crnn-li"])
def test_non_omp_output_ignores_future_frames(variant):
    cfg = small(variant)
    params = init_params(cfg, np.random.default_rng(4))
    win = two_entity_window(cfg)
    tampered = win.subsequence(0, win.n_frames)
    tampered.boxes[cfg.observed:] += 1234.0
    tampered.joints[cfg.observed:] -= 55.0
    assert np.array_equal(forward(win, cfg, params).poses, forward(tampered, cfg, params).poses)


def test_batched_forward_matches_single_windows():
    cfg = small("crnn-omp-li")
    params = init_params(cfg, np.random.default_rng(5))
    wins = [two_entity_window(cfg, seed=s) for s in range(3)]
    batched = forward_batch(WindowBatch.from_windows(wins), cfg, params).bundles()
    for w, b in zip(wins, batched):
        single = forward(w, cfg, params)
        np.testing.assert_allclose(b.poses, single.poses, rtol=0, atol=1e-9)
        np.testing.assert_allclose(b.boxes, single.boxes, rtol=0, atol=1e-9)
        np.testing.assert_allclose(b.interactions, single.interactions, rtol=0, atol=1e-12)


def test_window_without_human_is_rejected():
    cfg = small("crnn")
    win = two_entity_window(cfg)
    only_cup = type(win)(["c"], ["cup"], win.boxes[:, 1:], win.joints[:, 1:])
    with pytest.raises(ContractError):
        forward(only_cup, cfg, zero_params(cfg))


# decode steps


def test_zero_head_keeps_pose():
    cfg = small("rnn")
    params = zero_params(cfg)
    pose = Tensor(np.random.default_rng(6).normal(size=(2, 54)))
    nxt, _ = human_step(pose, Tensor(np.zeros((2, 6))), None, params)
    assert np.array_equal(nxt.data, pose.data)


def test_residual_equals_head_output():
    cfg = small("crnn")
    rng = np.random.default_rng(7)
    params = init_params(cfg, rng)
    params["human.head.b"].data = rng.normal(size=54)
    pose, h, ctx = rng.normal(size=(1, 54)), rng.normal(size=(1, 6)), rng.normal(size=(1, 4))
    nxt, h_new = human_step(Tensor(pose), Tensor(h), Tensor(ctx), params)
    head = np.concatenate([h_new.data, ctx], axis=1) @ params["human.head.w"].data + params["human.head.b"].data
    np.testing.assert_allclose(nxt.data - pose, head, atol=1e-12)


def test_scalar_hand_evaluation_of_one_step():
    cfg = ModelConfig(context=False, human_hidden=1)
    rng = np.random.default_rng(8)
    params = init_params(cfg, rng)
    for p in params.values():
        p.data += rng.normal(0, 0.1, p.shape)
    pose, h = rng.normal(size=54), 0.3
    w_in, w_hid = params["human.gru.w_in"].data, params["human.gru.w_hid"].data[0]
    b_in, b_hid = params["human.gru.b_in"].data, params["human.gru.b_hid"].data
    sig = lambda v: 1 / (1 + math.exp(-v))  # noqa: E731
    gi = [sum(pose[f] * w_in[f, k] for f in range(54)) + b_in[k] for k in range(3)]
    r = sig(gi[0] + h * w_hid[0] + b_hid[0])
    z = sig(gi[1] + h * w_hid[1] + b_hid[1])
    n = math.tanh(gi[2] + r * (h * w_hid[2] + b_hid[2]))
    h_new = (1 - z) * n + z * h
    expected = [pose[j] + h_new * params["human.head.w"].data[0, j] + params["human.head.b"].data[j]
                for j in range(54)]
    got, _ = human_step(Tensor(pose[None]), Tensor([[h]]), None, params)
    np.testing.assert_allclose(got.data[0], expected, atol=1e-12, rtol=0)


def test_zero_context_columns_match_context_free_head():
    rng = np.random.default_rng(9)
    with_ctx = small("crnn")
    p_ctx = init_params(with_ctx, rng)
    p_ctx["human.head.w"].data[6:] = 0.0
    p_plain = {k: Tensor(v.data.copy()) for k, v in p_ctx.items() if k.startswith("human.")}
    p_plain["human.head.w"] = Tensor(p_ctx["human.head.w"].data[:6].copy())
    pose, h = Tensor(rng.normal(size=(1, 54))), Tensor(rng.normal(size=(1, 6)))
    a, _ = human_step(pose, h, Tensor(rng.normal(size=(1, 4))), p_ctx)
    b, _ = human_step(pose, h, None, p_plain)
    assert np.array_equal(a.data, b.data)


def test_object_step_residual():
    cfg = small("crnn-omp")
    params = zero_params(cfg)
    box = Tensor([[0.0, 0.0, 0.0, 100.0, 100.0, 100.0]])
    hid = Tensor(np.ones((1, 4)))
    assert np.array_equal(object_step(hid, box, params, cfg).data, box.data)
    params["object.head.b"].data = np.array([10.0, 0, 0, 10.0, 0, 0])
    assert object_step(hid, box, params, cfg).data.tolist() == [[10.0, 0, 0, 110.0, 100.0, 100.0]]


def test_object_step_needs_omp():
    cfg = small("crnn")
    with pytest.raises(ContractError):
        object_step(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 6))), {}, cfg)


def test_gradient_check_small_model():
    cfg = ModelConfig(context=True, li=True, omp=True, human_hidden=3, context_hidden=2,
                      interaction_hidden=2, observed=3, predicted=2, scale_inputs=True)
    worst = gradient_check(cfg, seed=3)
    assert max(worst.values()) < 1e-4, worst
