import numpy as np
import pytest

from ctxmotion import autodiff as ad
from ctxmotion.autodiff import NumericError, Tensor
from ctxmotion.checkpoint import to_bytes
from ctxmotion.model import BatchPrediction, ModelConfig, WindowBatch, init_params
from ctxmotion.training import (
    Adam,
    DataError,
    clip_global_norm,
    l2_loss,
    train,
    window_losses,
)

from .oracles import two_entity_window

CFG = ModelConfig.for_variant("crnn-li", human_hidden=6, context_hidden=4, interaction_hidden=3,
                              observed=3, predicted=4, scale_inputs=True)


def scenes(n=2, length=12):
    out = []
    for s in range(n):
        w = two_entity_window(ModelConfig(context=False, observed=length - 1, predicted=1), seed=s)
        w.name = f"s{s}"
        out.append(w)
    return out


def prediction(poses, truth):
    """A BatchPrediction whose truth for one human is ``truth`` (frames after observed)."""
    cfg = ModelConfig(context=False, observed=1, predicted=len(poses))
    win = two_entity_window(cfg)
    win.joints[1:, 0] = truth
    batch = WindowBatch.from_windows([win])
    return BatchPrediction([Tensor(p[None]) for p in poses], None, [], batch), cfg


# loss


def test_loss_is_zero_for_perfect_prediction():
    truth = np.random.default_rng(0).normal(size=(2, 54))
    pred, cfg = prediction(truth, truth)
    assert float(l2_loss(pred, cfg).data) == 0.0


def test_single_residual_gives_its_magnitude():
    truth = np.zeros((1, 54))
    guess = truth.copy()
    guess[0, 5] = -7.0
    pred, cfg = prediction(guess, truth)
    assert float(l2_loss(pred, cfg).data) == 7.0


def test_three_four_five():
    truth = np.zeros((2, 54))
    guess = truth.copy()
    guess[0, 0], guess[1, 40] = 3.0, 4.0
    pred, cfg = prediction(guess, truth)
    assert float(l2_loss(pred, cfg).data) == 5.0


def test_batch_loss_is_mean_of_window_losses():
    cfg = CFG
    params = init_params(cfg, np.random.default_rng(1))
    wins = [two_entity_window(cfg, seed=s) for s in range(3)]
    from ctxmotion.model import forward_batch
    with ad.no_grad():
        pred = forward_batch(WindowBatch.from_windows(wins), cfg, params)
        per = window_losses(pred, cfg).data[:, 0]
        singles = [float(l2_loss(forward_batch(WindowBatch.from_windows([w]), cfg, params), cfg).data)
                   for w in wins]
        np.testing.assert_allclose(per, singles, rtol=1e-12)
        assert float(l2_loss(pred, cfg).data) == pytest.approx(np.mean(singles), rel=1e-12)


# optimiser


def test_first_adam_step_is_minus_lr():
    p = {"w": Tensor(np.zeros((2, 3)), requires_grad=True)}
    Adam(p).step({"w": np.ones((2, 3))})
    np.testing.assert_allclose(p["w"].data, -5e-4 / (1 + 1e-8), rtol=1e-12)


def test_zero_gradient_leaves_parameters_and_decays_moments():
    p = {"w": Tensor(np.ones(3), requires_grad=True)}
    opt = Adam(p)
    opt.step({"w": np.ones(3)})
    before, m1 = p["w"].data.copy(), opt.m["w"].copy()
    opt.m["w"] = np.zeros(3)
    opt.v["w"] = np.zeros(3)
    opt.step({"w": np.zeros(3)})
    assert np.array_equal(p["w"].data, before)
    opt.m["w"] = m1
    opt.step({"w": np.zeros(3)})
    np.testing.assert_allclose(opt.m["w"], 0.5 * m1)


def test_non_finite_gradient_names_block():
    p = {"context.edge.w": Tensor(np.zeros(2), requires_grad=True)}
    with pytest.raises(NumericError, match="context.edge.w"):
        Adam(p).step({"context.edge.w": np.array([1.0, np.nan])})


def test_global_norm_clipping():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_global_norm(g, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose(np.hypot(clipped["a"], clipped["b"]), 1.0)
    same, _ = clip_global_norm(g, 10.0)
    assert same is g


# training loop


def test_zero_steps_returns_initialisation():
    seqs = scenes()
    res = train(seqs, CFG, seed=3, max_steps=0)
    ref = init_params(CFG, np.random.default_rng(np.random.SeedSequence(3).spawn(3)[0]))
    assert all(np.array_equal(res.params[k].data, ref[k].data) for k in ref)
    assert res.report.losses == []


def test_same_seed_same_losses_and_bytes():
    seqs = scenes()
    a = train(seqs, CFG, seed=5, max_steps=6, batch_size=2)
    b = train(seqs, CFG, seed=5, max_steps=6, batch_size=2)
    assert a.report.losses == b.report.losses
    assert to_bytes(CFG, a.params) == to_bytes(CFG, b.params)
    c = train(seqs, CFG, seed=6, max_steps=6, batch_size=2)
    assert c.report.losses != a.report.losses


def test_loss_decreases_on_tiny_problem():
    res = train(scenes(1), CFG, seed=0, max_steps=60, batch_size=4, augment_data=False, lr=5e-3)
    losses = [l for _, l in res.report.losses]
    assert np.mean(losses[-5:]) < 0.5 * losses[0]


def test_early_stopping_keeps_best_validation_params():
    seqs = scenes(3)
    res = train(seqs[:2], CFG, seed=1, max_steps=200, val_sequences=seqs[2:], patience=2,
                batch_size=4, lr=5e-2)
    errs = [e for _, _, e in res.report.validation]
    best_epoch_step = min(res.report.validation, key=lambda r: r[2])[1]
    assert res.report.best_step == best_epoch_step
    assert res.report.stopped_early or len(res.report.losses) == 200
    assert len(errs) >= 1


def test_empty_training_split():
    short = two_entity_window(ModelConfig(context=False, observed=2, predicted=1))
    with pytest.raises(DataError):
        train([short], CFG, seed=0, max_steps=1)


def test_report_csv_shapes():
    res = train(scenes(), CFG, seed=0, max_steps=3, batch_size=2, val_sequences=scenes(1))
    assert res.report.loss_csv().splitlines()[0] == "step,loss"
    assert len(res.report.loss_csv().splitlines()) == 4
    assert res.report.validation_csv().startswith("epoch,step,val_error_mm\n")
