"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are gathered into the pytest terminal summary under the section
"acceptance criteria" (run with ``-s`` to also see them inline).
"""

import time

import numpy as np
import pytest

from ctxmotion.autodiff import Tensor
from ctxmotion.checkpoint import to_bytes
from ctxmotion.cli import main
from ctxmotion.context import (
    GraphLayout,
    context_adjacency,
    edge_convolution,
    heuristic_adjacency,
    normalize_interactions,
)
from ctxmotion.data import JOINT_DIM, SceneSequence, augment, extract_windows, write_scene
from ctxmotion.evaluation import horizon_errors
from ctxmotion.model import (
    VARIANTS,
    ModelConfig,
    WindowBatch,
    forward,
    param_shapes,
    zero_params,
    zero_velocity_baseline,
    zero_velocity_batch,
)
from ctxmotion.synthetic import KINDS, ScenarioSpec, generate
from ctxmotion.training import make_windows, predict_batch, train

from .conftest import ACCEPTANCE_LINES
from .oracles import gradient_check
from .test_context import brute_edge_conv, make_context

# the overfit run: widths and input scaling chosen to fit the time budget on one core
OVERFIT = ModelConfig.for_variant("crnn-li", human_hidden=128, context_hidden=64,
                                  interaction_hidden=32, scale_inputs=True)
OVERFIT_STEPS = 2000
OVERFIT_SEED = 0


def report(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def overfit():
    gen = [generate(ScenarioSpec("pick_place", duration=60, noise=0.0, seed=s)) for s in range(8)]
    seqs = [g[0] for g in gen]
    start = time.perf_counter()
    res = train(seqs, OVERFIT, seed=OVERFIT_SEED, max_steps=OVERFIT_STEPS, augment_data=False)
    return gen, res, time.perf_counter() - start


def test_c01_gradient_check():
    cfg = ModelConfig(context=True, li=True, omp=True, human_hidden=8, context_hidden=4,
                      interaction_hidden=4, observed=3, predicted=4, scale_inputs=True)
    start = time.perf_counter()
    worst = gradient_check(cfg, seed=0, eps=1e-5)
    elapsed = time.perf_counter() - start
    err = max(worst.values())
    ok = err < 1e-4 and elapsed < 60 and set(worst) == set(param_shapes(cfg))
    report(1, ok, f"max relative error {err:.2e} over {len(worst)} blocks in {elapsed:.1f} s "
                  f"(need < 1e-4, < 60 s)")
    assert ok, worst


def test_c02_edge_conv_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 7))
        f, c = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        x, w = rng.normal(size=(n, f)), rng.normal(size=(2 * f, c))
        a = rng.random((n, n))
        a /= a.sum(axis=1, keepdims=True)
        got = edge_convolution(Tensor(x), Tensor(a), Tensor(w)).data
        worst = max(worst, float(np.abs(got - brute_edge_conv(x, a, w)).max()))
    ok = worst <= 1e-12
    report(2, ok, f"50 random instances, max deviation from pairwise oracle {worst:.1e} (need <= 1e-12)")
    assert ok


def test_c03_adjacency_invariants():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        a = normalize_interactions(Tensor(rng.normal(0, 10, (n, n)))).data
        worst = max(worst, float(np.abs(a.sum(axis=1) - 1.0).max()))
    p = make_context(rng)
    first = context_adjacency(Tensor(rng.normal(size=(4, 4))), np.zeros((4, 3)), p, GraphLayout((4,)),
                              "learned", first=True).data
    single = normalize_interactions(Tensor([[3.7]])).data
    ok = worst <= 1e-9 and np.array_equal(first, np.eye(4)) and single.tolist() == [[1.0]]
    report(3, ok, f"row-sum deviation {worst:.1e} over 1000 matrices, first-frame identity "
                  f"{np.array_equal(first, np.eye(4))}, N=1 gives {single.tolist()}")
    assert ok


def test_c04_zero_parameters_equal_zero_velocity(pick_place):
    seq, _ = pick_place
    window = extract_windows(seq)[3]
    zv = zero_velocity_baseline(window)
    same = {}
    for variant in (v for v in VARIANTS if v != "zv"):
        cfg = ModelConfig.for_variant(variant)
        out = forward(window, cfg, zero_params(cfg))
        same[variant] = np.array_equal(out.poses, zv.poses) and (
            out.boxes is None or np.array_equal(out.boxes[:, ~window.human_mask],
                                                zv.boxes[:, ~window.human_mask]))
    ok = all(same.values())
    report(4, ok, "bitwise equal to zero velocity at full width: "
                  + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok


def test_c05_metric_oracle():
    t = 30
    base = np.arange(54, dtype=np.float64).reshape(18, 3) * [10.0, 20.0, 5.0]
    steps = np.arange(t, dtype=np.float64)[:, None, None] * [10.0, 0.0, 0.0]
    joints = (base[None] + steps).reshape(t, 1, JOINT_DIM)
    p = joints.reshape(t, 18, 3)
    hbox = np.concatenate([p.min(axis=1), p.max(axis=1)], axis=1)[:, None]
    cup = np.tile([0.0, 500.0, 0.0, 80.0, 580.0, 90.0], (t, 1))[:, None]
    seq = SceneSequence(["h", "c"], ["human", "cup"], np.concatenate([hbox, cup], axis=1),
                        np.concatenate([joints, np.zeros((t, 1, JOINT_DIM))], axis=1))
    errs = horizon_errors(extract_windows(seq), lambda b: zero_velocity_batch(b))["human"]
    closed = 10.0 * np.arange(1, 21)
    ok = np.array_equal(errs, closed)
    report(5, ok, f"zero-velocity error equals 10*h mm exactly for h=1..20: {ok}")
    assert ok


def test_c06_synthetic_overfit(overfit):
    gen, res, elapsed = overfit
    losses = [loss for _, loss in res.report.losses]
    ratio = np.mean(losses[-20:]) / losses[0]
    windows = make_windows([g[0] for g in gen], OVERFIT)
    model = horizon_errors(windows, lambda b: predict_batch(b, OVERFIT, res.params))["human"][19]
    zv = horizon_errors(windows, lambda b: zero_velocity_batch(b))["human"][19]
    ok = ratio <= 0.10 and model <= 0.5 * zv and elapsed < 600 and len(losses) <= 2000
    report(6, ok, f"loss at {100 * ratio:.1f}% of initial (need <= 10%), 2 s error {model:.0f} mm vs "
                  f"zero velocity {zv:.0f} mm ({100 * model / zv:.0f}%, need <= 50%), "
                  f"{len(losses)} steps in {elapsed:.0f} s")
    assert ok


def attention_probe(gen, params, config):
    """Per training window: does human->attached object beat human->farthest distractor
    on at least 80% of its attached observed frames?  Row = human, as in the CSV."""
    passed = total = 0
    for seq, gt in gen:
        for s in range(seq.n_frames - config.observed - config.predicted + 1):
            attached = [f for f in range(config.observed) if ("human_0", "object_0") in gt.pairs[s + f]]
            if not attached:
                continue
            bundle = forward(seq.subsequence(s, s + config.observed + config.predicted), config, params)
            batch = WindowBatch.from_windows([seq.subsequence(s, s + config.observed)])
            distractors = [k for k, e in enumerate(seq.entity_ids) if e.startswith("distractor")]
            good = 0
            for f in attached:
                c = batch.centers(f)
                far = max(distractors, key=lambda k: np.linalg.norm(c[k] - c[0]))
                a = bundle.interactions[f]
                good += a[0, 1] > a[0, far]
            total += 1
            passed += good >= 0.8 * len(attached)
    return passed, total


@pytest.mark.xfail(strict=True, reason="the prediction loss gives the interaction head no reason to "
                                       "prefer an object that is carried rigidly by the hand; see README")
def test_c07_interaction_recovery(overfit):
    gen, res, _ = overfit
    passed, total = attention_probe(gen, res.params, OVERFIT)
    share = passed / total
    ok = share >= 0.8
    report(7, ok, f"{passed}/{total} windows ({100 * share:.0f}%) favour the attached object over the "
                  f"farthest distractor on >= 80% of attached frames (need >= 80%)")
    assert ok


def test_c08_determinism():
    seqs = [generate(ScenarioSpec("pick_place", duration=40, seed=s))[0] for s in range(2)]
    cfg = ModelConfig.for_variant("crnn-omp-li", human_hidden=16, context_hidden=8, interaction_hidden=4,
                                  scale_inputs=True)
    blobs = [to_bytes(cfg, train(seqs, cfg, seed=11, max_steps=200).params) for _ in range(2)]
    ok = blobs[0] == blobs[1]
    report(8, ok, f"two 200-step runs give byte-identical checkpoints ({len(blobs[0])} bytes): {ok}")
    assert ok


def test_c09_augmentation_isometry():
    rng = np.random.default_rng(9)
    changed = frames = 0
    for s in range(20):
        seq, _ = generate(ScenarioSpec(KINDS[s % len(KINDS)], seed=500 + s))
        moved = augment(seq, rng)
        a, b = WindowBatch.from_windows([seq]), WindowBatch.from_windows([moved])
        for t in range(seq.n_frames):
            frames += 1
            changed += not np.array_equal(heuristic_adjacency(a.centers(t)), heuristic_adjacency(b.centers(t)))
    ok = changed == 0
    report(9, ok, f"heuristic adjacency unchanged on {frames - changed}/{frames} frames of 20 augmented "
                  "synthetic sequences")
    assert ok


def test_c10_table_structure(tmp_path):
    seqs = [generate(ScenarioSpec("pick_place", duration=35, seed=s))[0] for s in range(2)]
    for k, s in enumerate(seqs):
        write_scene(s, tmp_path / f"s{k}.jsonl")
    fine, coarse = tmp_path / "fine", tmp_path / "coarse"
    assert main(["eval", "--scenes", str(tmp_path), "--out", str(fine), "--fine-horizons"]) == 0
    assert main(["eval", "--scenes", str(tmp_path), "--out", str(coarse)]) == 0
    rows = [r.split(",") for r in (fine / "human_errors.csv").read_text().splitlines()]
    head = [r.split(",") for r in (coarse / "human_errors.csv").read_text().splitlines()][0]
    labels = [r[0] for r in rows[1:]]
    ok = (labels == ["ZV", "RNN", "C-RNN", "C-RNN+OMP", "C-RNN+LI", "C-RNN+OMP+LI"]
          and rows[0][1:] == [f"{h / 10:g}" for h in range(1, 21)]
          and head[1:] == ["0.5", "1", "1.5", "2"])
    report(10, ok, "eval emits the six-row human table with 20 fine / 4 coarse horizons; "
                   "published absolute errors not reproduced (dataset not bundled)")
    assert ok
