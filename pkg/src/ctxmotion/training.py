from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .data import SceneSequence, augment, extract_windows
from .model import BatchPrediction, ModelConfig, Params, WindowBatch, forward_batch, init_params

logger = logging.getLogger(__name__)

LEARNING_RATE = 5e-4
BETA1 = 0.5
BETA2 = 0.99
EPSILON = 1e-8
BATCH_SIZE = 16
CLIP_NORM = 5.0
PATIENCE = 10


class DataError(ValueError):
    pass


def _membership(owner: np.ndarray, n_windows: int) -> Tensor:
    g = np.zeros((n_windows, len(owner)))
    g[owner, np.arange(len(owner))] = 1.0
    return Tensor(g)


def window_losses(pred: BatchPrediction, config: ModelConfig) -> Tensor:
    """Per-window loss as an (n_windows, 1) tensor.

    The L2 norm of all human joint residuals over the predicted frames, plus
    (with OMP) the L2 norm of all object box residuals.
    """
    batch = pred.batch
    obs = config.observed
    if batch.n_frames < obs + len(pred.poses):
        raise ad.DimensionError(
            f"ground truth has {batch.n_frames - obs} future frames, prediction {len(pred.poses)}")
    truth = batch.human_poses
    g_h = _membership(batch.human_window, batch.n_windows)
    sq = None
    for k, pose in enumerate(pred.poses):
        r = pose - Tensor(truth[obs + k])
        term = g_h @ ad.sum(r * r, axis=1)
        sq = term if sq is None else sq + term
    loss = ad.sqrt(sq)
    if config.omp and len(batch.object_rows):
        g_o = _membership(batch.object_window, batch.n_windows)
        true_boxes = batch.object_boxes
        sq_o = None
        for k, boxes in enumerate(pred.boxes):
            r = ad.take_rows(boxes, batch.object_rows) - Tensor(true_boxes[obs + k])
            term = g_o @ ad.sum(r * r, axis=1)
            sq_o = term if sq_o is None else sq_o + term
        loss = loss + ad.sqrt(sq_o)
    return loss


def l2_loss(pred: BatchPrediction, config: ModelConfig) -> Tensor:
    """Mean over windows of the per-window L2 loss (a scalar tensor)."""
    return ad.mean(window_losses(pred, config))


class Adam:
    """Bias-corrected Adam over a dict of named parameter tensors."""

    def __init__(self, params: Params, lr: float = LEARNING_RATE, beta1: float = BETA1,
                 beta2: float = BETA2, eps: float = EPSILON):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        if grads is None:
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                     for k, p in self.params.items()}
        for k, g in grads.items():
            if not np.isfinite(g).all():
                bad = int((~np.isfinite(g)).sum())
                raise NumericError(f"non-finite gradient in parameter block {k!r} "
                                   f"({bad} of {g.size} entries)")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params: Params, grads: dict[str, np.ndarray], state: Adam) -> None:
    state.step(grads)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


@dataclass
class TrainReport:
    seed: int
    losses: list[tuple[int, float]] = field(default_factory=list)
    validation: list[tuple[int, int, float]] = field(default_factory=list)  # epoch, step, error
    clipped_steps: int = 0
    wall_clock: float = 0.0
    best_step: int = 0
    stopped_early: bool = False

    def loss_csv(self) -> str:
        return "step,loss\n" + "".join(f"{s},{l!r}\n" for s, l in self.losses)

    def validation_csv(self) -> str:
        return "epoch,step,val_error_mm\n" + "".join(f"{e},{s},{v!r}\n" for e, s, v in self.validation)


@dataclass
class TrainResult:
    params: Params
    report: TrainReport
    config: ModelConfig


def copy_params(params: Params) -> Params:
    return {k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in params.items()}


def make_windows(sequences: Sequence[SceneSequence], config: ModelConfig) -> list[SceneSequence]:
    out = []
    for s in sequences:
        out += extract_windows(s, config.observed, config.predicted)
    return out


def train_step(windows: Sequence[SceneSequence], config: ModelConfig, params: Params,
               opt: Adam, clip: float | None = CLIP_NORM) -> tuple[float, bool]:
    with ad.Tape() as tape:
        pred = forward_batch(WindowBatch.from_windows(windows), config, params)
        loss = l2_loss(pred, config)
        for p in params.values():
            p.zero_grad()
        ad.backward(loss, tape)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    clipped = False
    if clip is not None:
        grads, norm = clip_global_norm(grads, clip)
        clipped = norm > clip
        if clipped:
            logger.debug("step %d: clipped gradient norm %.4g to %.1f", opt.t + 1, norm, clip)
    opt.step(grads)
    return float(loss.data), clipped


def validation_error(windows: Sequence[SceneSequence], config: ModelConfig, params: Params,
                     batch_size: int = 64) -> float:
    """Mean human error (mm) over all horizons and windows."""
    from .evaluation import horizon_errors

    errs = horizon_errors(windows, lambda b: predict_batch(b, config, params), config.observed,
                          config.predicted, batch_size=batch_size)
    return float(np.mean(errs["human"]))


def predict_batch(batch: WindowBatch, config: ModelConfig, params: Params) -> BatchPrediction:
    with ad.no_grad():
        return forward_batch(batch, config, params)


def train(train_sequences: Sequence[SceneSequence], config: ModelConfig, seed: int,
          max_steps: int, val_sequences: Sequence[SceneSequence] | None = None,
          patience: int | None = PATIENCE, batch_size: int = BATCH_SIZE,
          augment_data: bool = True, lr: float = LEARNING_RATE, clip: float | None = CLIP_NORM,
          params: Params | None = None,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Mini-batch Adam on all windows of ``train_sequences``.

    Stops after ``max_steps`` optimizer steps, or earlier once the validation
    error has not improved for ``patience`` epochs.  With validation data the
    best-validation parameters are returned.
    """
    windows = make_windows(train_sequences, config)
    if not windows:
        raise DataError("training split yields no windows")
    val_windows = make_windows(val_sequences, config) if val_sequences else []
    init_rng, order_rng, aug_rng = (np.random.default_rng(s)
                                    for s in np.random.SeedSequence(seed).spawn(3))
    if params is None:
        params = init_params(config, init_rng)
    opt = Adam(params, lr=lr)
    report = TrainReport(seed=seed)
    best = copy_params(params)
    best_err = np.inf
    stale = 0
    step = 0
    epoch = 0
    bs = min(batch_size, len(windows))
    start = time.perf_counter()
    while step < max_steps:
        order = order_rng.permutation(len(windows))
        for lo in range(0, len(order) - bs + 1, bs):
            batch = [windows[i] for i in order[lo:lo + bs]]
            if augment_data:
                batch = [augment(w, aug_rng) for w in batch]
            loss, clipped = train_step(batch, config, params, opt, clip)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step + 1}")
            step += 1
            report.losses.append((step, loss))
            report.clipped_steps += clipped
            if on_step:
                on_step(step, loss)
            if step >= max_steps:
                break
        epoch += 1
        if val_windows:
            err = validation_error(val_windows, config, params)
            report.validation.append((epoch, step, err))
            logger.info("epoch %d step %d val %.2f mm", epoch, step, err)
            if err < best_err:
                best_err, stale = err, 0
                best = copy_params(params)
                report.best_step = step
            else:
                stale += 1
                if patience is not None and stale >= patience:
                    report.stopped_early = True
                    break
    report.wall_clock = time.perf_counter() - start
    if val_windows and report.validation:
        return TrainResult(best, report, config)
    report.best_step = step
    return TrainResult(params, report, config)
