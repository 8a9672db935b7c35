"""Context-aware sequence-to-sequence motion predictor and its baselines.

The human branch is a residual GRU: each decode step emits a joint velocity
that is added to the previous pose, and the new pose is fed to the next step.
With context enabled, the decode head also reads the human's node in the
context branch.  With object motion prediction (OMP) the context branch keeps
running over the predicted future and a second residual head moves every
object box.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .context import (
    ContextParams,
    GRUParams,
    GraphLayout,
    context_adjacency,
    context_update,
    gru_step,
)
from .data import (
    BOX_DIM,
    DEFAULT_VOCABULARY,
    JOINT_DIM,
    N_JOINTS,
    OBSERVED,
    PREDICTED,
    SceneSequence,
    entity_centers,
    feature_width,
)


class ConfigError(ValueError):
    pass


VARIANTS = {
    "zv": None,
    "rnn": dict(context=False, li=False, omp=False),
    "crnn": dict(context=True, li=False, omp=False),
    "crnn-li": dict(context=True, li=True, omp=False),
    "crnn-omp": dict(context=True, li=False, omp=True),
    "crnn-omp-li": dict(context=True, li=True, omp=True),
}

DISPLAY_NAMES = {
    "zv": "ZV",
    "rnn": "RNN",
    "crnn": "C-RNN",
    "crnn-omp": "C-RNN+OMP",
    "crnn-li": "C-RNN+LI",
    "crnn-omp-li": "C-RNN+OMP+LI",
}


@dataclass(frozen=True)
class ModelConfig:
    context: bool = True
    li: bool = False
    omp: bool = False
    human_hidden: int = 1024
    context_hidden: int = 256
    interaction_hidden: int = 128
    vocab_size: int = len(DEFAULT_VOCABULARY)
    observed: int = OBSERVED
    predicted: int = PREDICTED
    activation: str = "relu"
    scale_inputs: bool = False

    def __post_init__(self):
        if self.omp and not self.context:
            raise ConfigError("object motion prediction requires the context branch")
        if self.li and not self.context:
            raise ConfigError("learned interactions require the context branch")
        if self.observed < 1 or self.predicted < 1:
            raise ConfigError("observed and predicted lengths must be positive")
        if min(self.human_hidden, self.context_hidden, self.interaction_hidden, self.vocab_size) < 1:
            raise ConfigError("widths must be positive")

    @classmethod
    def for_variant(cls, variant: str, **kw) -> "ModelConfig":
        if variant not in VARIANTS or VARIANTS[variant] is None:
            raise ConfigError(f"{variant!r} is not a trainable variant")
        return cls(**VARIANTS[variant], **kw)

    @property
    def variant(self) -> str:
        if not self.context:
            return "rnn"
        return "crnn" + ("-omp" if self.omp else "") + ("-li" if self.li else "")

    @property
    def unit(self) -> float:
        """Factor applied to millimetre inputs before they enter the network."""
        return 1e-3 if self.scale_inputs else 1.0

    @property
    def feature_width(self) -> int:
        return feature_width(self.vocab_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


Params = dict[str, Tensor]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    hh, hc = config.human_hidden, config.context_hidden
    shapes: dict[str, tuple[int, ...]] = {
        "human.gru.w_in": (JOINT_DIM, 3 * hh),
        "human.gru.w_hid": (hh, 3 * hh),
        "human.gru.b_in": (3 * hh,),
        "human.gru.b_hid": (3 * hh,),
        "human.head.w": (hh + (hc if config.context else 0), JOINT_DIM),
        "human.head.b": (JOINT_DIM,),
    }
    if config.context:
        f0 = config.feature_width
        shapes.update({
            "context.edge.w": (2 * f0, hc),
            "context.gru.w_in": (hc, 3 * hc),
            "context.gru.w_hid": (hc, 3 * hc),
            "context.gru.b_in": (3 * hc,),
            "context.gru.b_hid": (3 * hc,),
        })
    if config.li:
        shapes.update({
            "interaction.w1": (2 * hc, config.interaction_hidden),
            "interaction.w2": (config.interaction_hidden, 1),
        })
    if config.omp:
        shapes.update({
            "object.head.w": (hc, BOX_DIM),
            "object.head.b": (BOX_DIM,),
        })
    return shapes


def count_parameters(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def init_params(config: ModelConfig, rng: np.random.Generator) -> Params:
    """Glorot-uniform weight matrices, zero biases."""
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            data = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def zero_params(config: ModelConfig) -> Params:
    return {n: Tensor(np.zeros(s), requires_grad=True, name=n)
            for n, s in param_shapes(config).items()}


def _gru(params: Params, prefix: str) -> GRUParams:
    return GRUParams(params[f"{prefix}.w_in"], params[f"{prefix}.w_hid"],
                     params[f"{prefix}.b_in"], params[f"{prefix}.b_hid"])


def context_params(config: ModelConfig, params: Params) -> ContextParams:
    return ContextParams(
        params["context.edge.w"], _gru(params, "context.gru"),
        params.get("interaction.w1"), params.get("interaction.w2"), config.activation)


# --------------------------------------------------------------------------
# batches of windows


@dataclass
class WindowBatch:
    """Several windows stacked entity-wise for one batched forward pass."""

    boxes: np.ndarray         # (T, M, 6), human rows replaced by joint extents
    joints: np.ndarray        # (T, M, 54)
    type_idx: np.ndarray      # (M,)
    layout: GraphLayout
    human_rows: np.ndarray    # (Bh,) row of every human in the stack
    human_window: np.ndarray  # (Bh,) window each human belongs to
    object_rows: np.ndarray   # (Bo,)
    object_window: np.ndarray  # (Bo,)
    n_windows: int
    entity_ids: list[list[str]] = field(default_factory=list)
    entity_types: list[list[str]] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.boxes.shape[0]

    @property
    def human_poses(self) -> np.ndarray:
        """(T, Bh, 54)"""
        return self.joints[:, self.human_rows]

    @property
    def object_boxes(self) -> np.ndarray:
        return self.boxes[:, self.object_rows]

    @classmethod
    def from_windows(cls, windows: Sequence[SceneSequence]) -> "WindowBatch":
        if not windows:
            raise ValueError("empty batch")
        t = windows[0].n_frames
        if any(w.n_frames != t for w in windows):
            raise ad.ContractError("windows in a batch must have the same length")
        boxes, joints, types = [], [], []
        hrows, hwin, orows, owin = [], [], [], []
        offset = 0
        for b, w in enumerate(windows):
            n = w.n_entities
            hm = w.human_mask
            bx = w.boxes.copy()
            if hm.any():
                p = w.joints[:, hm].reshape(t, hm.sum(), N_JOINTS, 3)
                bx[:, hm] = np.concatenate([p.min(axis=2), p.max(axis=2)], axis=-1)
            boxes.append(bx)
            joints.append(w.joints)
            types.append(w.type_indices)
            hrows += list(offset + np.flatnonzero(hm))
            hwin += [b] * int(hm.sum())
            orows += list(offset + np.flatnonzero(~hm))
            owin += [b] * int((~hm).sum())
            offset += n
        return cls(
            np.concatenate(boxes, axis=1), np.concatenate(joints, axis=1),
            np.concatenate(types), GraphLayout(tuple(w.n_entities for w in windows)),
            np.array(hrows, dtype=int), np.array(hwin, dtype=int),
            np.array(orows, dtype=int), np.array(owin, dtype=int), len(windows),
            [list(w.entity_ids) for w in windows], [list(w.entity_types) for w in windows],
        )

    @property
    def human_mask(self) -> np.ndarray:
        m = np.zeros(self.layout.total, dtype=bool)
        m[self.human_rows] = True
        return m

    def centers(self, k: int) -> np.ndarray:
        """Distance-rule reference points of every entity at frame ``k``."""
        return entity_centers(self.boxes[k], self.joints[k], self.human_mask)

    def features(self, k: int, vocab_size: int, unit: float) -> np.ndarray:
        m = self.layout.total
        onehot = np.zeros((m, vocab_size))
        onehot[np.arange(m), self.type_idx] = 1.0
        return np.concatenate([self.boxes[k] * unit, onehot, self.joints[k] * unit], axis=1)


@dataclass
class PredictionBundle:
    """Forecast for one window.

    poses: (predicted, n_humans, 18, 3) mm; boxes: (predicted, N, 6) mm or
    None; interactions: (frames, N, N), one row-stochastic matrix per frame
    the context branch processed.
    """

    poses: np.ndarray
    boxes: np.ndarray | None
    interactions: np.ndarray
    entity_ids: list[str] = field(default_factory=list)
    entity_types: list[str] = field(default_factory=list)


@dataclass
class BatchPrediction:
    poses: list[Tensor]               # per decode step, (Bh, 54)
    boxes: list[Tensor] | None        # per decode step, (M, 6)
    adjacency: list[Tensor]           # per context frame, (M, M)
    batch: WindowBatch

    def bundles(self) -> list[PredictionBundle]:
        b = self.batch
        poses = np.stack([p.data for p in self.poses])  # (P, Bh, 54)
        boxes = np.stack([x.data for x in self.boxes]) if self.boxes is not None else None
        adj = np.stack([a.data for a in self.adjacency]) if self.adjacency else None
        out = []
        for w, blk in enumerate(b.layout.blocks()):
            hsel = b.human_window == w
            p = poses[:, hsel].reshape(poses.shape[0], int(hsel.sum()), N_JOINTS, 3)
            bx = boxes[:, blk].copy() if boxes is not None else None
            inter = adj[:, blk, blk].copy() if adj is not None else np.zeros((0, 0, 0))
            out.append(PredictionBundle(p, bx, inter, b.entity_ids[w], b.entity_types[w]))
        return out


def _check_batch(batch: WindowBatch, config: ModelConfig) -> None:
    if batch.n_frames < config.observed:
        raise ad.ContractError(
            f"window has {batch.n_frames} frames, need at least {config.observed} observed")
    if batch.type_idx.max(initial=0) >= config.vocab_size:
        raise ad.ContractError("entity type index exceeds the model vocabulary")
    if len(batch.human_rows) == 0:
        raise ad.ContractError("window has no human to predict")


def forward_batch(batch: WindowBatch, config: ModelConfig, params: Params) -> BatchPrediction:
    """Encode the observed frames of every window and decode ``predicted`` steps.

    Only frames ``0 .. observed-1`` of the batch are read.
    """
    _check_batch(batch, config)
    unit, inv = config.unit, 1.0 / config.unit
    obs, steps = config.observed, config.predicted
    layout = batch.layout
    m = layout.total
    mode = "learned" if config.li else "heuristic"

    adjacency: list[Tensor] = []
    h_ctx = None
    cp = None
    if config.context:
        cp = context_params(config, params)
        h_ctx = Tensor(np.zeros((m, config.context_hidden)))
        for k in range(obs):
            x = Tensor(batch.features(k, config.vocab_size, unit))
            adj = context_adjacency(h_ctx, batch.centers(k), cp, layout, mode, k == 0)
            adjacency.append(adj)
            h_ctx = context_update(x, adj, h_ctx, cp)

    human_gru = _gru(params, "human.gru")
    poses_obs = batch.human_poses
    h_hum = Tensor(np.zeros((len(batch.human_rows), config.human_hidden)))
    for k in range(obs - 1):
        h_hum = gru_step(Tensor(poses_obs[k] * unit), h_hum, human_gru)

    pose = Tensor(poses_obs[obs - 1])
    boxes = Tensor(batch.boxes[obs - 1]) if config.omp else None
    if config.omp:
        onehot = np.zeros((m, config.vocab_size))
        onehot[np.arange(m), batch.type_idx] = 1.0
        onehot = Tensor(onehot)
        # row r of the stack takes joints from human slot gather[r] (0 = zeros)
        gather = np.zeros(m, dtype=int)
        gather[batch.human_rows] = 1 + np.arange(len(batch.human_rows))
        zero_row = Tensor(np.zeros((1, JOINT_DIM)))
        is_human = np.zeros((m, 1))
        is_human[batch.human_rows] = 1.0
        is_object = Tensor(1.0 - is_human)
        is_human = Tensor(is_human)

    pred_poses, pred_boxes = [], []
    for k in range(steps):
        h_hum = gru_step(pose * unit, h_hum, human_gru)
        head_in = h_hum
        if config.context:
            head_in = ad.concat([h_hum, ad.take_rows(h_ctx, batch.human_rows)], axis=1)
        velocity = ad.add_bias(head_in @ params["human.head.w"], params["human.head.b"])
        pose = pose + velocity * inv
        pred_poses.append(pose)
        if not config.omp:
            continue
        box_velocity = ad.add_bias(h_ctx @ params["object.head.w"], params["object.head.b"])
        moved = boxes + box_velocity * inv
        # humans take the extent of their predicted joints instead of the box head
        extents = ad.take_rows(ad.concat([Tensor(np.zeros((1, BOX_DIM))), ad.point_extent(pose)]),
                               gather)
        boxes = ad.scale_rows(moved, is_object) + ad.scale_rows(extents, is_human)
        pred_boxes.append(boxes)
        if k == steps - 1:
            break
        joints = ad.take_rows(ad.concat([zero_row, pose]), gather)
        x = ad.concat([boxes * unit, onehot, joints * unit], axis=1)
        centers = entity_centers(boxes.data, joints.data, batch.human_mask)
        adj = context_adjacency(h_ctx, centers, cp, layout, mode, first=False)
        adjacency.append(adj)
        h_ctx = context_update(x, adj, h_ctx, cp)

    return BatchPrediction(pred_poses, pred_boxes if config.omp else None, adjacency, batch)


def forward(window: SceneSequence, config: ModelConfig, params: Params) -> PredictionBundle:
    return forward_batch(WindowBatch.from_windows([window]), config, params).bundles()[0]


def human_step(prev_pose: Tensor, hidden: Tensor, context: Tensor | None, params: Params,
               unit: float = 1.0) -> tuple[Tensor, Tensor]:
    """One decode step for a stack of humans (rows)."""
    if prev_pose.shape[1] != JOINT_DIM:
        raise ad.DimensionError(f"human_step: pose rows must have {JOINT_DIM} values")
    hidden = gru_step(prev_pose * unit, hidden, _gru(params, "human.gru"))
    head_in = hidden if context is None else ad.concat([hidden, context], axis=1)
    w = params["human.head.w"]
    if head_in.shape[1] != w.shape[0]:
        raise ad.DimensionError(f"human_step: head expects {w.shape[0]} inputs, got {head_in.shape[1]}")
    velocity = ad.add_bias(head_in @ w, params["human.head.b"])
    return prev_pose + velocity * (1.0 / unit), hidden


def object_step(node_hidden: Tensor, prev_box: Tensor, params: Params, config: ModelConfig) -> Tensor:
    if not config.omp:
        raise ad.ContractError("object_step needs a model with object motion prediction")
    velocity = ad.add_bias(node_hidden @ params["object.head.w"], params["object.head.b"])
    return prev_box + velocity * (1.0 / config.unit)


def zero_velocity_batch(batch: WindowBatch, observed: int = OBSERVED,
                        predicted: int = PREDICTED) -> BatchPrediction:
    pose = Tensor(batch.human_poses[observed - 1])
    box = Tensor(batch.boxes[observed - 1])
    return BatchPrediction([pose] * predicted, [box] * predicted, [], batch)


def zero_velocity_baseline(window: SceneSequence, observed: int = OBSERVED,
                           predicted: int = PREDICTED) -> PredictionBundle:
    """Repeat frame ``observed - 1`` for every predicted frame."""
    batch = WindowBatch.from_windows([window])
    return zero_velocity_batch(batch, observed, predicted).bundles()[0]


def with_widths(config: ModelConfig, **kw) -> ModelConfig:
    return replace(config, **kw)
