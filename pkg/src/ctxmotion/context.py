"""Context branch: per-entity hidden states refined over a learned scene graph.

Several scenes can be processed at once by stacking their entities into one
row set; a :class:`GraphLayout` records which rows belong together so that
adjacency matrices stay block-diagonal (entities only interact within their
own scene).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

HEURISTIC_RADIUS_MM = 1000.0

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class GraphLayout:
    """Row bookkeeping for a stack of scenes with ``sizes[b]`` entities each."""

    sizes: tuple[int, ...]

    @classmethod
    def single(cls, n: int) -> "GraphLayout":
        return cls((n,))

    @property
    def total(self) -> int:
        return int(sum(self.sizes))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int)

    def blocks(self) -> list[slice]:
        return [slice(o, o + n) for o, n in zip(self.offsets, self.sizes)]

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.total, self.total), dtype=bool)
        for b in self.blocks():
            m[b, b] = True
        return m

    @property
    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column index of every ordered in-scene pair, diagonal included."""
        rows, cols = [], []
        for o, n in zip(self.offsets, self.sizes):
            r, c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            rows.append(o + r.ravel())
            cols.append(o + c.ravel())
        return np.concatenate(rows), np.concatenate(cols)

    def identity(self) -> np.ndarray:
        return np.eye(self.total)

    def split(self, matrix: np.ndarray) -> list[np.ndarray]:
        return [matrix[b, b] for b in self.blocks()]


@functools.lru_cache(maxsize=64)
def _pairs(layout: GraphLayout) -> tuple[np.ndarray, np.ndarray]:
    return layout.pairs


@functools.lru_cache(maxsize=64)
def _mask(layout: GraphLayout) -> np.ndarray:
    return layout.mask


def heuristic_adjacency(centers: np.ndarray, layout: GraphLayout | None = None,
                        radius: float = HEURISTIC_RADIUS_MM) -> np.ndarray:
    """Link entities whose centres are closer than ``radius`` mm, then row-normalise.

    The diagonal is always linked, so every row has at least one entry.
    """
    centers = np.asarray(centers, dtype=np.float64)
    layout = layout or GraphLayout.single(len(centers))
    d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    a = ((d < radius) & layout.mask).astype(np.float64)
    np.fill_diagonal(a, 1.0)
    return a / a.sum(axis=1, keepdims=True)


def predict_interactions(h: Tensor, g1: Tensor, g2: Tensor,
                         layout: GraphLayout | None = None) -> Tensor:
    """Pairwise logits ``g([h_i ; h_i - h_j])`` for every in-scene ordered pair.

    ``g1`` is (2C x C_mid) and ``g2`` (C_mid x 1), both bias-free with a
    rectifier in between.  Entries for cross-scene pairs are zero and are
    masked out by :func:`normalize_interactions`.
    """
    c = h.shape[1]
    if g1.shape[0] != 2 * c or g2.shape != (g1.shape[1], 1):
        raise DimensionError(
            f"interaction head {g1.shape}/{g2.shape} does not fit hidden width {c}")
    layout = layout or GraphLayout.single(h.shape[0])
    rows, cols = _pairs(layout)
    top = ad.slice(g1, 0, c, axis=0)
    bottom = ad.slice(g1, c, 2 * c, axis=0)
    # [h_i ; h_i - h_j] g1 = h_i (top + bottom) - h_j bottom
    u = h @ (top + bottom)
    v = h @ bottom
    hidden = ad.relu(ad.take_rows(u, rows) - ad.take_rows(v, cols))
    return ad.scatter_matrix(hidden @ g2, rows, cols, (layout.total, layout.total))


def normalize_interactions(logits: Tensor, layout: GraphLayout | None = None) -> Tensor:
    if layout is None or len(layout.sizes) == 1:
        return ad.softmax_rows(logits)
    return ad.softmax_rows(logits, _mask(layout))


def edge_convolution(x: Tensor, adj: Tensor, w: Tensor, activation: str = "relu") -> Tensor:
    """R_i = act( sum_j A_ij [x_i ; x_i - x_j] W ) for all nodes at once."""
    n, f = x.shape
    if adj.shape != (n, n):
        raise DimensionError(f"edge_convolution: adjacency {adj.shape} for {n} nodes")
    if w.shape[0] != 2 * f:
        raise DimensionError(f"edge_convolution: weights {w.shape} need {2 * f} input rows")
    w_self = ad.slice(w, 0, f, axis=0)
    w_diff = ad.slice(w, f, 2 * f, axis=0)
    row_mass = adj @ Tensor(np.ones((n, 1)))
    local = ad.scale_rows(x @ (w_self + w_diff), row_mass)
    return ACTIVATIONS[activation](local - (adj @ x) @ w_diff)


@dataclass
class GRUParams:
    """Gate weights packed as [reset | update | candidate] column blocks."""

    w_in: Tensor   # F x 3C
    w_hid: Tensor  # C x 3C
    b_in: Tensor   # 3C
    b_hid: Tensor  # 3C

    @property
    def hidden(self) -> int:
        return self.w_hid.shape[0]


def gru_step(x: Tensor, h: Tensor, p: GRUParams) -> Tensor:
    """One GRU update per row: h' = (1 - z) * n + z * h."""
    c = p.hidden
    if x.shape[1] != p.w_in.shape[0] or h.shape[1] != c or x.shape[0] != h.shape[0]:
        raise DimensionError(f"gru_step: input {x.shape}, hidden {h.shape}, "
                             f"weights {p.w_in.shape}/{p.w_hid.shape}")
    gi = ad.add_bias(x @ p.w_in, p.b_in)
    gh = ad.add_bias(h @ p.w_hid, p.b_hid)
    r = ad.sigmoid(ad.slice(gi, 0, c, 1) + ad.slice(gh, 0, c, 1))
    z = ad.sigmoid(ad.slice(gi, c, 2 * c, 1) + ad.slice(gh, c, 2 * c, 1))
    n = ad.tanh(ad.slice(gi, 2 * c, 3 * c, 1) + r * ad.slice(gh, 2 * c, 3 * c, 1))
    return n + z * (h - n)


def context_rnn_step(r: Tensor, h: Tensor, p: GRUParams) -> Tensor:
    return gru_step(r, h, p)


@dataclass
class ContextParams:
    edge_w: Tensor
    gru: GRUParams
    head_1: Tensor | None = None
    head_2: Tensor | None = None
    activation: str = "relu"

    @property
    def hidden(self) -> int:
        return self.gru.hidden


def context_adjacency(h: Tensor, centers: np.ndarray, p: ContextParams, layout: GraphLayout,
                      mode: str, first: bool) -> Tensor:
    if mode == "heuristic":
        return Tensor(heuristic_adjacency(centers, layout))
    if mode != "learned":
        raise ValueError(f"unknown adjacency mode {mode!r}")
    if first:
        return Tensor(layout.identity())
    return normalize_interactions(predict_interactions(h, p.head_1, p.head_2, layout), layout)


def context_update(x: Tensor, adj: Tensor, h: Tensor, p: ContextParams) -> Tensor:
    r = edge_convolution(x, adj, p.edge_w, p.activation)
    return context_rnn_step(r, h, p.gru)


def context_observe(features: Sequence[Tensor | np.ndarray], centers: Sequence[np.ndarray],
                    p: ContextParams, mode: str = "learned",
                    layout: GraphLayout | None = None) -> tuple[Tensor, list[Tensor]]:
    """Run the context branch over observed frames.

    Returns the hidden bank after the last frame and the adjacency used at
    every frame.  The bank starts at zero; in learned mode the first frame
    uses the identity.
    """
    if not features:
        raise ad.ContractError("context_observe: no frames")
    n = features[0].shape[0]
    layout = layout or GraphLayout.single(n)
    h = Tensor(np.zeros((n, p.hidden)))
    series = []
    for k, (x, c) in enumerate(zip(features, centers)):
        if x.shape[0] != n:
            raise ad.ContractError(f"context_observe: roster changed at frame {k}")
        x = x if isinstance(x, Tensor) else Tensor(x)
        adj = context_adjacency(h, c, p, layout, mode, first=(k == 0))
        series.append(adj)
        h = context_update(x, adj, h, p)
    return h, series
