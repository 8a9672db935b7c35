"""Mean Euclidean errors per horizon, report tables and interaction statistics."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import N_JOINTS, OBSERVED, PREDICTED, SceneSequence, box_vertices
from .model import DISPLAY_NAMES, BatchPrediction, WindowBatch

COARSE_HORIZONS = (5, 10, 15, 20)
HUMAN_ROWS = ("zv", "rnn", "crnn", "crnn-omp", "crnn-li", "crnn-omp-li")
OBJECT_ROWS = ("zv", "rnn", "crnn-omp", "crnn-omp-li")


def _horizon_index(horizon: int, available: int) -> int:
    if not 1 <= horizon <= available:
        raise ValueError(f"horizon {horizon} outside 1..{available}")
    return horizon - 1


def human_error(pred_poses: np.ndarray, true_poses: np.ndarray, horizon: int | None = None) -> float:
    """Mean over joints (and humans) of the 3-D distance, in mm.

    Arrays are (..., 18, 3) or (..., 54); with ``horizon`` the leading axis is
    time and only that step (1-based) is scored.
    """
    p = np.asarray(pred_poses, dtype=np.float64)
    t = np.asarray(true_poses, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"human_error: shape mismatch {p.shape} vs {t.shape}")
    if horizon is not None:
        i = _horizon_index(horizon, p.shape[0])
        p, t = p[i], t[i]
    p = p.reshape(-1, N_JOINTS, 3)
    t = t.reshape(-1, N_JOINTS, 3)
    return float(np.linalg.norm(p - t, axis=-1).mean())


def object_error(pred_boxes: np.ndarray, true_boxes: np.ndarray, horizon: int | None = None) -> float:
    """Mean over the 8 box vertices (and objects) of the vertex distance, in mm."""
    p = np.asarray(pred_boxes, dtype=np.float64)
    t = np.asarray(true_boxes, dtype=np.float64)
    if p.shape != t.shape or p.shape[-1] != 6:
        raise ValueError(f"object_error: shape mismatch {p.shape} vs {t.shape}")
    if horizon is not None:
        i = _horizon_index(horizon, p.shape[0])
        p, t = p[i], t[i]
    d = np.linalg.norm(box_vertices(p) - box_vertices(t), axis=-1)
    return float(d.mean())


def horizon_errors(windows: Sequence[SceneSequence],
                   predictor: Callable[[WindowBatch], BatchPrediction],
                   observed: int = OBSERVED, predicted: int = PREDICTED,
                   batch_size: int = 64) -> dict[str, np.ndarray]:
    """Per-horizon errors averaged over windows.

    Each window is scored on its own (mean over its joints and humans, or
    vertices and objects) and windows are then weighted equally.  Returns
    ``human`` (always) and ``object`` (only if the predictor moves boxes and
    some window has objects), each of length ``predicted``.
    """
    human_rows, object_rows = [], []
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo:lo + batch_size]
        batch = WindowBatch.from_windows(chunk)
        pred = predictor(batch)
        poses = np.stack([p.data for p in pred.poses])  # (P, Bh, 54)
        truth = batch.human_poses[observed:observed + predicted]
        d = np.linalg.norm((poses - truth).reshape(predicted, -1, N_JOINTS, 3), axis=-1).mean(axis=2)
        for w in range(batch.n_windows):
            sel = batch.human_window == w
            human_rows.append(d[:, sel].mean(axis=1))
        if pred.boxes is not None and len(batch.object_rows):
            boxes = np.stack([b.data for b in pred.boxes])[:, batch.object_rows]
            tb = batch.object_boxes[observed:observed + predicted]
            dv = np.linalg.norm(box_vertices(boxes) - box_vertices(tb), axis=-1).mean(axis=2)
            for w in range(batch.n_windows):
                sel = batch.object_window == w
                if sel.any():
                    object_rows.append(dv[:, sel].mean(axis=1))
    out = {"human": np.mean(human_rows, axis=0) if human_rows else np.full(predicted, np.nan)}
    if object_rows:
        out["object"] = np.mean(object_rows, axis=0)
    return out


@dataclass
class HorizonTable:
    """Error (mm) per model at each 100 ms horizon."""

    title: str
    row_order: tuple[str, ...]
    horizons: tuple[int, ...] = tuple(range(1, 21))
    rows: dict[str, np.ndarray] = field(default_factory=dict)

    def set_row(self, key: str, errors: Sequence[float]) -> None:
        errors = np.asarray(errors, dtype=np.float64)
        if (errors[np.isfinite(errors)] < 0).any():
            raise ValueError("negative error")
        self.rows[key] = errors

    def coarse(self) -> "HorizonTable":
        idx = [self.horizons.index(h) for h in COARSE_HORIZONS]
        return HorizonTable(self.title, self.row_order, COARSE_HORIZONS,
                            {k: v[idx] for k, v in self.rows.items()})

    @property
    def times(self) -> list[str]:
        return [f"{h / 10:g}" for h in self.horizons]

    def values(self, key: str) -> np.ndarray:
        return self.rows.get(key, np.full(len(self.horizons), np.nan))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + self.times)
        for key in self.row_order:
            w.writerow([DISPLAY_NAMES[key]] + ["" if not np.isfinite(v) else f"{v:.6f}"
                                                for v in self.values(key)])
        return buf.getvalue()

    def to_text(self) -> str:
        head = ["Time (s)"] + self.times
        body = [[DISPLAY_NAMES[k]] + ["-" if not np.isfinite(v) else f"{v:.0f}" for v in self.values(k)]
                for k in self.row_order]
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.rjust(wd) if i else c.ljust(wd)  # noqa: E731
                                  for i, (c, wd) in enumerate(zip(r, widths)))
        rule = "-" * len(fmt(head))
        return "\n".join([self.title, rule, fmt(head), rule] + [fmt(r) for r in body] + [rule]) + "\n"


def empty_tables(fine: bool = True) -> tuple[HorizonTable, HorizonTable]:
    human = HorizonTable("Human motion prediction", HUMAN_ROWS)
    obj = HorizonTable("Object motion prediction", OBJECT_ROWS)
    return human, obj


# --------------------------------------------------------------------------
# interaction statistics


@dataclass(frozen=True)
class InteractionRecord:
    window: int
    frame: int
    src_entity: str
    dst_entity: str
    weight: float
    src_type: str = ""
    dst_type: str = ""


INTERACTION_COLUMNS = ("frame", "src_entity", "dst_entity", "weight", "window", "src_type", "dst_type")


def interaction_records(interactions: np.ndarray, entity_ids: Sequence[str],
                        entity_types: Sequence[str], window: int = 0) -> list[InteractionRecord]:
    """Flatten an (F, N, N) series; row i (src) attends to column j (dst) with weight A_ij."""
    out = []
    for f, a in enumerate(interactions):
        for i, src in enumerate(entity_ids):
            for j, dst in enumerate(entity_ids):
                out.append(InteractionRecord(window, f, src, dst, float(a[i, j]),
                                             entity_types[i], entity_types[j]))
    return out


def write_interactions_csv(records: Iterable[InteractionRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(INTERACTION_COLUMNS)
    for r in records:
        w.writerow([r.frame, r.src_entity, r.dst_entity, repr(r.weight), r.window, r.src_type, r.dst_type])


def read_interactions_csv(fh) -> list[InteractionRecord]:
    out = []
    for row in csv.DictReader(fh):
        out.append(InteractionRecord(int(row.get("window") or 0), int(row["frame"]),
                                     row["src_entity"], row["dst_entity"], float(row["weight"]),
                                     row.get("src_type", ""), row.get("dst_type", "")))
    return out


def interaction_statistics(records: Iterable[InteractionRecord], grouping: str = "type"
                           ) -> dict[tuple[str, str], np.ndarray]:
    """Average weight per frame index for every ordered (src, dst) group.

    ``grouping`` is ``"type"`` (pool entities by class) or ``"entity"``.  Each
    curve entry is the mean over all records of that group at that frame.
    Self-interaction curves are the groups with ``src == dst`` under entity
    grouping, or the diagonal records pooled by type (key ``(t, t)`` with
    ``grouping="self"``).
    """
    sums: dict[tuple[str, str], dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        if grouping == "type":
            key = (r.src_type, r.dst_type)
        elif grouping == "entity":
            key = (r.src_entity, r.dst_entity)
        elif grouping == "self":
            if r.src_entity != r.dst_entity:
                continue
            key = (r.src_type, r.dst_type)
        else:
            raise ValueError(f"unknown grouping {grouping!r}")
        sums[key][r.frame].append(r.weight)
    curves = {}
    for key, by_frame in sums.items():
        n = max(by_frame) + 1
        curve = np.full(n, np.nan)
        for f, ws in by_frame.items():
            curve[f] = float(np.mean(ws))
        curves[key] = curve
    return curves


def curves_csv(curves: dict[tuple[str, str], np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["src", "dst", "frame", "mean_weight"])
    for (src, dst), c in sorted(curves.items()):
        for f, v in enumerate(c):
            if np.isfinite(v):
                w.writerow([src, dst, f, repr(float(v))])
    return buf.getvalue()
