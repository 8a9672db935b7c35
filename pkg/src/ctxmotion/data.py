"""Scene representation, line-delimited scene files, features and augmentation.

Coordinates are absolute millimetres in a Z-up world frame.  A scene keeps its
per-frame geometry in dense arrays:

* ``boxes``  -- (T, N, 6) as [min x, min y, min z, max x, max y, max z]
* ``joints`` -- (T, N, 54), 18 xyz joints for humans, zeros for objects
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_JOINTS = 18
JOINT_DIM = 3 * N_JOINTS
BOX_DIM = 6
STEP_MS = 100
OBSERVED = 10
PREDICTED = 20

JOINT_NAMES = (
    "pelvis", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_shoulder", "r_elbow", "r_wrist", "r_hand",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

DEFAULT_VOCABULARY = (
    "human", "table", "cup", "box", "sponge", "knife", "bottle", "ladder",
    "whisk", "bowl", "plate", "spoon", "cutting_board", "chair", "shelf",
)

HUMAN_TYPE = "human"


class SchemaError(ValueError):
    """A scene file or record violates the scene schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class VocabularyError(SchemaError):
    pass


class RateError(ValueError):
    pass


class SplitError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    names: tuple[str, ...] = DEFAULT_VOCABULARY
    human_type: str = HUMAN_TYPE

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise VocabularyError("vocabulary has duplicate names")
        if self.human_type not in self.names:
            raise VocabularyError(f"human type {self.human_type!r} missing from vocabulary")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise VocabularyError(f"unknown type {name!r}") from None

    def one_hot(self, name: str) -> np.ndarray:
        v = np.zeros(len(self.names))
        v[self.index(name)] = 1.0
        return v


@dataclass(frozen=True)
class BoundingBox:
    min_corner: np.ndarray
    max_corner: np.ndarray

    @classmethod
    def from_array(cls, a) -> "BoundingBox":
        a = np.asarray(a, dtype=np.float64)
        return cls(a[:3].copy(), a[3:6].copy())

    @classmethod
    def of_points(cls, points) -> "BoundingBox":
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(p.min(axis=0), p.max(axis=0))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.min_corner, self.max_corner])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def vertices(self) -> np.ndarray:
        return box_vertices(self.as_array())

    def is_ordered(self) -> bool:
        return bool(np.all(self.min_corner <= self.max_corner))


def box_vertices(boxes: np.ndarray) -> np.ndarray:
    """(..., 6) boxes to (..., 8, 3) corners, x varying slowest."""
    boxes = np.asarray(boxes, dtype=np.float64)
    lo, hi = boxes[..., :3], boxes[..., 3:6]
    corners = []
    for sx, sy, sz in itertools.product((0, 1), repeat=3):
        corners.append(np.stack([
            hi[..., 0] if sx else lo[..., 0],
            hi[..., 1] if sy else lo[..., 1],
            hi[..., 2] if sz else lo[..., 2],
        ], axis=-1))
    return np.stack(corners, axis=-2)


def box_centers(boxes: np.ndarray) -> np.ndarray:
    return 0.5 * (boxes[..., :3] + boxes[..., 3:6])


def entity_centers(boxes: np.ndarray, joints: np.ndarray, human_mask: np.ndarray) -> np.ndarray:
    """Reference point per entity for the distance rule, (N, 3).

    Objects use the box centre and humans the mean of their joints.  The joint
    extent's centre would shift when the body turns, so distances measured from
    it are not preserved by a rotation of the scene.
    """
    c = box_centers(np.asarray(boxes, dtype=np.float64))
    if np.any(human_mask):
        p = np.asarray(joints, dtype=np.float64)[human_mask].reshape(-1, N_JOINTS, 3)
        c[human_mask] = p.mean(axis=1)
    return c


@dataclass(frozen=True)
class EntityObservation:
    entity_id: str
    type_name: str
    box: BoundingBox
    joints: np.ndarray | None = None


@dataclass
class SceneSequence:
    """Time-ordered frames of a fixed entity roster at a uniform step."""

    entity_ids: list[str]
    entity_types: list[str]
    boxes: np.ndarray
    joints: np.ndarray
    vocabulary: Vocabulary = field(default_factory=Vocabulary)
    step_ms: int = STEP_MS
    joint_names: tuple[str, ...] = JOINT_NAMES
    name: str = ""
    meta: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        self.joints = np.asarray(self.joints, dtype=np.float64)
        t, n = self.boxes.shape[:2]
        if self.boxes.shape != (t, n, BOX_DIM) or self.joints.shape != (t, n, JOINT_DIM):
            raise SchemaError(
                f"geometry shapes {self.boxes.shape} / {self.joints.shape} "
                f"do not describe {t} frames of {n} entities")
        if len(self.entity_ids) != n or len(self.entity_types) != n:
            raise SchemaError("roster length does not match geometry")
        if len(set(self.entity_ids)) != n:
            raise SchemaError("duplicate entity ids")
        for name in self.entity_types:
            self.vocabulary.index(name)

    @property
    def n_frames(self) -> int:
        return self.boxes.shape[0]

    @property
    def n_entities(self) -> int:
        return self.boxes.shape[1]

    @property
    def human_mask(self) -> np.ndarray:
        return np.array([t == self.vocabulary.human_type for t in self.entity_types])

    @property
    def human_indices(self) -> np.ndarray:
        return np.flatnonzero(self.human_mask)

    @property
    def type_indices(self) -> np.ndarray:
        return np.array([self.vocabulary.index(t) for t in self.entity_types], dtype=int)

    def frame(self, t: int) -> list[EntityObservation]:
        out = []
        for k, (eid, typ) in enumerate(zip(self.entity_ids, self.entity_types)):
            joints = self.joints[t, k].reshape(N_JOINTS, 3) if typ == self.vocabulary.human_type else None
            out.append(EntityObservation(eid, typ, BoundingBox.from_array(self.boxes[t, k]), joints))
        return out

    def subsequence(self, start: int, stop: int) -> "SceneSequence":
        return SceneSequence(
            list(self.entity_ids), list(self.entity_types),
            self.boxes[start:stop].copy(), self.joints[start:stop].copy(),
            self.vocabulary, self.step_ms, self.joint_names, self.name,
            self.meta[start:stop] if self.meta else [],
        )

    @classmethod
    def from_frames(cls, frames: Sequence[Sequence[EntityObservation]],
                    vocabulary: Vocabulary | None = None, step_ms: int = STEP_MS,
                    name: str = "") -> "SceneSequence":
        vocabulary = vocabulary or Vocabulary()
        if not frames:
            raise SchemaError("scene has no frames")
        ids = [e.entity_id for e in frames[0]]
        types = [e.type_name for e in frames[0]]
        boxes = np.zeros((len(frames), len(ids), BOX_DIM))
        joints = np.zeros((len(frames), len(ids), JOINT_DIM))
        for t, obs in enumerate(frames):
            if [e.entity_id for e in obs] != ids:
                raise ContractError(f"frame {t}: entity roster changed")
            for k, e in enumerate(obs):
                validate_observation(e, vocabulary)
                boxes[t, k] = e.box.as_array()
                if e.joints is not None:
                    joints[t, k] = np.asarray(e.joints, dtype=np.float64).reshape(-1)
        return cls(ids, types, boxes, joints, vocabulary, step_ms, name=name)


def validate_observation(e: EntityObservation, vocabulary: Vocabulary) -> None:
    vocabulary.index(e.type_name)
    is_human = e.type_name == vocabulary.human_type
    if is_human != (e.joints is not None):
        raise SchemaError(f"entity {e.entity_id}: skeleton must be present iff type is "
                          f"{vocabulary.human_type!r}")
    if e.joints is not None:
        j = np.asarray(e.joints, dtype=np.float64)
        if j.size != JOINT_DIM:
            raise SchemaError(f"entity {e.entity_id}: expected {N_JOINTS} joints, got {j.size / 3:g}")
        if not np.isfinite(j).all():
            raise SchemaError(f"entity {e.entity_id}: non-finite joint coordinates")
    if not (np.isfinite(e.box.min_corner).all() and np.isfinite(e.box.max_corner).all()):
        raise SchemaError(f"entity {e.entity_id}: non-finite box")
    if not e.box.is_ordered():
        raise SchemaError(f"entity {e.entity_id}: box min corner exceeds max corner")


# --------------------------------------------------------------------------
# scene file format (JSON lines)


def scene_to_lines(seq: SceneSequence, extra_header: dict | None = None) -> list[str]:
    header = {
        "step_ms": seq.step_ms,
        "vocabulary": list(seq.vocabulary.names),
        "human_type": seq.vocabulary.human_type,
        "joint_names": list(seq.joint_names),
    }
    if seq.name:
        header["name"] = seq.name
    if extra_header:
        header.update(extra_header)
    lines = [json.dumps(header, sort_keys=True)]
    humans = seq.human_mask
    for t in range(seq.n_frames):
        ents = []
        for k, eid in enumerate(seq.entity_ids):
            rec = {
                "id": eid,
                "type": seq.entity_types[k],
                "box": {"min": seq.boxes[t, k, :3].tolist(), "max": seq.boxes[t, k, 3:].tolist()},
            }
            if humans[k]:
                rec["joints"] = seq.joints[t, k].tolist()
            ents.append(rec)
        frame = {"t_index": t, "entities": ents}
        if seq.meta and seq.meta[t]:
            frame.update(seq.meta[t])
        lines.append(json.dumps(frame, sort_keys=True))
    return lines


def write_scene(seq: SceneSequence, path: str | Path, extra_header: dict | None = None) -> None:
    Path(path).write_text("\n".join(scene_to_lines(seq, extra_header)) + "\n")


def parse_scene(lines: Iterable[str], name: str = "") -> tuple[SceneSequence, dict]:
    """Parse scene records; errors carry 1-based line numbers."""
    header = None
    frames: list[list[EntityObservation]] = []
    meta: list[dict] = []
    vocab = None
    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise SchemaError("record is not an object", lineno)
        if header is None:
            header = rec
            try:
                vocab = Vocabulary(tuple(rec["vocabulary"]), rec.get("human_type", HUMAN_TYPE))
                step = rec["step_ms"]
            except KeyError as exc:
                raise SchemaError(f"header missing {exc.args[0]!r}", lineno) from None
            except VocabularyError as exc:
                raise SchemaError(str(exc), lineno) from None
            if not isinstance(step, (int, float)) or step <= 0:
                raise SchemaError("step_ms must be positive", lineno)
            names = rec.get("joint_names", list(JOINT_NAMES))
            if len(names) != N_JOINTS:
                raise SchemaError(f"joint_names must list {N_JOINTS} joints", lineno)
            continue
        try:
            if rec["t_index"] != len(frames):
                raise SchemaError(f"expected t_index {len(frames)}, got {rec['t_index']}", lineno)
            obs = []
            for e in rec["entities"]:
                box = BoundingBox(np.asarray(e["box"]["min"], dtype=np.float64),
                                  np.asarray(e["box"]["max"], dtype=np.float64))
                if box.min_corner.shape != (3,) or box.max_corner.shape != (3,):
                    raise SchemaError(f"entity {e['id']}: box corners need 3 coordinates", lineno)
                joints = e.get("joints")
                o = EntityObservation(str(e["id"]), e["type"], box,
                                      None if joints is None else np.asarray(joints, dtype=np.float64))
                validate_observation(o, vocab)
                obs.append(o)
        except SchemaError as exc:
            if exc.line is None:
                raise SchemaError(str(exc), lineno) from None
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed frame record ({exc})", lineno) from None
        if frames and [o.entity_id for o in obs] != [o.entity_id for o in frames[0]]:
            raise SchemaError("entity roster differs from the first frame", lineno)
        frames.append(obs)
        meta.append({k: v for k, v in rec.items() if k not in ("t_index", "entities")})
    if header is None:
        raise SchemaError("empty scene file", lineno or None)
    if not frames:
        raise SchemaError("scene has no frames", lineno)
    seq = SceneSequence.from_frames(frames, vocab, int(header["step_ms"]), name=header.get("name", name))
    seq.joint_names = tuple(header.get("joint_names", JOINT_NAMES))
    if any(meta):
        seq.meta = meta
    return seq, header


def read_scene(path: str | Path, resample: bool = True) -> SceneSequence:
    """Load a scene file, resampling to 100 ms when it was recorded faster."""
    path = Path(path)
    with path.open() as fh:
        seq, _ = parse_scene(fh, name=path.stem)
    if resample and seq.step_ms != STEP_MS:
        if STEP_MS % seq.step_ms:
            raise RateError(f"{path}: step {seq.step_ms} ms does not divide {STEP_MS} ms")
        seq = resample_100ms(seq, 1000 // seq.step_ms)
    return seq


def content_hash(path: str | Path) -> str:
    """git-style blob hash of a file."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# --------------------------------------------------------------------------
# operations


def resample_100ms(raw: SceneSequence, source_hz: int) -> SceneSequence:
    if source_hz <= 0 or source_hz % 10:
        raise RateError(f"cannot reach 10 Hz from {source_hz} Hz with an integer stride")
    stride = source_hz // 10
    idx = np.arange(0, raw.n_frames, stride)
    return SceneSequence(
        list(raw.entity_ids), list(raw.entity_types),
        raw.boxes[idx].copy(), raw.joints[idx].copy(),
        raw.vocabulary, STEP_MS, raw.joint_names, raw.name,
        [raw.meta[i] for i in idx] if raw.meta else [],
    )


def feature_width(vocab_size: int) -> int:
    return BOX_DIM + vocab_size + JOINT_DIM


def node_features(boxes: np.ndarray, type_idx: np.ndarray, joints: np.ndarray,
                  vocab_size: int) -> np.ndarray:
    """Rows [box (6), type one-hot (K), joints (54)] for one frame."""
    n = boxes.shape[0]
    onehot = np.zeros((n, vocab_size))
    onehot[np.arange(n), type_idx] = 1.0
    return np.concatenate([boxes, onehot, joints], axis=1)


def human_box(joints: np.ndarray) -> np.ndarray:
    p = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    return np.concatenate([p.min(axis=0), p.max(axis=0)])


def build_node_features(frame: Sequence[EntityObservation],
                        vocabulary: Vocabulary | None = None) -> np.ndarray:
    """Node feature matrix for one frame of observations.

    A human's box is the axis-aligned extent of its 18 joints, whatever box
    the observation carries.
    """
    vocabulary = vocabulary or Vocabulary()
    if not frame:
        raise ContractError("empty roster")
    rows = []
    for e in frame:
        validate_observation(e, vocabulary)
        if e.joints is not None:
            joints = np.asarray(e.joints, dtype=np.float64).reshape(-1)
            box = human_box(joints)
        else:
            joints = np.zeros(JOINT_DIM)
            box = e.box.as_array()
        rows.append(np.concatenate([box, vocabulary.one_hot(e.type_name), joints]))
    return np.stack(rows)


def decode_node_features(x: np.ndarray, vocabulary: Vocabulary | None = None
                         ) -> list[tuple[np.ndarray, str, np.ndarray | None]]:
    """Inverse of :func:`build_node_features`: (box, type name, joints or None) per row."""
    vocabulary = vocabulary or Vocabulary()
    k = len(vocabulary)
    out = []
    for row in x:
        name = vocabulary.names[int(np.argmax(row[BOX_DIM:BOX_DIM + k]))]
        joints = row[BOX_DIM + k:].reshape(N_JOINTS, 3).copy()
        out.append((row[:BOX_DIM].copy(), name, joints if name == vocabulary.human_type else None))
    return out


def canonical_human_boxes(seq: SceneSequence) -> SceneSequence:
    """Replace every human box by the extent of its joints."""
    boxes = seq.boxes.copy()
    for k in seq.human_indices:
        p = seq.joints[:, k].reshape(seq.n_frames, N_JOINTS, 3)
        boxes[:, k, :3] = p.min(axis=1)
        boxes[:, k, 3:] = p.max(axis=1)
    out = seq.subsequence(0, seq.n_frames)
    out.boxes = boxes
    return out


def split_dataset(sequences: Sequence, seed: int) -> dict[str, list]:
    """Partition whole videos 60/20/20; val and test sizes are floored."""
    n = len(sequences)
    if n < 5:
        raise SplitError(f"need at least 5 sequences to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = n_test = n // 5
    n_train = n - n_val - n_test
    pick = lambda ix: [sequences[i] for i in sorted(ix)]  # noqa: E731
    return {
        "train": pick(order[:n_train]),
        "val": pick(order[n_train:n_train + n_val]),
        "test": pick(order[n_train + n_val:]),
    }


@dataclass(frozen=True)
class RigidTransform:
    angle: float  # radians about +Z
    translation: tuple[float, float]

    @property
    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def apply_points(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        shift = np.array([self.translation[0], self.translation[1], 0.0])
        return p @ self.rotation.T + shift


def sample_transform(rng: np.random.Generator) -> RigidTransform:
    # rotation in (-180, 180] degrees, translation in (-1500, 1500) mm
    angle = np.pi - rng.uniform(0.0, 2 * np.pi)
    tx, ty = rng.uniform(-1500.0, 1500.0, size=2)
    return RigidTransform(float(angle), (float(tx), float(ty)))


def apply_transform(seq: SceneSequence, tf: RigidTransform) -> SceneSequence:
    t, n = seq.n_frames, seq.n_entities
    corners = box_vertices(seq.boxes)  # (T, N, 8, 3)
    moved = tf.apply_points(corners)
    boxes = np.concatenate([moved.min(axis=2), moved.max(axis=2)], axis=-1)
    joints = seq.joints.copy()
    hm = seq.human_mask
    if hm.any():
        pts = joints[:, hm].reshape(t, hm.sum(), N_JOINTS, 3)
        joints[:, hm] = tf.apply_points(pts).reshape(t, hm.sum(), JOINT_DIM)
    out = seq.subsequence(0, t)
    out.boxes = boxes.reshape(t, n, BOX_DIM)
    out.joints = joints
    return out


def augment(seq: SceneSequence, rng: np.random.Generator) -> SceneSequence:
    """One random Z rotation and XY translation applied to the whole sequence."""
    return apply_transform(seq, sample_transform(rng))


# --------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class SequenceWindow:
    t_o: int
    observed: int = OBSERVED
    predicted: int = PREDICTED

    @property
    def t(self) -> int:
        return self.t_o + self.observed

    @property
    def t_f(self) -> int:
        return self.t + self.predicted - 1

    @property
    def length(self) -> int:
        return self.observed + self.predicted


def extract_windows(seq: SceneSequence, observed: int = OBSERVED, predicted: int = PREDICTED,
                    stride: int = 1) -> list[SceneSequence]:
    length = observed + predicted
    return [seq.subsequence(s, s + length) for s in range(0, seq.n_frames - length + 1, stride)]
