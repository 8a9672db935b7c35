"""Parametric scenes with known attachment structure.

Humans are 18-joint stick figures driven by key-pose interpolation: the root
follows piecewise-linear paths, legs and arms swing with the distance walked,
and the right hand is blended toward reach targets.  While an object is
attached its centre keeps a constant offset from the carrying hand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    BOX_DIM,
    JOINT_DIM,
    JOINT_NAMES,
    N_JOINTS,
    SceneSequence,
    Vocabulary,
)

KINDS = ("pick_place", "pass_object", "static_clutter")
DEFAULT_NOISE_MM = 5.0
MAX_STEP_MM = 300.0  # per-frame displacement bound of any joint or box corner at zero noise
WALK_SPEED = 90.0    # mm per frame
TABLE_TOP = 730.0
CARRIED_TYPES = ("cup", "box", "sponge", "bottle")
DISTRACTOR_TYPES = ("chair", "shelf", "ladder", "bowl", "plate")

# standing pose, facing +x, root on the floor
_REST = np.array([
    [0, 0, 950], [0, 0, 1250], [0, 0, 1450], [0, 0, 1600],
    [0, 180, 1420], [0, 200, 1150], [0, 200, 900], [0, 200, 820],
    [0, -180, 1420], [0, -200, 1150], [0, -200, 900], [0, -200, 820],
    [0, 100, 920], [0, 100, 500], [0, 100, 80],
    [0, -100, 920], [0, -100, 500], [0, -100, 80],
], dtype=np.float64)
_J = {n: i for i, n in enumerate(JOINT_NAMES)}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "pick_place"
    duration: int = 60
    noise: float = DEFAULT_NOISE_MM
    seed: int = 0
    n_distractors: int = 2

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise SpecError(f"unknown scenario kind {self.kind!r}; choose from {KINDS}")
        if self.duration < 30:
            raise SpecError("duration must cover one 30-frame window")
        if self.noise < 0:
            raise SpecError("noise amplitude must be non-negative")
        if self.n_distractors < 0:
            raise SpecError("n_distractors must be non-negative")


@dataclass
class GroundTruthInteractions:
    """Directed causal pairs per frame as (src id, dst id)."""

    pairs: list[set[tuple[str, str]]]

    def frames_with(self, src: str, dst: str) -> list[int]:
        return [t for t, ps in enumerate(self.pairs) if (src, dst) in ps]

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "src", "dst"])
        for t, ps in enumerate(self.pairs):
            for src, dst in sorted(ps):
                w.writerow([t, src, dst])


# --------------------------------------------------------------------------
# kinematics


def _rot(heading: float) -> np.ndarray:
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _pose(root: np.ndarray, heading: float, gait: float, swing: float,
          hand_target: np.ndarray | None, reach: float) -> np.ndarray:
    """World joints for a figure at ``root`` (floor point) facing ``heading``.

    ``gait`` is the walk phase, ``swing`` its amplitude in mm; the right hand
    is pulled toward ``hand_target`` (world) by the fraction ``reach``.
    """
    local = _REST.copy()
    s = np.sin(gait) * swing
    local[_J["l_knee"], 0] += 0.5 * s
    local[_J["l_ankle"], 0] += s
    local[_J["r_knee"], 0] -= 0.5 * s
    local[_J["r_ankle"], 0] -= s
    for name in ("l_elbow", "l_wrist", "l_hand"):
        local[_J[name], 0] -= 0.4 * s
    for name in ("r_elbow", "r_wrist", "r_hand"):
        local[_J[name], 0] += 0.4 * s
    rot = _rot(heading)
    world = local @ rot.T + np.array([root[0], root[1], 0.0])
    if hand_target is not None and reach > 0:
        shoulder = world[_J["r_shoulder"]]
        hand0 = world[_J["r_hand"]]
        hand = hand0 + reach * (hand_target - hand0)
        # wrist and elbow sit on the shoulder-hand segment, elbow dropped a little
        world[_J["r_wrist"]] = shoulder + 0.9 * (hand - shoulder)
        world[_J["r_elbow"]] = shoulder + 0.5 * (hand - shoulder) - np.array([0, 0, 60.0]) * (1 - reach)
        world[_J["r_hand"]] = hand
    return world


def _box(center: np.ndarray, size: np.ndarray) -> np.ndarray:
    return np.concatenate([center - size / 2, center + size / 2])


def _heading_to(a: np.ndarray, b: np.ndarray) -> float:
    d = b[:2] - a[:2]
    return float(np.arctan2(d[1], d[0]))


def _unit(v):
    return v / np.linalg.norm(v)


class _Track:
    """Piecewise-linear keyframed root path with headings."""

    def __init__(self, start: np.ndarray, heading: float):
        self.keys: list[tuple[int, np.ndarray, float]] = [(0, start.copy(), heading)]

    @property
    def end(self) -> tuple[int, np.ndarray, float]:
        return self.keys[-1]

    def walk_to(self, target: np.ndarray, speed: float = WALK_SPEED) -> int:
        t0, p0, h0 = self.end
        h = _heading_to(p0, target)
        turn = 3
        self.keys.append((t0 + turn, p0.copy(), _wrap(h0, h)))
        steps = max(1, int(np.ceil(np.linalg.norm(target[:2] - p0[:2]) / speed)))
        self.keys.append((t0 + turn + steps, target.copy(), _wrap(h0, h)))
        return self.end[0]

    def hold(self, frames: int) -> int:
        t0, p0, h0 = self.end
        self.keys.append((t0 + frames, p0.copy(), h0))
        return self.end[0]

    def at(self, t: float) -> tuple[np.ndarray, float, float]:
        """(root, heading, distance walked so far)"""
        dist = 0.0
        for (ta, pa, ha), (tb, pb, hb) in zip(self.keys, self.keys[1:]):
            seg = np.linalg.norm(pb[:2] - pa[:2])
            if t <= tb:
                u = 0.0 if tb == ta else (t - ta) / (tb - ta)
                return pa + u * (pb - pa), ha + u * (hb - ha), dist + u * seg
            dist += seg
        _, p, h = self.keys[-1]
        return p.copy(), h, dist


def _wrap(h_from: float, h_to: float) -> float:
    # shortest turn from h_from to h_to
    d = (h_to - h_from + np.pi) % (2 * np.pi) - np.pi
    return h_from + d


def _ramp(t: float, t0: float, t1: float) -> float:
    if t1 <= t0:
        return float(t >= t1)
    return float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))


# --------------------------------------------------------------------------
# scenarios


def _place_far(rng, avoid: list[np.ndarray], lo=2000.0, span=4000.0, tries=200) -> np.ndarray:
    best, best_d = None, -1.0
    for _ in range(tries):
        p = rng.uniform(-span, span, size=2)
        d = min(np.linalg.norm(p - a[:2]) for a in avoid) if avoid else np.inf
        if d >= lo:
            return p
        if d > best_d:
            best, best_d = p, d
    return best


def _pick_place(spec: ScenarioSpec, rng):
    t_total = spec.duration
    start = np.array([*rng.uniform(-500, 500, 2), 0.0])
    ang = rng.uniform(-np.pi, np.pi)
    obj_center = start + np.array([np.cos(ang), np.sin(ang), 0.0]) * rng.uniform(1200, 1800)
    obj_center[2] = 0.0
    ang2 = ang + rng.uniform(-2.0, 2.0)
    table_center = obj_center + np.array([np.cos(ang2), np.sin(ang2), 0.0]) * rng.uniform(1400, 2000)
    table_center[2] = 0.0
    obj_type = CARRIED_TYPES[rng.integers(len(CARRIED_TYPES))]
    obj_size = rng.uniform(70, 140, size=3)
    obj_rest = obj_center + np.array([0, 0, 760.0 + obj_size[2] / 2])  # on a stand at hand height
    table_size = np.array([1200.0, 800.0, TABLE_TOP])
    table_box = _box(table_center + np.array([0, 0, TABLE_TOP / 2]), table_size)

    track = _Track(start, _heading_to(start, obj_center))
    approach = obj_center - 450.0 * _unit((obj_center - start) * [1, 1, 0])
    t_arrive = track.walk_to(approach)
    t_grasp = track.hold(5)
    t_lift = track.hold(3)
    to_table = _unit((table_center - approach) * [1, 1, 0])
    drop_at = table_center - to_table * (table_size[:2].min() / 2 + 450.0)
    t_at_table = track.walk_to(drop_at)
    t_place = track.hold(5)
    track.hold(max(0, t_total - t_place))
    place_target = table_center - to_table * (table_size[:2].min() / 2 - 150.0)
    place_target = place_target + np.array([0, 0, TABLE_TOP + obj_size[2] / 2])

    ids = ["human_0", "object_0", "table_0"]
    types = ["human", obj_type, "table"]
    distractors = []
    avoid = [start, obj_center, table_center, approach, drop_at]
    for k in range(spec.n_distractors):
        p = _place_far(rng, avoid)
        avoid.append(np.array([*p, 0.0]))
        size = rng.uniform(300, 700, size=3)
        distractors.append(_box(np.array([p[0], p[1], size[2] / 2]), size))
        ids.append(f"distractor_{k}")
        types.append(DISTRACTOR_TYPES[rng.integers(len(DISTRACTOR_TYPES))])

    n = len(ids)
    boxes = np.zeros((t_total, n, BOX_DIM))
    joints = np.zeros((t_total, n, JOINT_DIM))
    pairs: list[set] = []
    offset = None
    obj_pos = obj_rest.copy()
    for t in range(t_total):
        root, heading, walked = track.at(t)
        gait = walked / 350.0 * np.pi
        moving = 0.0 if (t_arrive <= t <= t_lift) or t >= t_at_table else 1.0
        target, reach = None, 0.0
        if t_arrive <= t < t_grasp:
            target, reach = obj_rest, _ramp(t, t_arrive, t_grasp - 1)
        elif t_grasp <= t < t_lift:
            carry = _pose(root, heading, 0.0, 0.0, None, 0.0)[_J["r_hand"]] + [0, 0, 150.0]
            target, reach = obj_rest + (carry - obj_rest) * _ramp(t, t_grasp - 1, t_lift), 1.0
        elif t_lift <= t < t_at_table:
            base = _pose(root, heading, 0.0, 0.0, None, 0.0)[_J["r_hand"]]
            target, reach = base + [0, 0, 150.0], 1.0
        elif t_at_table <= t < t_place:
            base = _pose(root, heading, 0.0, 0.0, None, 0.0)[_J["r_hand"]] + [0, 0, 150.0]
            target, reach = base + (place_target - base) * _ramp(t, t_at_table, t_place - 1), 1.0
        elif t >= t_place:
            target, reach = place_target, 1.0 - _ramp(t, t_place, t_place + 4)
        body = _pose(root, heading, gait, 120.0 * moving, target, reach)
        hand = body[_J["r_hand"]]
        attached = t_grasp <= t < t_place
        if attached:
            if offset is None:
                offset = obj_pos - hand
            obj_pos = hand + offset
            pairs.append({("human_0", "object_0")})
        else:
            pairs.append(set())
        joints[t, 0] = body.reshape(-1)
        boxes[t, 0] = np.concatenate([body.min(axis=0), body.max(axis=0)])
        boxes[t, 1] = _box(obj_pos, obj_size)
        boxes[t, 2] = table_box
        for k, d in enumerate(distractors):
            boxes[t, 3 + k] = d
    return ids, types, boxes, joints, pairs


def _pass_object(spec: ScenarioSpec, rng):
    t_total = spec.duration
    mid = np.array([*rng.uniform(-800, 800, 2), 0.0])
    ang = rng.uniform(-np.pi, np.pi)
    gap = rng.uniform(1100, 1400)
    axis = np.array([np.cos(ang), np.sin(ang), 0.0])
    pa, pb = mid - axis * gap / 2, mid + axis * gap / 2
    ha, hb = _heading_to(pa, pb), _heading_to(pb, pa)
    obj_type = CARRIED_TYPES[rng.integers(len(CARRIED_TYPES))]
    obj_size = rng.uniform(70, 140, size=3)
    handover = mid + np.array([0, 0, 1150.0])
    t_reach0 = int(0.2 * t_total)
    t_swap = int(0.5 * t_total)
    t_done = int(0.8 * t_total)
    table_c = mid + np.cross(axis, [0, 0, 1.0]) * rng.uniform(1500, 2200)
    table_box = _box(np.array([table_c[0], table_c[1], TABLE_TOP / 2]), np.array([1000.0, 700.0, TABLE_TOP]))

    ids = ["human_0", "human_1", "object_0", "table_0"]
    types = ["human", "human", obj_type, "table"]
    n = len(ids)
    boxes = np.zeros((t_total, n, BOX_DIM))
    joints = np.zeros((t_total, n, JOINT_DIM))
    pairs: list[set] = []
    offset = None
    holder = None
    obj_pos = None
    for t in range(t_total):
        reach = _ramp(t, t_reach0, t_swap) if t < t_swap else 1.0 - _ramp(t, t_swap, t_done)
        body_a = _pose(pa, ha, 0.0, 0.0, handover, reach)
        body_b = _pose(pb, hb, 0.0, 0.0, handover, reach)
        new_holder = 0 if t < t_swap else 1
        hand = (body_a if new_holder == 0 else body_b)[_J["r_hand"]]
        if holder != new_holder:
            if obj_pos is None:
                obj_pos = hand + np.array([0, 0, obj_size[2] / 2])
            offset = obj_pos - hand
            holder = new_holder
        obj_pos = hand + offset
        pairs.append({(ids[holder], "object_0")})
        for k, body in enumerate((body_a, body_b)):
            joints[t, k] = body.reshape(-1)
            boxes[t, k] = np.concatenate([body.min(axis=0), body.max(axis=0)])
        boxes[t, 2] = _box(obj_pos, obj_size)
        boxes[t, 3] = table_box
    return ids, types, boxes, joints, pairs


def _static_clutter(spec: ScenarioSpec, rng):
    t_total = spec.duration
    root = np.array([*rng.uniform(-1000, 1000, 2), 0.0])
    body = _pose(root, rng.uniform(-np.pi, np.pi), 0.0, 0.0, None, 0.0)
    ids, types = ["human_0"], ["human"]
    boxes0 = [np.concatenate([body.min(axis=0), body.max(axis=0)])]
    avoid = [root]
    for k in range(max(1, spec.n_distractors + 1)):
        p = _place_far(rng, avoid, lo=800.0, span=2500.0)
        avoid.append(np.array([*p, 0.0]))
        size = rng.uniform(80, 600, size=3)
        boxes0.append(_box(np.array([p[0], p[1], size[2] / 2]), size))
        ids.append(f"object_{k}")
        types.append((CARRIED_TYPES + DISTRACTOR_TYPES)[rng.integers(len(CARRIED_TYPES) + len(DISTRACTOR_TYPES))])
    n = len(ids)
    boxes = np.broadcast_to(np.stack(boxes0), (t_total, n, BOX_DIM)).copy()
    joints = np.zeros((t_total, n, JOINT_DIM))
    joints[:, 0] = body.reshape(-1)
    return ids, types, boxes, joints, [set() for _ in range(t_total)]


_BUILDERS = {"pick_place": _pick_place, "pass_object": _pass_object, "static_clutter": _static_clutter}


def generate(spec: ScenarioSpec, vocabulary: Vocabulary | None = None
             ) -> tuple[SceneSequence, GroundTruthInteractions]:
    spec.validate()
    vocabulary = vocabulary or Vocabulary()
    rng = np.random.default_rng(spec.seed)
    ids, types, boxes, joints, pairs = _BUILDERS[spec.kind](spec, rng)
    if spec.noise > 0:
        noise_rng = np.random.default_rng([spec.seed, 1])
        t, n = boxes.shape[:2]
        is_h = np.array([ty == vocabulary.human_type for ty in types])
        joints = joints.copy()
        joints[:, is_h] += noise_rng.normal(0.0, spec.noise, size=joints[:, is_h].shape)
        boxes = boxes + noise_rng.normal(0.0, spec.noise, size=boxes.shape)
        lo = np.minimum(boxes[..., :3], boxes[..., 3:])
        hi = np.maximum(boxes[..., :3], boxes[..., 3:])
        boxes = np.concatenate([lo, hi], axis=-1)
        for k in np.flatnonzero(is_h):
            p = joints[:, k].reshape(t, N_JOINTS, 3)
            boxes[:, k] = np.concatenate([p.min(axis=1), p.max(axis=1)], axis=-1)
    seq = SceneSequence(ids, types, boxes, joints, vocabulary, name=f"{spec.kind}_{spec.seed}")
    return seq, GroundTruthInteractions(pairs)


def write_ground_truth(gt: GroundTruthInteractions, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        gt.to_csv(fh)
