"""Synthetic interaction clips whose class is defined by relative motion.

Two "hands" (ellipses) and up to two objects (rectangles) move over a noisy
static background. Shapes, sizes, and colours are sampled independently of the
class, so appearance carries no label information; only the trajectories (and
which roles are present at all) do. Ground-truth boxes are analytic tight
bounds, standing in for a frozen external detector, and a noise injector
models its failure modes: per-frame drops, left/right side swaps, and
coordinate jitter.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .backbone import VideoClip
from .detections import (
    BoundingBox,
    FrameDetections,
    Role,
    ROLES,
    detections_to_record,
    save_detection_record,
    load_detection_record,
    record_to_detections,
)

MARGIN = 0.02


@dataclass(frozen=True)
class NoiseSpec:
    """Detector failure model; probabilities apply per frame."""

    p_drop: float = 0.0
    p_swap: float = 0.0
    jitter: float = 0.0

    def __post_init__(self):
        for name in ("p_drop", "p_swap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


@dataclass
class EntityPath:
    """One entity's geometry over a clip: per-frame centres, fixed half-size."""

    centers: np.ndarray  # (T, 2) normalised (x, y)
    half: tuple  # (hw, hh)
    shape: str  # "ellipse" for hands, "rect" for objects
    color: np.ndarray  # (3,) in [0, 1]

    def box(self, t: int) -> BoundingBox:
        cx, cy = self.centers[t]
        hw, hh = self.half
        return BoundingBox(float(cx - hw), float(cy - hh),
                           float(cx + hw), float(cy + hh))


@dataclass(frozen=True)
class MotionClass:
    """Catalog entry: class identity is the relative-motion program."""

    class_id: int
    name: str
    tags: tuple
    build: Callable  # (rng, num_frames) -> (dict[Role, EntityPath], params)


def _hand_half(rng):
    return (float(rng.uniform(0.05, 0.085)), float(rng.uniform(0.05, 0.085)))


def _obj_half(rng):
    return (float(rng.uniform(0.05, 0.10)), float(rng.uniform(0.05, 0.10)))


def _color(rng):
    return rng.uniform(0.15, 0.95, size=3)


def _static(center, n):
    return np.repeat(np.asarray(center, dtype=np.float64)[None, :], n, axis=0)


def _attach(rng, target: np.ndarray) -> np.ndarray:
    """Hands hold objects: same path plus a small fixed offset."""
    return target + rng.uniform(-0.03, 0.03, size=2)


def _fit_inside(path: EntityPath) -> EntityPath:
    """Shift a whole path so every box stays inside the frame."""
    hw, hh = path.half
    lo = np.array([MARGIN + hw, MARGIN + hh])
    hi = np.array([1.0 - MARGIN - hw, 1.0 - MARGIN - hh])
    shift_lo = np.maximum(lo - path.centers.min(axis=0), 0.0)
    shift_hi = np.minimum(hi - path.centers.max(axis=0), 0.0)
    path.centers = path.centers + shift_lo + shift_hi
    return path


def _build_stir(rng, n):
    pan_center = rng.uniform((0.38, 0.40), (0.62, 0.62))
    pan_half = (float(rng.uniform(0.11, 0.15)), float(rng.uniform(0.10, 0.14)))
    radius = float(rng.uniform(0.09, 0.12))
    omega = float(rng.uniform(0.35, 0.60)) * (1 if rng.random() < 0.5 else -1)
    theta0 = float(rng.uniform(0, 2 * np.pi))
    t = np.arange(n)
    theta = theta0 + omega * t
    spoon = pan_center + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    paths = {
        Role.OBJECT_LEFT: EntityPath(_static(pan_center, n), pan_half, "rect", _color(rng)),
        Role.OBJECT_RIGHT: EntityPath(spoon, (float(rng.uniform(0.035, 0.055)),) * 2,
                                      "rect", _color(rng)),
        Role.HAND_LEFT: EntityPath(
            _static(pan_center + np.array([-pan_half[0] - 0.05, rng.uniform(-0.02, 0.02)]), n),
            _hand_half(rng), "ellipse", _color(rng)),
        Role.HAND_RIGHT: EntityPath(_attach(rng, spoon), _hand_half(rng),
                                    "ellipse", _color(rng)),
    }
    return paths, {"angular_rate": omega, "radius": radius,
                   "pan_center": pan_center.tolist()}


def _build_hold_and_lift(rng, n):
    held_center = rng.uniform((0.20, 0.45), (0.38, 0.70))
    x0 = float(rng.uniform(0.58, 0.75))
    y0 = float(rng.uniform(0.72, 0.85))
    y1 = float(rng.uniform(0.18, 0.30))
    drift = float(rng.uniform(-0.003, 0.003))
    t = np.arange(n)
    lifted = np.stack([x0 + drift * t, y0 + (y1 - y0) * t / (n - 1)], axis=1)
    paths = {
        Role.OBJECT_LEFT: EntityPath(_static(held_center, n), _obj_half(rng),
                                     "rect", _color(rng)),
        Role.OBJECT_RIGHT: EntityPath(lifted, _obj_half(rng), "rect", _color(rng)),
        Role.HAND_LEFT: EntityPath(_attach(rng, _static(held_center, n)),
                                   _hand_half(rng), "ellipse", _color(rng)),
        Role.HAND_RIGHT: EntityPath(_attach(rng, lifted), _hand_half(rng),
                                    "ellipse", _color(rng)),
    }
    return paths, {"lift": y0 - y1, "start_y": y0}


def _build_shake_right(rng, n):
    rest_center = rng.uniform((0.18, 0.35), (0.33, 0.65))
    x_c = float(rng.uniform(0.60, 0.75))
    y_c = float(rng.uniform(0.35, 0.65))
    amp = float(rng.uniform(0.06, 0.10))
    freq = float(rng.uniform(0.12, 0.20))
    phase = float(rng.uniform(0, 2 * np.pi))
    t = np.arange(n)
    shaken = np.stack([x_c + amp * np.sin(2 * np.pi * freq * t + phase),
                       np.full(n, y_c)], axis=1)
    paths = {
        Role.OBJECT_LEFT: EntityPath(_static(rest_center, n), _obj_half(rng),
                                     "rect", _color(rng)),
        Role.OBJECT_RIGHT: EntityPath(shaken, _obj_half(rng), "rect", _color(rng)),
        Role.HAND_LEFT: EntityPath(_attach(rng, _static(rest_center, n)),
                                   _hand_half(rng), "ellipse", _color(rng)),
        Role.HAND_RIGHT: EntityPath(_attach(rng, shaken), _hand_half(rng),
                                    "ellipse", _color(rng)),
    }
    return paths, {"amplitude": amp, "frequency": freq}


def _build_both_approach(rng, n):
    target = rng.uniform((0.42, 0.35), (0.58, 0.60))
    obj_half = _obj_half(rng)
    arrive = max(2, int(n * rng.uniform(0.7, 1.0)))
    t = np.minimum(np.arange(n), arrive - 1) / (arrive - 1)

    def _approach(start, goal):
        start, goal = np.asarray(start), np.asarray(goal)
        return start[None, :] + (goal - start)[None, :] * t[:, None]

    left_goal = target + np.array([-obj_half[0] - 0.06, 0.0])
    right_goal = target + np.array([obj_half[0] + 0.06, 0.0])
    paths = {
        Role.OBJECT_RIGHT: EntityPath(_static(target, n), obj_half, "rect", _color(rng)),
        Role.HAND_LEFT: EntityPath(
            _approach((rng.uniform(0.08, 0.16), rng.uniform(0.30, 0.70)), left_goal),
            _hand_half(rng), "ellipse", _color(rng)),
        Role.HAND_RIGHT: EntityPath(
            _approach((rng.uniform(0.84, 0.92), rng.uniform(0.30, 0.70)), right_goal),
            _hand_half(rng), "ellipse", _color(rng)),
    }
    return paths, {"arrive_frame": arrive}


def _build_rub_hands(rng, n):
    cx = float(rng.uniform(0.40, 0.60))
    cy = float(rng.uniform(0.40, 0.65))
    d0 = float(rng.uniform(0.05, 0.08))
    amp = float(rng.uniform(0.04, 0.07))
    freq = float(rng.uniform(0.10, 0.18))
    phase = float(rng.uniform(0, 2 * np.pi))
    t = np.arange(n)
    d = d0 + amp * np.cos(2 * np.pi * freq * t + phase)
    wobble = 0.01 * np.sin(2 * np.pi * freq * t + phase)
    left = np.stack([cx - d, cy + wobble], axis=1)
    right = np.stack([cx + d, cy - wobble], axis=1)
    paths = {
        Role.HAND_LEFT: EntityPath(left, _hand_half(rng), "ellipse", _color(rng)),
        Role.HAND_RIGHT: EntityPath(right, _hand_half(rng), "ellipse", _color(rng)),
    }
    return paths, {"gap": d0, "amplitude": amp, "frequency": freq}


def _build_point_static(rng, n):
    center = rng.uniform((0.30, 0.30), (0.70, 0.70))
    paths = {
        Role.HAND_RIGHT: EntityPath(_static(center, n), _hand_half(rng),
                                    "ellipse", _color(rng)),
    }
    return paths, {}


CATALOG = (
    MotionClass(0, "stir", ("motion-defined", "position-defined"), _build_stir),
    MotionClass(1, "hold-and-lift", ("motion-defined", "position-defined"),
                _build_hold_and_lift),
    MotionClass(2, "shake-right", ("motion-defined", "position-defined"),
                _build_shake_right),
    MotionClass(3, "both-approach", (), _build_both_approach),
    MotionClass(4, "rub-hands", ("hands-only",), _build_rub_hands),
    MotionClass(5, "point-static", ("hands-only",), _build_point_static),
)

HANDS_ONLY_CLASSES = tuple(c.class_id for c in CATALOG if "hands-only" in c.tags)
MOTION_DEFINED_CLASSES = tuple(c.class_id for c in CATALOG
                               if "motion-defined" in c.tags)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _entity_mask(path: EntityPath, t: int, size: int) -> np.ndarray:
    cx, cy = path.centers[t]
    hw, hh = path.half
    px = (np.arange(size) + 0.5) / size
    py = (np.arange(size) + 0.5) / size
    if path.shape == "rect":
        return (((py >= cy - hh) & (py < cy + hh))[:, None]
                & ((px >= cx - hw) & (px < cx + hw))[None, :])
    u = (px[None, :] - cx) / hw
    v = (py[:, None] - cy) / hh
    return u * u + v * v <= 1.0


PAINT_ORDER = (Role.OBJECT_LEFT, Role.OBJECT_RIGHT, Role.HAND_LEFT, Role.HAND_RIGHT)


def generate_clip(class_id: int, seed: int, num_frames: int = 16,
                  frame_size: int = 64, clip_id: str = ""):
    """Render one labelled clip. Deterministic given (class_id, seed).

    Returns (VideoClip, detection record dict, meta dict); meta carries the
    program parameters and per-role colours for certification tests.
    """
    entry = CATALOG[class_id]
    if entry.class_id != class_id:
        raise ValueError(f"catalog out of order at class {class_id}")
    rng = np.random.default_rng([class_id, seed])
    paths, params = entry.build(rng, num_frames)
    paths = {role: _fit_inside(p) for role, p in paths.items()}

    background = np.clip(
        rng.uniform(0.25, 0.75, size=3)[None, None, :]
        + rng.normal(0.0, 0.06, size=(frame_size, frame_size, 3)),
        0.0, 1.0)
    frames = np.empty((num_frames, frame_size, frame_size, 3), dtype=np.uint8)
    for t in range(num_frames):
        img = background.copy()
        for role in PAINT_ORDER:
            if role in paths:
                img[_entity_mask(paths[role], t, frame_size)] = paths[role].color
        frames[t] = np.round(img * 255.0).astype(np.uint8)

    detections = [
        FrameDetections(frame_index=t,
                        entries={role: paths[role].box(t) for role in paths})
        for t in range(num_frames)
    ]
    clip_id = clip_id or f"c{class_id}_s{seed}"
    clip = VideoClip(frames=frames.astype(np.float32) / 255.0,
                     label=class_id, clip_id=clip_id)
    meta = {"params": params,
            "colors": {role.code: paths[role].color.tolist() for role in paths}}
    return clip, detections_to_record(clip_id, detections), meta


# ---------------------------------------------------------------------------
# Rule-based certification oracle
# ---------------------------------------------------------------------------

def rule_based_classify(frames: Sequence[FrameDetections]) -> int:
    """Classify from box trajectories alone with hand-coded rules.

    Certifies that the labels are recoverable from trajectories: presence
    patterns split the catalog into groups, and within the all-roles group the
    right object's accumulated rotation around the left object separates
    stirring, its net vertical displacement separates lifting, and the
    remainder is shaking.
    """
    n = len(frames)
    has = {role: sum(f.get(role) is not None for f in frames) >= 0.5 * n
           for role in ROLES}
    if has[Role.OBJECT_LEFT] and has[Role.OBJECT_RIGHT]:
        rel = np.array([
            np.subtract(f.get(Role.OBJECT_RIGHT).center, f.get(Role.OBJECT_LEFT).center)
            for f in frames
            if f.get(Role.OBJECT_RIGHT) and f.get(Role.OBJECT_LEFT)
        ])
        angles = np.arctan2(rel[:, 1], rel[:, 0])
        steps = np.diff(angles)
        steps = (steps + np.pi) % (2 * np.pi) - np.pi
        if abs(steps.sum()) >= 4.5:
            return 0  # stir
        centers_y = [f.get(Role.OBJECT_RIGHT).center[1] for f in frames
                     if f.get(Role.OBJECT_RIGHT)]
        if centers_y[0] - centers_y[-1] >= 0.30:
            return 1  # hold-and-lift
        return 2  # shake-right
    if has[Role.OBJECT_RIGHT] or has[Role.OBJECT_LEFT]:
        return 3  # both-approach (single object)
    if has[Role.HAND_LEFT] and has[Role.HAND_RIGHT]:
        return 4  # rub-hands
    return 5  # point-static


# ---------------------------------------------------------------------------
# Detection noise injector
# ---------------------------------------------------------------------------

def inject_noise(frames: Sequence[FrameDetections], noise: NoiseSpec,
                 seed: int) -> list[FrameDetections]:
    """Apply side swaps, drops, and coordinate jitter, per frame.

    The random stream consumes a fixed number of draws per frame (one swap
    draw, four drop draws, sixteen jitter draws) regardless of which roles are
    present, so the outcome for frame t never depends on earlier content.
    """
    rng = np.random.default_rng(seed)
    out = []
    for f in frames:
        swap = rng.random() < noise.p_swap
        drop_u = rng.random(len(ROLES))
        jit = rng.normal(0.0, 1.0, size=(len(ROLES), 4))
        entries = dict(f.entries)
        if swap:
            entries = {role.opposite_side: box for role, box in entries.items()}
        kept = {}
        for i, role in enumerate(ROLES):
            box = entries.get(role)
            if box is None or drop_u[i] < noise.p_drop:
                continue
            if noise.jitter > 0:
                box = _jitter_box(box, jit[i] * noise.jitter)
                if box is None:
                    continue
            kept[role] = box
        out.append(FrameDetections(frame_index=f.frame_index, entries=kept))
    return out


def _jitter_box(box: BoundingBox, delta: np.ndarray) -> Optional[BoundingBox]:
    x0, x1 = sorted((box.x0 + delta[0], box.x1 + delta[2]))
    y0, y1 = sorted((box.y0 + delta[1], box.y1 + delta[3]))
    x0, x1 = max(0.0, x0), min(1.0, x1)
    y0, y1 = max(0.0, y0), min(1.0, y1)
    if x1 - x0 < 1e-3 or y1 - y0 < 1e-3:
        return None
    return BoundingBox(x0, y0, x1, y1, box.confidence)


# ---------------------------------------------------------------------------
# On-disk dataset
# ---------------------------------------------------------------------------

CLIP_MAGIC = b"IRNCLIP1"


def save_clip_frames(path, frames: np.ndarray) -> None:
    """Raw little-endian layout: magic, four uint32 dims, uint8 RGB data."""
    if frames.dtype != np.uint8:
        raise ValueError("frames must be uint8")
    t, h, w, c = frames.shape
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<4I", t, h, w, c))
        fh.write(np.ascontiguousarray(frames).tobytes())


def load_clip_frames(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CLIP_MAGIC:
            raise ValueError(f"{path} is not a clip file (magic {magic!r})")
        t, h, w, c = struct.unpack("<4I", fh.read(16))
        data = np.frombuffer(fh.read(t * h * w * c), dtype=np.uint8)
    return data.reshape(t, h, w, c)


def _split_counts(total: int, num_classes: int) -> list[int]:
    base, extra = divmod(total, num_classes)
    return [base + (1 if i < extra else 0) for i in range(num_classes)]


def build_dataset(out_dir, n_train: int, n_val: int, master_seed: int = 0,
                  frames_per_clip: int = 16, frame_size: int = 64,
                  catalog: Sequence[MotionClass] = CATALOG) -> dict:
    """Generate a stratified train/val dataset on disk and return the manifest.

    Per-clip seeds are disjoint between splits and derive only from the master
    seed, so regeneration is byte-identical.
    """
    if not catalog:
        raise ValueError("catalog must not be empty")
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    base = master_seed * 1_000_003
    splits = {}
    for split, total, offset in (("train", n_train, 0), ("val", n_val, 50_000)):
        entries = []
        counts = _split_counts(total, len(catalog))
        for entry, count in zip(catalog, counts):
            for i in range(count):
                seed = base + entry.class_id * 100_000 + offset + i
                clip_id = f"{split}_{entry.class_id:02d}_{i:04d}"
                clip, record, _ = generate_clip(
                    entry.class_id, seed, frames_per_clip, frame_size, clip_id)
                clip_dir = out_dir / "clips" / clip_id
                clip_dir.mkdir(parents=True, exist_ok=True)
                frames_u8 = np.round(clip.frames * 255.0).astype(np.uint8)
                save_clip_frames(clip_dir / "frames.bin", frames_u8)
                save_detection_record(clip_dir / "detections.json", record)
                entries.append({"clip_id": clip_id, "class_id": entry.class_id,
                                "seed": seed})
        splits[split] = entries
    manifest = {
        "version": 1,
        "master_seed": master_seed,
        "frames_per_clip": frames_per_clip,
        "frame_size": frame_size,
        "classes": [{"class_id": c.class_id, "name": c.name, "tags": list(c.tags)}
                    for c in catalog],
        "splits": splits,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {dataset_dir}")
    with open(path) as fh:
        return json.load(fh)


def manifest_hash(dataset_dir) -> str:
    path = Path(dataset_dir) / "manifest.json"
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_clip(dataset_dir, clip_id: str):
    """Load (uint8 frames, list of FrameDetections) for one clip."""
    clip_dir = Path(dataset_dir) / "clips" / clip_id
    frames = load_clip_frames(clip_dir / "frames.bin")
    record = load_detection_record(clip_dir / "detections.json")
    _, dets = record_to_detections(record)
    return frames, dets


# ---------------------------------------------------------------------------
# Appearance/label independence
# ---------------------------------------------------------------------------

def entity_colors(meta: dict) -> list[np.ndarray]:
    """Per-entity fill colours of one generated clip.

    Colour independence is tested per entity rather than on the clip-level
    mean: entity counts differ across classes by design (hands-only versus
    two-handed), which would give the mean a class-dependent spread even
    though every individual colour is drawn independently of the label.
    """
    return [np.asarray(c, dtype=np.float64) for c in meta["colors"].values()]


def appearance_label_pvalue(colors: np.ndarray, labels: np.ndarray,
                            n_permutations: int = 500, bins: int = 4,
                            seed: int = 0) -> float:
    """Permutation test of mutual information between colour and label.

    The statistic sums, over the three channels, the MI between the channel
    value discretised into fixed-width bins and the class label. Returns the
    permutation p-value; independence should not be rejected (p above 0.05)
    on honestly generated data.
    """
    colors = np.asarray(colors, dtype=np.float64)
    labels = np.asarray(labels)
    binned = np.clip((colors * bins).astype(int), 0, bins - 1)

    def _mi(lab):
        total = 0.0
        for ch in range(binned.shape[1]):
            joint = np.zeros((bins, int(labels.max()) + 1))
            for b, y in zip(binned[:, ch], lab):
                joint[b, y] += 1
            joint /= joint.sum()
            px = joint.sum(axis=1, keepdims=True)
            py = joint.sum(axis=0, keepdims=True)
            nz = joint > 0
            total += float((joint[nz] * np.log(joint[nz] / (px @ py)[nz])).sum())
        return total

    observed = _mi(labels)
    rng = np.random.default_rng(seed)
    hits = sum(_mi(rng.permutation(labels)) >= observed
               for _ in range(n_permutations))
    return (1 + hits) / (n_permutations + 1)
