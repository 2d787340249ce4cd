"""Per-frame hand/object detections, binary occupancy maps, per-role tracks.

Each frame carries at most one box for each of the four roles: left hand,
right hand, left-side object, right-side object. An object's side is the side
of the hand interacting with it. Missing detections are first-class: absent
boxes rasterise to blank maps and pool to zero features downstream, and a role
absent in every frame simply yields an all-false presence mask.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np


class Role(Enum):
    """The four tracked entities; value is the wire code."""

    HAND_LEFT = "HL"
    HAND_RIGHT = "HR"
    OBJECT_LEFT = "OL"
    OBJECT_RIGHT = "OR"

    @property
    def code(self) -> str:
        return self.value

    @property
    def kind(self) -> str:
        return "hand" if self.value[0] == "H" else "object"

    @property
    def side(self) -> str:
        return "left" if self.value[1] == "L" else "right"

    @property
    def opposite_side(self) -> "Role":
        flip = {"HL": "HR", "HR": "HL", "OL": "OR", "OR": "OL"}
        return Role(flip[self.value])

    @classmethod
    def from_code(cls, code: str) -> "Role":
        try:
            return cls(code)
        except ValueError:
            raise ValueError(f"unknown role code {code!r}") from None


ROLES = (Role.HAND_LEFT, Role.HAND_RIGHT, Role.OBJECT_LEFT, Role.OBJECT_RIGHT)

# Query/memory order of the six interaction pairs. Queries are always hands.
PAIR_ORDER = (
    (Role.HAND_LEFT, Role.OBJECT_LEFT),
    (Role.HAND_LEFT, Role.OBJECT_RIGHT),
    (Role.HAND_LEFT, Role.HAND_RIGHT),
    (Role.HAND_RIGHT, Role.OBJECT_RIGHT),
    (Role.HAND_RIGHT, Role.OBJECT_LEFT),
    (Role.HAND_RIGHT, Role.HAND_LEFT),
)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalised image coordinates, corners ordered."""

    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise ValueError(
                f"degenerate or out-of-range box ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    def contains(self, other: "BoundingBox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)


@dataclass
class FrameDetections:
    """At most one box per role for a single frame."""

    frame_index: int
    entries: dict = field(default_factory=dict)  # Role -> BoundingBox

    def get(self, role: Role) -> Optional[BoundingBox]:
        return self.entries.get(role)

    def present_roles(self) -> list[Role]:
        return [r for r in ROLES if r in self.entries]


@dataclass
class RoleTrack:
    """One role's box per frame over a clip, with a presence mask."""

    role: Role
    boxes: tuple  # length-T tuple of Optional[BoundingBox]
    presence: np.ndarray  # (T,) bool

    def __post_init__(self):
        if len(self.boxes) != len(self.presence):
            raise ValueError("boxes and presence lengths differ")
        for box, present in zip(self.boxes, self.presence):
            if bool(present) != (box is not None):
                raise ValueError("presence mask inconsistent with boxes")


def filter_detections(
    raw: Iterable[tuple[Role, BoundingBox]],
    threshold: float,
    frame_index: int = 0,
) -> FrameDetections:
    """Keep, per role, the best box with confidence >= threshold.

    Ties resolve by higher confidence, then larger area, then lexicographic
    (x0, y0). Empty results are valid.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    best: dict[Role, BoundingBox] = {}
    for role, box in raw:
        if box.confidence < threshold:
            continue
        cur = best.get(role)
        if cur is None or _rank(box) < _rank(cur):
            best[role] = box
    return FrameDetections(frame_index=frame_index, entries=best)


def _rank(box: BoundingBox):
    return (-box.confidence, -box.area, box.x0, box.y0)


def rasterize_binary_map(box: Optional[BoundingBox], grid: int) -> np.ndarray:
    """Occupancy map: cell (i, j) is 1 iff its centre lies inside the box.

    Rows index y, columns index x. An absent box yields the all-zero map.
    """
    if grid < 2:
        raise ValueError("grid must be >= 2")
    if box is None:
        return np.zeros((grid, grid), dtype=np.float32)
    centers = (np.arange(grid) + 0.5) / grid
    xs = (centers >= box.x0) & (centers < box.x1)
    ys = (centers >= box.y0) & (centers < box.y1)
    return (ys[:, None] & xs[None, :]).astype(np.float32)


def build_role_tracks(
    frames: Sequence[FrameDetections],
    expected_length: int | None = None,
) -> dict[Role, RoleTrack]:
    """Slot per-frame detections into one track per role.

    No re-identification happens here: the detector already assigns sides, so
    linking is per-role slotting. Frame indices must be strictly increasing.
    """
    if expected_length is not None and len(frames) != expected_length:
        raise ValueError(
            f"expected {expected_length} frames of detections, got {len(frames)}"
        )
    indices = [f.frame_index for f in frames]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ValueError(f"frame indices must be strictly increasing, got {indices}")
    tracks = {}
    for role in ROLES:
        boxes = tuple(f.get(role) for f in frames)
        presence = np.array([b is not None for b in boxes], dtype=bool)
        tracks[role] = RoleTrack(role=role, boxes=boxes, presence=presence)
    return tracks


def track_binary_maps(track: RoleTrack, grid: int) -> np.ndarray:
    """Stack per-frame occupancy maps, blank wherever the role is absent."""
    return np.stack([rasterize_binary_map(b, grid) for b in track.boxes])


# ---------------------------------------------------------------------------
# Detection record wire format (one JSON object per clip)
# ---------------------------------------------------------------------------

def detections_to_record(clip_id: str, frames: Sequence[FrameDetections]) -> dict:
    return {
        "clip_id": clip_id,
        "num_frames": len(frames),
        "frames": [
            {
                "frame_index": f.frame_index,
                "detections": [
                    {
                        "role": role.code,
                        "box": [float(v) for v in f.entries[role].as_list()],
                        "confidence": float(f.entries[role].confidence),
                    }
                    for role in ROLES
                    if role in f.entries
                ],
            }
            for f in frames
        ],
    }


def record_to_detections(record: dict) -> tuple[str, list[FrameDetections]]:
    frames = []
    for fr in record["frames"]:
        entries = {}
        for det in fr["detections"]:
            role = Role.from_code(det["role"])
            x0, y0, x1, y1 = det["box"]
            entries[role] = BoundingBox(x0, y0, x1, y1, det["confidence"])
        frames.append(FrameDetections(frame_index=fr["frame_index"], entries=entries))
    return record["clip_id"], frames


def save_detection_record(path, record: dict) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh)


def load_detection_record(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
