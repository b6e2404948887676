"""Shared domain types: class palette, label maps, flow fields, sequence manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

# Sentinel for pixels without a class assignment. Never a valid class id.
UNLABELED = 255

CLASS_NAMES = (
    "land",
    "forest",
    "residential",
    "haystack",
    "road",
    "church",
    "car",
    "water",
    "sky",
    "hill",
    "person",
    "fence",
)

NUM_CLASSES = len(CLASS_NAMES)

# Accepted alternate spellings -> canonical name.
CLASS_ALIASES = {"river": "water"}

# Fixed display palette (RGB), the single source of truth for every label
# rendering and encoded label image. Colors are mutually separated by far
# more than the decoder tolerance (see dataset.decode_label_image).
CLASS_COLORS = (
    (210, 180, 140),  # land
    (34, 139, 34),    # forest
    (184, 134, 11),   # residential
    (255, 215, 0),    # haystack
    (128, 128, 128),  # road
    (139, 0, 139),    # church
    (255, 0, 0),      # car
    (30, 144, 255),   # water
    (135, 206, 235),  # sky
    (107, 142, 35),   # hill
    (255, 105, 180),  # person
    (139, 69, 19),    # fence
)


class SegpropError(Exception):
    """Base class for all toolkit errors."""


class UnknownClassError(SegpropError):
    pass


class ManifestError(SegpropError):
    pass


_NAME_TO_ID = {name: i for i, name in enumerate(CLASS_NAMES)}
for _alias, _canon in CLASS_ALIASES.items():
    _NAME_TO_ID[_alias] = _NAME_TO_ID[_canon]


def class_id(name: str) -> int:
    """Canonical class id for a name (aliases accepted)."""
    try:
        return _NAME_TO_ID[name.strip().lower()]
    except KeyError:
        raise UnknownClassError(f"unknown class name: {name!r}") from None


def class_name(cid: int) -> str:
    if not 0 <= cid < NUM_CLASSES:
        raise UnknownClassError(f"class id out of range: {cid}")
    return CLASS_NAMES[cid]


def class_color(cid: int) -> tuple[int, int, int]:
    if not 0 <= cid < NUM_CLASSES:
        raise UnknownClassError(f"class id out of range: {cid}")
    return CLASS_COLORS[cid]


def palette_array() -> np.ndarray:
    """(C, 3) uint8 array of display colors, indexed by class id."""
    return np.asarray(CLASS_COLORS, dtype=np.uint8)


class FlowDirection(Enum):
    FORWARD = "forward"    # displacement from frame t to t+1
    BACKWARD = "backward"  # displacement from frame t to t-1


@dataclass
class LabelMap:
    """Per-pixel class assignment for one frame.

    data is (H, W) uint8 holding class ids, with UNLABELED where no class is
    assigned. Instances are frozen after construction (the array is marked
    read-only) so they are safe to share between threads.
    """

    frame_index: int
    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.uint8)
        if arr.ndim != 2:
            raise ValueError(f"label data must be 2-D, got shape {arr.shape}")
        bad = (arr >= NUM_CLASSES) & (arr != UNLABELED)
        if bad.any():
            raise ValueError("label data contains invalid class ids")
        arr.flags.writeable = False
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def is_complete(self) -> bool:
        return not (self.data == UNLABELED).any()


@dataclass
class FlowField:
    """Dense per-pixel displacement between adjacent frames, one direction.

    vectors is (H, W, 2) float32 with channel 0 = dx and channel 1 = dy,
    in pixels.
    """

    source_frame: int
    direction: FlowDirection
    vectors: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError(f"flow vectors must be (H, W, 2), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("flow vectors must be finite")
        arr.flags.writeable = False
        self.vectors = arr

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]


@dataclass
class SequenceManifest:
    """Frame inventory for one video sequence.

    Keyframes are the frames with manual ground-truth labels. flow_dir, when
    set, points at a directory of per-adjacent-pair .flo files (see the flow
    module for the naming convention).
    """

    fps: float
    resolution: tuple[int, int]  # (width, height)
    frame_paths: list[str]
    keyframe_indices: list[int]
    flow_dir: str | None = None

    def __post_init__(self):
        if not self.frame_paths:
            raise ManifestError("manifest lists no frames")
        kf = list(self.keyframe_indices)
        if len(kf) < 2:
            raise ManifestError(f"at least 2 keyframes required, got {len(kf)}")
        if any(b <= a for a, b in zip(kf, kf[1:])):
            raise ManifestError(f"keyframe indices not strictly increasing: {kf}")
        if kf[0] < 0 or kf[-1] >= len(self.frame_paths):
            raise ManifestError(
                f"keyframe index out of range: {kf} for {len(self.frame_paths)} frames"
            )
        self.keyframe_indices = kf
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))

    @property
    def frame_count(self) -> int:
        return len(self.frame_paths)

    def to_dict(self) -> dict:
        return {
            "fps": self.fps,
            "resolution": list(self.resolution),
            "frames": list(self.frame_paths),
            "keyframes": list(self.keyframe_indices),
            "flow_dir": self.flow_dir,
        }


def load_manifest(path) -> SequenceManifest:
    """Parse a manifest JSON file, resolving relative paths against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    for key in ("resolution", "frames", "keyframes"):
        if key not in doc:
            raise ManifestError(f"manifest missing field {key!r}")
    base = path.parent
    frames = [str((base / p)) if not Path(p).is_absolute() else p for p in doc["frames"]]
    flow_dir = doc.get("flow_dir")
    if flow_dir is not None and not Path(flow_dir).is_absolute():
        flow_dir = str(base / flow_dir)
    return SequenceManifest(
        fps=float(doc.get("fps", 50.0)),
        resolution=(int(doc["resolution"][0]), int(doc["resolution"][1])),
        frame_paths=frames,
        keyframe_indices=[int(k) for k in doc["keyframes"]],
        flow_dir=flow_dir,
    )


def save_manifest(manifest: SequenceManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2))


class VoteGrid:
    """H x W x C accumulator of per-class votes for one frame.

    Counts only ever increase; each accumulation can be tagged with a channel
    name so reports can break totals down by vote source.
    """

    def __init__(self, height: int, width: int, num_classes: int = NUM_CLASSES):
        self.counts = np.zeros((height, width, num_classes), dtype=np.float32)
        self.channel_totals: dict[str, float] = {}

    @property
    def shape(self):
        return self.counts.shape

    def add(self, contribution: np.ndarray, weight: float = 1.0, channel: str | None = None):
        contribution = np.asarray(contribution)
        if contribution.shape != self.counts.shape:
            raise ValueError(
                f"contribution shape {contribution.shape} != grid shape {self.counts.shape}"
            )
        if weight < 0 or (contribution < 0).any():
            raise ValueError("vote contributions must be non-negative")
        self.counts += weight * contribution
        if channel is not None:
            self.channel_totals[channel] = self.channel_totals.get(channel, 0.0) + float(
                weight * contribution.sum()
            )

    def add_at(self, ys, xs, classes, weight: float = 1.0, channel: str | None = None):
        """Scatter-accumulate single votes at (ys, xs) for the given classes."""
        if weight < 0:
            raise ValueError("vote weight must be non-negative")
        np.add.at(self.counts, (ys, xs, classes), np.float32(weight))
        if channel is not None:
            self.channel_totals[channel] = self.channel_totals.get(channel, 0.0) + float(
                weight * len(np.atleast_1d(ys))
            )

    def total(self) -> float:
        return float(self.counts.sum())
