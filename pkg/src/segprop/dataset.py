"""Dataset layout ingestion: label-image codecs, discovery, and splits.

Expected directory layout per video:
    <video>/frames/%06d.png
    <video>/labels/%06d.png      (keyframes only; presence defines keyframes)
    <video>/flow/%06d_{fwd,bwd}.flo   (optional)
    <video>/manifest.json        (optional; synthesized from the layout if absent)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    NUM_CLASSES,
    UNLABELED,
    LabelMap,
    ManifestError,
    SegpropError,
    SequenceManifest,
    palette_array,
)

DEFAULT_COLOR_TOLERANCE = 8
UNLABELED_COLOR = (0, 0, 0)

_FRAME_RE = re.compile(r"^(\d{6})\.(png|jpg|jpeg)$", re.IGNORECASE)


class DecodeError(SegpropError):
    pass


def encode_label_image(label_map: LabelMap) -> np.ndarray:
    """(H, W, 3) uint8 rendering using the display palette; UNLABELED -> black."""
    table = np.zeros((256, 3), dtype=np.uint8)
    table[:NUM_CLASSES] = palette_array()
    table[UNLABELED] = UNLABELED_COLOR
    return table[label_map.data]


def save_label_image(label_map: LabelMap, path) -> None:
    Image.fromarray(encode_label_image(label_map)).save(path)


def decode_label_image(source, frame_index: int = 0,
                       tolerance: int = DEFAULT_COLOR_TOLERANCE,
                       allow_unlabeled: bool = False) -> LabelMap:
    """Map a color label image back to class ids.

    Each pixel snaps to the nearest palette color within `tolerance`
    (max channel distance, to absorb anti-aliased boundaries); anything
    farther raises DecodeError listing the offending colors.
    """
    if isinstance(source, (str, Path)):
        img = np.asarray(Image.open(source).convert("RGB"))
    else:
        img = np.asarray(source, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DecodeError(f"expected an RGB image, got shape {img.shape}")
    pal = palette_array().astype(np.int16)
    dists = np.abs(img[:, :, None, :].astype(np.int16) - pal[None, None, :, :]).max(axis=3)
    best = dists.argmin(axis=2).astype(np.uint8)
    best_dist = dists.min(axis=2)
    out = best
    if allow_unlabeled:
        black = np.abs(img.astype(np.int16) - np.asarray(UNLABELED_COLOR, dtype=np.int16)).max(axis=2)
        is_unlabeled = black <= tolerance
        out = np.where(is_unlabeled & (black < best_dist), UNLABELED, best).astype(np.uint8)
        best_dist = np.where(is_unlabeled, 0, best_dist)
    bad = best_dist > tolerance
    if bad.any():
        offending = np.unique(img[bad].reshape(-1, 3), axis=0)
        shown = ", ".join(str(tuple(int(v) for v in c)) for c in offending[:8])
        more = "" if len(offending) <= 8 else f" (+{len(offending) - 8} more)"
        raise DecodeError(
            f"{int(bad.sum())} pixels with unmapped colors beyond tolerance "
            f"{tolerance}: {shown}{more}"
        )
    return LabelMap(frame_index=frame_index, data=out)


def load_label_map(path, frame_index: int = 0,
                   tolerance: int = DEFAULT_COLOR_TOLERANCE) -> LabelMap:
    return decode_label_image(path, frame_index=frame_index, tolerance=tolerance)


@dataclass
class VideoEntry:
    name: str
    directory: Path
    manifest: SequenceManifest
    label_paths: dict[int, Path] = field(default_factory=dict)
    split: str | None = None  # "train" or "test" at the video level
    frame_splits: dict[int, str] = field(default_factory=dict)

    @property
    def keyframe_count(self) -> int:
        return len(self.label_paths)


@dataclass
class DatasetIndex:
    root: Path
    videos: list[VideoEntry]

    def video(self, name: str) -> VideoEntry:
        for v in self.videos:
            if v.name == name:
                return v
        raise KeyError(name)


def _scan_numbered(directory: Path) -> dict[int, Path]:
    out = {}
    if directory.is_dir():
        for p in sorted(directory.iterdir()):
            m = _FRAME_RE.match(p.name)
            if m:
                out[int(m.group(1))] = p
    return out


def index_video(video_dir) -> VideoEntry:
    """Build a VideoEntry from the on-disk layout, reading or synthesizing the
    manifest. A frame is a keyframe iff a label image exists for its index."""
    video_dir = Path(video_dir)
    frames = _scan_numbered(video_dir / "frames")
    if not frames:
        raise ManifestError(f"{video_dir}: no frames found under frames/")
    indices = sorted(frames)
    if indices != list(range(len(indices))):
        raise ManifestError(f"{video_dir}: frame indices not contiguous from 0")
    labels = _scan_numbered(video_dir / "labels")
    stray = [k for k in labels if k not in frames]
    if stray:
        raise ManifestError(f"{video_dir}: labels without frames: {stray[:5]}")

    manifest_path = video_dir / "manifest.json"
    if manifest_path.exists():
        from .core import load_manifest
        manifest = load_manifest(manifest_path)
    else:
        with Image.open(frames[0]) as im:
            resolution = im.size
        flow_dir = video_dir / "flow"
        manifest = SequenceManifest(
            fps=50.0,
            resolution=resolution,
            frame_paths=[str(frames[k]) for k in indices],
            keyframe_indices=sorted(labels),
            flow_dir=str(flow_dir) if flow_dir.is_dir() else None,
        )
    return VideoEntry(
        name=video_dir.name,
        directory=video_dir,
        manifest=manifest,
        label_paths=dict(sorted(labels.items())),
    )


def index_dataset(root) -> DatasetIndex:
    root = Path(root)
    videos = []
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / "frames").is_dir():
            videos.append(index_video(child))
    if not videos:
        raise ManifestError(f"{root}: no video directories found")
    return DatasetIndex(root=root, videos=videos)


def split_dataset(index: DatasetIndex, test_videos) -> dict:
    """Assign splits: test videos untouched; each training video's first 90%
    of frames go to train, the remainder to validation.

    Returns a summary with per-split frame and keyframe counts.
    """
    test_videos = set(test_videos)
    unknown = test_videos - {v.name for v in index.videos}
    if unknown:
        raise ManifestError(f"unknown test videos: {sorted(unknown)}")
    counts = {
        "train": {"frames": 0, "keyframes": 0},
        "val": {"frames": 0, "keyframes": 0},
        "test": {"frames": 0, "keyframes": 0},
    }
    for video in index.videos:
        n = video.manifest.frame_count
        if n == 0:
            raise ManifestError(f"{video.name}: empty video")
        if video.name in test_videos:
            video.split = "test"
            video.frame_splits = {k: "test" for k in range(n)}
            counts["test"]["frames"] += n
            counts["test"]["keyframes"] += video.keyframe_count
        else:
            video.split = "train"
            boundary = int(np.floor(0.9 * n))
            video.frame_splits = {
                k: ("train" if k < boundary else "val") for k in range(n)
            }
            counts["train"]["frames"] += boundary
            counts["val"]["frames"] += n - boundary
            for k in video.label_paths:
                counts["train" if k < boundary else "val"]["keyframes"] += 1
    return counts


def load_keyframe_labels(video: VideoEntry,
                         tolerance: int = DEFAULT_COLOR_TOLERANCE) -> dict[int, LabelMap]:
    return {
        k: decode_label_image(path, frame_index=k, tolerance=tolerance)
        for k, path in video.label_paths.items()
    }
