"""Polygon keyframe annotations and their deterministic rasterization.

Polygons, not masks, are the stored ground truth: rasterization is a pure
function of the annotation, so label maps can be regenerated byte-identically
at any time. Painting order is ascending z, letting a loose background
polygon sit behind carefully traced foreground shapes ("send to back").
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import NUM_CLASSES, UNLABELED, LabelMap, SegpropError
from .geometry import polygon_mask


class AnnotationError(SegpropError):
    pass


class IncompleteCoverageError(SegpropError):
    def __init__(self, uncovered: int):
        self.uncovered = uncovered
        super().__init__(f"{uncovered} pixels not covered by any polygon")


@dataclass
class Polygon:
    class_id: int
    z_order: int
    vertices: np.ndarray  # (N, 2) float [x, y] in image pixel space

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise AnnotationError("vertices must be (N, 2)")
        if len(self.vertices) < 3:
            raise AnnotationError("a polygon needs at least 3 vertices")
        if not np.isfinite(self.vertices).all():
            raise AnnotationError("vertices must be finite")
        if not 0 <= self.class_id < NUM_CLASSES:
            raise AnnotationError(f"invalid class id {self.class_id}")


@dataclass
class PolygonAnnotation:
    frame_index: int
    revision: int = 0
    polygons: list[Polygon] = field(default_factory=list)

    def __post_init__(self):
        zs = [p.z_order for p in self.polygons]
        if len(set(zs)) != len(zs):
            raise AnnotationError("z_order values must be unique (total order)")

    def to_dict(self) -> dict:
        return {
            "frame": self.frame_index,
            "revision": self.revision,
            "polygons": [
                {
                    "class": p.class_id,
                    "z": p.z_order,
                    "points": [[float(x), float(y)] for x, y in p.vertices],
                }
                for p in self.polygons
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "PolygonAnnotation":
        try:
            polygons = [
                Polygon(
                    class_id=int(p["class"]),
                    z_order=int(p["z"]),
                    vertices=np.asarray(p["points"], dtype=np.float64),
                )
                for p in doc.get("polygons", [])
            ]
            return cls(
                frame_index=int(doc["frame"]),
                revision=int(doc.get("revision", 0)),
                polygons=polygons,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise AnnotationError(f"malformed annotation document: {e}") from e

    @classmethod
    def from_json(cls, text: str) -> "PolygonAnnotation":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise AnnotationError(f"invalid JSON: {e}") from e
        return cls.from_dict(doc)


def rasterize_polygons(annotation: PolygonAnnotation, width: int, height: int) -> LabelMap:
    """Paint polygons in ascending z order over the pixel-center grid.

    Even-odd fill with the half-open boundary rule, so shared borders tile
    without gaps or double coverage. Raises IncompleteCoverageError when any
    pixel remains unpainted.
    """
    canvas = np.full((height, width), UNLABELED, dtype=np.uint8)
    for poly in sorted(annotation.polygons, key=lambda p: p.z_order):
        mask = polygon_mask(poly.vertices, width, height)
        canvas[mask] = poly.class_id
    uncovered = int((canvas == UNLABELED).sum())
    if uncovered:
        raise IncompleteCoverageError(uncovered)
    return LabelMap(frame_index=annotation.frame_index, data=canvas)
