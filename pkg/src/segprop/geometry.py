"""Connected class regions, robust homography fitting, and raster geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import NUM_CLASSES, UNLABELED, LabelMap, SegpropError

# 4-connectivity: avoids diagonal leakage across thin class boundaries.
_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

DEFAULT_MIN_REGION_SIZE = 64
DEFAULT_INLIER_PX = 3.0
DEFAULT_MAX_ITERS = 2000
DEFAULT_CONFIDENCE = 0.995


class FitFailedError(SegpropError):
    pass


@dataclass
class ConnectedRegion:
    """Maximal 4-connected set of same-class pixels in one label map."""

    class_id: int
    region_id: int
    source_frame: int
    pixels: np.ndarray  # (N, 2) int32 [x, y]
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1) inclusive

    @property
    def size(self) -> int:
        return len(self.pixels)


def connected_components(label_map: LabelMap, min_region_size: int = DEFAULT_MIN_REGION_SIZE):
    """Split a fully labeled map into per-class 4-connected regions.

    Returns (regions, residue): regions hold components of at least
    min_region_size pixels; smaller components land in residue. Together they
    partition every pixel of the map.
    """
    data = label_map.data
    if (data == UNLABELED).any():
        raise ValueError("connected_components requires a fully labeled map")
    regions: list[ConnectedRegion] = []
    residue: list[ConnectedRegion] = []
    next_id = 0
    for cid in np.unique(data):
        mask = data == cid
        labeled, count = ndimage.label(mask, structure=_STRUCT4)
        slices = ndimage.find_objects(labeled)
        for comp in range(1, count + 1):
            sl = slices[comp - 1]
            ys, xs = np.nonzero(labeled[sl] == comp)
            ys = ys + sl[0].start
            xs = xs + sl[1].start
            pixels = np.stack([xs, ys], axis=1).astype(np.int32)
            bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
            region = ConnectedRegion(
                class_id=int(cid),
                region_id=next_id,
                source_frame=label_map.frame_index,
                pixels=pixels,
                bbox=bbox,
            )
            next_id += 1
            (regions if region.size >= min_region_size else residue).append(region)
    return regions, residue


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Project (N, 2) points through a 3x3 homography."""
    pts = np.asarray(pts, dtype=np.float64)
    ones = np.ones((len(pts), 1))
    q = np.hstack([pts, ones]) @ np.asarray(H, dtype=np.float64).T
    w = q[:, 2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    return q[:, :2] / w[:, None]


def _normalize_points(pts: np.ndarray):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    pn = (pts - c) * s
    return pn, T


def homography_from_points(pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray | None:
    """Normalized DLT through >= 4 correspondences; None when degenerate."""
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    n = len(pts_a)
    if n < 4 or len(pts_b) != n:
        return None
    an, Ta = _normalize_points(pts_a)
    bn, Tb = _normalize_points(pts_b)
    A = np.zeros((2 * n, 9))
    x, y = an[:, 0], an[:, 1]
    u, v = bn[:, 0], bn[:, 1]
    A[0::2] = np.column_stack(
        [x, y, np.ones(n), np.zeros(n), np.zeros(n), np.zeros(n), -u * x, -u * y, -u]
    )
    A[1::2] = np.column_stack(
        [np.zeros(n), np.zeros(n), np.zeros(n), x, y, np.ones(n), -v * x, -v * y, -v]
    )
    try:
        _, sv, Vt = np.linalg.svd(A)
    except np.linalg.LinAlgError:
        return None
    if n == 4 and sv[7] < 1e-10:
        return None  # rank-deficient minimal sample (collinear points)
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tb) @ Hn @ Ta
    if abs(H[2, 2]) < 1e-12 or abs(np.linalg.det(H)) < 1e-12:
        return None
    H = H / H[2, 2]
    if not np.isfinite(H).all():
        return None
    return H


def _sample_noncollinear(pts: np.ndarray, eps: float = 1e-6) -> bool:
    best = 0.0
    for skip in range(4):
        tri = np.delete(pts, skip, axis=0)
        u = tri[1] - tri[0]
        v = tri[2] - tri[0]
        best = max(best, 0.5 * abs(u[0] * v[1] - u[1] * v[0]))
    return best > eps


def fit_homography_ransac(pts_a: np.ndarray, pts_b: np.ndarray,
                          inlier_px: float = DEFAULT_INLIER_PX,
                          max_iters: int = DEFAULT_MAX_ITERS,
                          confidence: float = DEFAULT_CONFIDENCE,
                          rng=None):
    """Robust homography a -> b via 4-point RANSAC with adaptive early exit.

    Returns (H, inlier_mask), where the mask flags points whose reprojection
    error under the final refit is at most inlier_px. Raises FitFailedError
    when no usable consensus emerges.
    """
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    n = len(pts_a)
    if n < 4 or len(pts_b) != n:
        raise FitFailedError(f"need >= 4 correspondences, got {n}")
    rng = np.random.default_rng(rng)

    best_count = 0
    best_err = np.inf
    best_inliers = None
    needed = max_iters
    for it in range(max_iters):
        if it >= needed:
            break
        idx = rng.choice(n, size=4, replace=False)
        sa, sb = pts_a[idx], pts_b[idx]
        if not (_sample_noncollinear(sa) and _sample_noncollinear(sb)):
            continue
        H = homography_from_points(sa, sb)
        if H is None:
            continue
        err = np.sqrt(((apply_homography(H, pts_a) - pts_b) ** 2).sum(axis=1))
        inliers = err <= inlier_px
        count = int(inliers.sum())
        mean_err = float(err[inliers].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count = count
            best_err = mean_err
            best_inliers = inliers
            ratio = count / n
            if 0.0 < ratio < 1.0:
                denom = np.log(max(1.0 - ratio ** 4, 1e-12))
                needed = min(max_iters, int(np.ceil(np.log(1.0 - confidence) / denom)))
            elif ratio >= 1.0:
                needed = it + 1

    if best_inliers is None or best_count < 4:
        raise FitFailedError("no consensus set found")

    # Least-squares refit on the consensus set, then refresh the mask once.
    H = homography_from_points(pts_a[best_inliers], pts_b[best_inliers])
    if H is None:
        raise FitFailedError("degenerate consensus set")
    err = np.sqrt(((apply_homography(H, pts_a) - pts_b) ** 2).sum(axis=1))
    inliers = err <= inlier_px
    if inliers.sum() >= 4:
        refit = homography_from_points(pts_a[inliers], pts_b[inliers])
        if refit is not None:
            H = refit
            err = np.sqrt(((apply_homography(H, pts_a) - pts_b) ** 2).sum(axis=1))
            inliers = err <= inlier_px
    if abs(np.linalg.det(H)) < 1e-12:
        raise FitFailedError("singular homography")
    return H, inliers


def warp_region(region: ConnectedRegion, H: np.ndarray, width: int, height: int) -> np.ndarray:
    """Project region pixels through H onto an integer grid.

    Returns unique (M, 2) int [x, y] landing pixels; out-of-bounds drops.
    """
    projected = apply_homography(H, region.pixels.astype(np.float64))
    landed = np.floor(projected + 0.5).astype(np.int64)
    keep = (
        (landed[:, 0] >= 0) & (landed[:, 0] < width)
        & (landed[:, 1] >= 0) & (landed[:, 1] < height)
    )
    landed = landed[keep]
    if len(landed) == 0:
        return landed.reshape(0, 2)
    return np.unique(landed, axis=0)


def fractional_homography(H: np.ndarray, t: float, bbox) -> np.ndarray | None:
    """Partial transform between identity (t=0) and H (t=1).

    The images of the bounding-box corners are interpolated linearly and an
    exact homography is fit through the four corner pairs, so both endpoints
    are reproduced exactly.
    """
    x0, y0, x1, y1 = bbox
    corners = np.array(
        [[x0, y0], [x1 + 1, y0], [x1 + 1, y1 + 1], [x0, y1 + 1]], dtype=np.float64
    )
    mapped = apply_homography(H, corners)
    target = (1.0 - t) * corners + t * mapped
    return homography_from_points(corners, target)


def polygon_contains(vertices: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Even-odd containment test for float points against one polygon.

    A point is inside when a ray toward +x crosses the boundary an odd number
    of times; an edge contributes a crossing when its y-span half-open
    interval covers the point's y and the intersection lies strictly to the
    right. This half-open rule tiles shared borders without gaps or overlap.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(vertices)
    for k in range(n):
        x1, y1 = vertices[k]
        x2, y2 = vertices[(k + 1) % n]
        crosses = (y1 <= ys) != (y2 <= ys)
        if not crosses.any():
            continue
        xi = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xi > xs)
    return inside


def polygon_mask(vertices: np.ndarray, width: int, height: int) -> np.ndarray:
    """Rasterize one polygon over the pixel-center grid (even-odd fill)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return polygon_contains(vertices, xs, ys)
