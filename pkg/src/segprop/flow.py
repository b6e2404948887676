"""Flow-field I/O (.flo), a classical pyramidal estimator, and flow chaining.

Chained correspondence maps follow each pixel across a span of frames by
repeatedly sampling the per-adjacent-pair flow fields at the current subpixel
position. Pixels that leave the image or fail the forward-backward round-trip
test are marked invalid and contribute no votes downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import FlowDirection, FlowField, SegpropError

try:
    from numba import njit, prange
    _HAS_NUMBA = True
except ImportError:  # pure-numpy fallback keeps results identical, just slower
    _HAS_NUMBA = False

FLO_MAGIC = 202021.25

# Forward-backward consistency threshold in pixels (round trip must return
# closer than this to the starting pixel).
DEFAULT_EPS_FB = 1.5


class FlowFormatError(SegpropError):
    pass


class MissingFlowError(SegpropError):
    pass


def read_flow_file(path, source_frame: int = 0,
                   direction: FlowDirection = FlowDirection.FORWARD) -> FlowField:
    """Read a Middlebury .flo file (little-endian, row-major interleaved dx, dy)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: file too short for a .flo header")
    magic = struct.unpack("<f", raw[0:4])[0]
    if abs(magic - FLO_MAGIC) > 1e-3:
        raise FlowFormatError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC}")
    width, height = struct.unpack("<ii", raw[4:12])
    if width <= 0 or height <= 0:
        raise FlowFormatError(f"{path}: invalid dimensions {width}x{height}")
    expected = width * height * 2
    payload = np.frombuffer(raw, dtype="<f4", offset=12)
    if payload.size != expected:
        raise FlowFormatError(
            f"{path}: payload has {payload.size} floats, expected {expected}"
        )
    vectors = payload.reshape(height, width, 2)
    return FlowField(source_frame=source_frame, direction=direction, vectors=vectors)


def write_flow_file(path, flow: FlowField) -> None:
    h, w = flow.vectors.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(flow.vectors.astype("<f4").tobytes())


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    if img.max() > 1.5:
        img = img / 255.0
    return img


def _downsample(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, 1.0)[::2, ::2]


def _sample(field: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of a (H, W) field at float positions, clamped to bounds."""
    h, w = field.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = field[y0, x0] * (1.0 - fx) + field[y0, x1] * fx
    bot = field[y1, x0] * (1.0 - fx) + field[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_flow(vectors: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of a (H, W, 2) flow field; returns (..., 2) [dx, dy].

    Both channels share one set of gather indices (this sits on the hot path
    of chain construction).
    """
    h, w = vectors.shape[:2]
    shape = np.shape(xs)
    xs = np.clip(np.ravel(xs), 0.0, w - 1.0)
    ys = np.clip(np.ravel(ys), 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[:, None]
    fy = (ys - y0)[:, None]
    flat = vectors.reshape(-1, 2)
    g00 = flat[y0 * w + x0]
    g01 = flat[y0 * w + x1]
    g10 = flat[y1 * w + x0]
    g11 = flat[y1 * w + x1]
    top = g00 + (g01 - g00) * fx
    bot = g10 + (g11 - g10) * fx
    out = top + (bot - top) * fy
    return out.reshape(shape + (2,))


def nearest_pixel(coords: np.ndarray) -> np.ndarray:
    """Round subpixel (..., 2) [x, y] coordinates to integer pixels (half up)."""
    return np.floor(np.asarray(coords) + 0.5).astype(np.intp)


def estimate_flow(frame_a, frame_b, levels: int = 4, window: int = 11,
                  iterations: int = 3, source_frame: int = 0,
                  direction: FlowDirection = FlowDirection.FORWARD) -> FlowField:
    """Dense coarse-to-fine local least-squares flow from frame_a to frame_b.

    A Lucas-Kanade style solver: at each pyramid level the current flow warps
    frame_b toward frame_a, a windowed 2x2 normal system is solved per pixel,
    and the increment is accumulated. Classical fallback for when no
    externally computed flow files are available.
    """
    a = _to_gray(frame_a)
    b = _to_gray(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape

    pyr_a, pyr_b = [a], [b]
    for _ in range(levels - 1):
        if min(pyr_a[-1].shape) < 16:
            break
        pyr_a.append(_downsample(pyr_a[-1]))
        pyr_b.append(_downsample(pyr_b[-1]))

    flow = np.zeros(pyr_a[-1].shape + (2,), dtype=np.float64)
    half = window // 2
    for level in range(len(pyr_a) - 1, -1, -1):
        la, lb = pyr_a[level], pyr_b[level]
        lh, lw = la.shape
        if flow.shape[:2] != (lh, lw):
            scale = (lh / flow.shape[0], lw / flow.shape[1])
            flow = np.stack(
                [ndimage.zoom(flow[..., c], scale, order=1) for c in range(2)], axis=-1
            )
            flow[..., 0] *= scale[1]
            flow[..., 1] *= scale[0]
        ys, xs = np.mgrid[0:lh, 0:lw].astype(np.float64)
        for _ in range(iterations):
            warped = _sample(lb, xs + flow[..., 0], ys + flow[..., 1])
            avg = 0.5 * (la + warped)
            gy, gx = np.gradient(avg)
            gt = warped - la
            sxx = ndimage.uniform_filter(gx * gx, window)
            sxy = ndimage.uniform_filter(gx * gy, window)
            syy = ndimage.uniform_filter(gy * gy, window)
            sxt = ndimage.uniform_filter(gx * gt, window)
            syt = ndimage.uniform_filter(gy * gt, window)
            det = sxx * syy - sxy * sxy
            trace = sxx + syy
            eig_min = 0.5 * (trace - np.sqrt(np.maximum(trace * trace - 4.0 * det, 0.0)))
            reliable = eig_min > 1e-6
            safe_det = np.where(np.abs(det) > 1e-12, det, 1.0)
            du = (-sxt * syy + syt * sxy) / safe_det
            dv = (-syt * sxx + sxt * sxy) / safe_det
            du = np.where(reliable, np.clip(du, -half, half), 0.0)
            dv = np.where(reliable, np.clip(dv, -half, half), 0.0)
            flow[..., 0] += du
            flow[..., 1] += dv
        flow[..., 0] = ndimage.median_filter(flow[..., 0], 3)
        flow[..., 1] = ndimage.median_filter(flow[..., 1], 3)
    return FlowField(source_frame=source_frame, direction=direction,
                     vectors=flow.astype(np.float32))


@dataclass
class CorrespondenceMap:
    """Subpixel mapping of every pixel of from_frame into to_frame.

    coords is (H, W, 2) float32 [x, y]; valid marks pixels whose chained
    position stayed in bounds and passed the round-trip test.
    """

    from_frame: int
    to_frame: int
    coords: np.ndarray
    valid: np.ndarray


class FlowSource:
    """Provider of per-adjacent-pair flow fields for one sequence."""

    def get(self, frame: int, direction: FlowDirection) -> FlowField:
        raise NotImplementedError

    def forward(self, frame: int) -> FlowField:
        return self.get(frame, FlowDirection.FORWARD)

    def backward(self, frame: int) -> FlowField:
        return self.get(frame, FlowDirection.BACKWARD)


class ArrayFlowSource(FlowSource):
    """In-memory flow source. forward[t] maps t -> t+1, backward[t] maps t -> t-1."""

    def __init__(self, forward: dict | list, backward: dict | list):
        def wrap(table, direction):
            items = enumerate(table) if isinstance(table, (list, tuple)) else table.items()
            return {
                t: (v if isinstance(v, FlowField)
                    else FlowField(source_frame=t, direction=direction, vectors=v))
                for t, v in items
            }

        self._fwd = wrap(forward, FlowDirection.FORWARD)
        self._bwd = wrap(backward, FlowDirection.BACKWARD)

    def get(self, frame: int, direction: FlowDirection) -> FlowField:
        table = self._fwd if direction is FlowDirection.FORWARD else self._bwd
        if frame not in table:
            raise MissingFlowError(f"no {direction.value} flow for frame {frame}")
        return table[frame]


class DirectoryFlowSource(FlowSource):
    """Reads <dir>/%06d_fwd.flo and <dir>/%06d_bwd.flo on demand, with caching."""

    def __init__(self, directory, pattern: str = "%06d_%s.flo", cache_size: int = 16):
        self.directory = Path(directory)
        self.pattern = pattern
        self._cache: dict[tuple[int, FlowDirection], FlowField] = {}
        self._cache_size = cache_size

    def get(self, frame: int, direction: FlowDirection) -> FlowField:
        key = (frame, direction)
        if key in self._cache:
            return self._cache[key]
        suffix = "fwd" if direction is FlowDirection.FORWARD else "bwd"
        path = self.directory / (self.pattern % (frame, suffix))
        if not path.exists():
            raise MissingFlowError(f"flow file not found: {path}")
        field = read_flow_file(path, source_frame=frame, direction=direction)
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = field
        return field


class EstimatingFlowSource(FlowSource):
    """Computes flow between consecutive frames on demand (classical estimator)."""

    def __init__(self, frames: list, levels: int = 4, window: int = 11, iterations: int = 3):
        self.frames = frames
        self.params = dict(levels=levels, window=window, iterations=iterations)
        self._cache: dict[tuple[int, FlowDirection], FlowField] = {}

    def get(self, frame: int, direction: FlowDirection) -> FlowField:
        key = (frame, direction)
        if key in self._cache:
            return self._cache[key]
        other = frame + 1 if direction is FlowDirection.FORWARD else frame - 1
        if not (0 <= frame < len(self.frames)) or not (0 <= other < len(self.frames)):
            raise MissingFlowError(f"no frame pair for {direction.value} flow at {frame}")
        field = estimate_flow(self.frames[frame], self.frames[other],
                              source_frame=frame, direction=direction, **self.params)
        self._cache[key] = field
        return field


def _advect_step_numpy(field: np.ndarray, pos: np.ndarray, valid: np.ndarray,
                       width: int, height: int) -> None:
    vec = sample_flow(field, pos[..., 0], pos[..., 1])
    moved = pos + vec
    np.copyto(pos, moved, where=valid[..., None])
    inb = (
        (pos[..., 0] >= 0.0) & (pos[..., 0] <= width - 1.0)
        & (pos[..., 1] >= 0.0) & (pos[..., 1] <= height - 1.0)
    )
    valid &= inb


if _HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _advect_step_jit(field, pos, valid, width, height):  # pragma: no cover
        n = pos.shape[0]
        for i in prange(n):
            if not valid[i]:
                continue
            x = pos[i, 0]
            y = pos[i, 1]
            xs = min(max(x, 0.0), width - 1.0)
            ys = min(max(y, 0.0), height - 1.0)
            x0 = int(np.floor(xs))
            y0 = int(np.floor(ys))
            x1 = min(x0 + 1, width - 1)
            y1 = min(y0 + 1, height - 1)
            fx = xs - x0
            fy = ys - y0
            dx = ((field[y0, x0, 0] + (field[y0, x1, 0] - field[y0, x0, 0]) * fx)
                  + ((field[y1, x0, 0] + (field[y1, x1, 0] - field[y1, x0, 0]) * fx)
                     - (field[y0, x0, 0] + (field[y0, x1, 0] - field[y0, x0, 0]) * fx)) * fy)
            dy = ((field[y0, x0, 1] + (field[y0, x1, 1] - field[y0, x0, 1]) * fx)
                  + ((field[y1, x0, 1] + (field[y1, x1, 1] - field[y1, x0, 1]) * fx)
                     - (field[y0, x0, 1] + (field[y0, x1, 1] - field[y0, x0, 1]) * fx)) * fy)
            nx = x + dx
            ny = y + dy
            pos[i, 0] = nx
            pos[i, 1] = ny
            if nx < 0.0 or nx > width - 1.0 or ny < 0.0 or ny > height - 1.0:
                valid[i] = False


def _advect(flows: FlowSource, pos: np.ndarray, valid: np.ndarray,
            start: int, stop: int, width: int, height: int):
    """Walk positions from frame start to frame stop, freezing invalid pixels."""
    step = 1 if stop > start else -1
    direction = FlowDirection.FORWARD if step > 0 else FlowDirection.BACKWARD
    pos = np.array(pos, dtype=np.float64, copy=True)  # kernels mutate in place
    valid = valid.copy()
    shape = valid.shape
    if _HAS_NUMBA:
        flat_pos = pos.reshape(-1, 2)
        flat_valid = valid.reshape(-1)
        for t in range(start, stop, step):
            field = flows.get(t, direction)
            _advect_step_jit(field.vectors, flat_pos, flat_valid, width, height)
    else:
        for t in range(start, stop, step):
            field = flows.get(t, direction)
            _advect_step_numpy(field.vectors, pos, valid, width, height)
    return pos.reshape(shape + (2,)), valid


def chain_correspondence(flows: FlowSource, from_frame: int, to_frame: int,
                         eps_fb: float | None = DEFAULT_EPS_FB) -> CorrespondenceMap:
    """Map every pixel of from_frame to its chained position in to_frame.

    eps_fb enables the forward-backward round-trip check; pass None to skip it
    (bounds checking alone then decides validity).
    """
    if from_frame == to_frame:
        try:
            probe = flows.forward(from_frame)
        except MissingFlowError:
            probe = flows.backward(from_frame)
        h, w = probe.height, probe.width
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        coords = np.stack([xs, ys], axis=-1)
        return CorrespondenceMap(from_frame, to_frame, coords.astype(np.float32),
                                 np.ones((h, w), dtype=bool))

    step = 1 if to_frame > from_frame else -1
    direction = FlowDirection.FORWARD if step > 0 else FlowDirection.BACKWARD
    first = flows.get(from_frame, direction)
    h, w = first.height, first.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    start = np.stack([xs, ys], axis=-1)
    valid = np.ones((h, w), dtype=bool)

    pos, valid = _advect(flows, start, valid, from_frame, to_frame, w, h)
    if eps_fb is not None:
        back, back_valid = _advect(flows, pos, valid, to_frame, from_frame, w, h)
        dist = np.sqrt(((back - start) ** 2).sum(axis=-1))
        valid = valid & back_valid & (dist <= eps_fb)
    return CorrespondenceMap(from_frame, to_frame, pos.astype(np.float32), valid)
