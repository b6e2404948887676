"""Explicit graph form of the voting objective, used as a small-scale oracle.

Every pixel of every frame is a node; directed links record correspondence
votes (a link s -> t means pixel s observes pixel t through a chained flow).
The pairwise structure counts links in both orientations, so one undirected
pair linked in both directions carries weight 2. That multiplicity convention
is what makes one projected matrix-vector step identical to one pass of the
voting engine; it is pinned by the equivalence tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .flow import FlowSource, chain_correspondence, nearest_pixel


@dataclass
class LabelGraph:
    """Directed multigraph over pixels with pinned (ground-truth) nodes."""

    num_nodes: int
    num_classes: int
    links: np.ndarray  # (E, 2) int64 directed [source, target]; parallel links allowed
    pinned: np.ndarray  # (N,) bool

    def __post_init__(self):
        self.links = np.asarray(self.links, dtype=np.int64).reshape(-1, 2)
        self.pinned = np.asarray(self.pinned, dtype=bool)
        if self.pinned.shape != (self.num_nodes,):
            raise ValueError("pinned mask must have one entry per node")
        if len(self.links) and (self.links.min() < 0 or self.links.max() >= self.num_nodes):
            raise ValueError("link endpoint out of range")


def build_consistency(graph: LabelGraph) -> sparse.csr_matrix:
    """Pairwise consistency structure as an N x N sparse count matrix W.

    W[i, j] counts links between i and j in either orientation; the full
    structure over (node, class) index pairs is W[i, j] * [a == b] and is
    never materialized densely.
    """
    n = graph.num_nodes
    if len(graph.links) == 0:
        return sparse.csr_matrix((n, n), dtype=np.int64)
    src = graph.links[:, 0]
    dst = graph.links[:, 1]
    data = np.ones(len(src) * 2, dtype=np.int64)
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    W = sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    W.sum_duplicates()
    return W


def indicator_from_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(N, C) one-hot assignment matrix from a flat label vector."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("label out of range")
    x = np.zeros((len(labels), num_classes), dtype=np.float64)
    x[np.arange(len(labels)), labels] = 1.0
    return x


def labels_from_indicator(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    binary = (x == 0.0) | (x == 1.0)
    if not binary.all() or not np.all(x.sum(axis=1) == 1.0):
        raise ValueError("each row must have exactly one 1")
    return x.argmax(axis=1)


def clustering_score(x: np.ndarray, W: sparse.spmatrix) -> float:
    """Quadratic-form score: number of consistently labeled linked pairs.

    Equals the sum over nodes of same-labeled neighbor counts (both
    orientations of every link counted).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or W.shape[0] != x.shape[0]:
        raise ValueError(f"assignment shape {x.shape} incompatible with W {W.shape}")
    return float((x * (W @ x)).sum())


def _choose_labels(field: np.ndarray, current: np.ndarray,
                   prefer: np.ndarray | None) -> np.ndarray:
    """Argmax per row; ties prefer `prefer` when it attains the max, then the
    lowest class id; zero rows keep the current label."""
    m = field.max(axis=1)
    choice = field.argmax(axis=1)  # lowest class id on ties
    if prefer is not None:
        prefer = np.asarray(prefer, dtype=np.int64)
        ok = (prefer >= 0) & (prefer < field.shape[1])
        pv = np.where(ok, prefer, 0)
        attains = field[np.arange(len(field)), pv] >= m
        choice = np.where(ok & attains, pv, choice)
    return np.where(m <= 0, current, choice)


def icm_step(x: np.ndarray, W: sparse.spmatrix, pinned: np.ndarray,
             mode: str = "parallel", prefer: np.ndarray | None = None) -> np.ndarray:
    """One coordinate-argmax update of the assignment.

    parallel: every unpinned row updates simultaneously from the incoming x.
    sequential: rows update in index order, each seeing earlier updates; this
    variant never decreases the clustering score.
    """
    x = np.asarray(x, dtype=np.float64)
    pinned = np.asarray(pinned, dtype=bool)
    current = x.argmax(axis=1)
    if mode == "parallel":
        field = W @ x
        new_labels = _choose_labels(field, current, prefer)
        new_labels = np.where(pinned, current, new_labels)
        return indicator_from_labels(new_labels, x.shape[1])
    if mode == "sequential":
        out = x.copy()
        Wc = W.tocsr()
        for i in range(x.shape[0]):
            if pinned[i]:
                continue
            row = Wc.getrow(i)
            field_i = (row @ out).ravel()
            pref_i = None if prefer is None else np.asarray([prefer[i]])
            lab = _choose_labels(field_i[None, :], np.asarray([out[i].argmax()]), pref_i)[0]
            out[i] = 0.0
            out[i, lab] = 1.0
        return out
    raise ValueError(f"unknown mode {mode!r}")


def video_label_graph(flows: FlowSource, frame_count: int, height: int, width: int,
                      keyframe_indices, radius: int, num_classes: int,
                      eps_fb: float | None = None) -> LabelGraph:
    """Build the explicit pixel graph for a short sequence.

    Links come from chained correspondences between every frame pair at
    temporal distance 1..radius, in both directions, restricted to each
    chain's valid mask. Node id = frame * H * W + y * W + x.
    """
    per_frame = height * width
    links = []
    for a in range(frame_count):
        for b in range(a + 1, min(a + radius + 1, frame_count)):
            for src_f, dst_f in ((a, b), (b, a)):
                corr = chain_correspondence(flows, src_f, dst_f, eps_fb=eps_fb)
                land = nearest_pixel(corr.coords)
                vy, vx = np.nonzero(corr.valid)
                if len(vy) == 0:
                    continue
                src_ids = src_f * per_frame + vy * width + vx
                dst_ids = dst_f * per_frame + land[vy, vx, 1] * width + land[vy, vx, 0]
                links.append(np.stack([src_ids, dst_ids], axis=1))
    all_links = (
        np.concatenate(links, axis=0) if links else np.zeros((0, 2), dtype=np.int64)
    )
    pinned = np.zeros(frame_count * per_frame, dtype=bool)
    for k in keyframe_indices:
        pinned[k * per_frame:(k + 1) * per_frame] = True
    return LabelGraph(
        num_nodes=frame_count * per_frame,
        num_classes=num_classes,
        links=all_links,
        pinned=pinned,
    )
