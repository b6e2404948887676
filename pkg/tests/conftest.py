"""Shared builders for micro-instances and the engine/graph equivalence check."""

import numpy as np
import pytest

from segprop.core import LabelMap
from segprop.flow import ArrayFlowSource
from segprop.labelgraph import (
    build_consistency,
    icm_step,
    indicator_from_labels,
    labels_from_indicator,
    video_label_graph,
)
from segprop.propagation import PropagationConfig, segprop_iterate
from segprop.synth import smooth_noise


def smooth_random_flows(h, w, frame_count, seed, scale=0.8):
    """Independent smooth random flow per adjacent pair, both directions."""
    rng = np.random.default_rng(seed)
    fwd, bwd = {}, {}
    base = int(rng.integers(0, 10_000))
    for t in range(frame_count - 1):
        f = np.stack(
            [smooth_noise(h, w, base + t * 7 + c, sigma=2.5) - 0.5 for c in range(2)],
            axis=-1,
        ) * 2.0 * scale
        b = np.stack(
            [smooth_noise(h, w, base + 5000 + t * 7 + c, sigma=2.5) - 0.5 for c in range(2)],
            axis=-1,
        ) * 2.0 * scale
        fwd[t] = f.astype(np.float32)
        bwd[t + 1] = b.astype(np.float32)
    return ArrayFlowSource(fwd, bwd)


def random_micro_instance(seed, max_frames=5, max_size=8, max_classes=3):
    """Random tiny fully-labeled sequence with random smooth flows."""
    rng = np.random.default_rng(seed)
    frames = int(rng.integers(3, max_frames + 1))
    h = int(rng.integers(3, max_size + 1))
    w = int(rng.integers(3, max_size + 1))
    c = int(rng.integers(2, max_classes + 1))
    radius = int(rng.integers(1, 3))
    flows = smooth_random_flows(h, w, frames, seed=seed + 1,
                                scale=float(rng.uniform(0.3, 1.2)))
    labels = [
        LabelMap(t, rng.integers(0, c, size=(h, w)).astype(np.uint8))
        for t in range(frames)
    ]
    keyframes = [0, frames - 1]
    return labels, flows, keyframes, c, radius


def assert_engine_matches_graph_step(labels, flows, keyframes, num_classes,
                                     radius, tie_break, eps_fb=None):
    """One engine voting pass must equal one projected matrix-vector step."""
    h, w = labels[0].data.shape
    frames = len(labels)
    config = PropagationConfig(
        radius=radius, iterations=1, tie_break=tie_break,
        use_homography=False, eps_fb=eps_fb, seed=0,
    )
    engine_out = segprop_iterate(labels, flows, keyframes, config,
                                 num_classes=num_classes)
    engine_labels = np.stack([lm.data for lm in engine_out]).astype(np.int64)

    graph = video_label_graph(flows, frames, h, w, keyframes, radius,
                              num_classes=num_classes, eps_fb=eps_fb)
    W = build_consistency(graph)
    flat = np.concatenate([lm.data.ravel() for lm in labels]).astype(np.int64)
    x = indicator_from_labels(flat, num_classes)
    prefer = flat if tie_break == "near_pull" else None
    x1 = icm_step(x, W, graph.pinned, mode="parallel", prefer=prefer)
    graph_labels = labels_from_indicator(x1).reshape(frames, h, w)

    mismatch = engine_labels != graph_labels
    assert not mismatch.any(), (
        f"engine/graph divergence on {int(mismatch.sum())} pixels "
        f"(first at {np.argwhere(mismatch)[0]})"
    )
