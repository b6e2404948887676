import numpy as np
import pytest

from conftest import assert_engine_matches_graph_step, random_micro_instance, smooth_random_flows
from segprop.core import UNLABELED, LabelMap, VoteGrid
from segprop.flow import ArrayFlowSource, CorrespondenceMap, chain_correspondence
from segprop.propagation import (
    ExternalVoteProvider,
    NullVoteProvider,
    PropagationConfig,
    Propagator,
    VoteProvider,
    cast_flow_votes,
    cast_homography_votes,
    propagate_pair,
    resolve_majority,
    segprop_iterate,
)
from segprop.synth import render_scene, translating_rectangles_scene


def _identity_corr(h, w, from_frame=0, to_frame=1, valid=None):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    coords = np.stack([xs, ys], axis=-1)
    if valid is None:
        valid = np.ones((h, w), dtype=bool)
    return CorrespondenceMap(from_frame, to_frame, coords, valid)


def _zero_flows(h, w, count):
    fwd = {t: np.zeros((h, w, 2), np.float32) for t in range(count - 1)}
    bwd = {t: np.zeros((h, w, 2), np.float32) for t in range(1, count)}
    return ArrayFlowSource(fwd, bwd)


def _const_flows(h, w, count, dx, dy=0.0):
    fwd = {t: np.full((h, w, 2), [dx, dy], np.float32) for t in range(count - 1)}
    bwd = {t: np.full((h, w, 2), [-dx, -dy], np.float32) for t in range(1, count)}
    return ArrayFlowSource(fwd, bwd)


# ------------------------------------------------------------ flow-vote casts

def test_one_pixel_identity_maps_four_unanimous_votes():
    li = LabelMap(0, np.full((1, 1), 3, np.uint8))
    lj = LabelMap(2, np.full((1, 1), 3, np.uint8))
    corr = _identity_corr(1, 1)
    grid = cast_flow_votes(li, lj, corr, corr, corr, corr, num_classes=5)
    assert grid.counts[0, 0, 3] == 4.0
    assert grid.counts.sum() == 4.0


def test_identity_maps_split_between_disagreeing_keyframes():
    li = LabelMap(0, np.full((2, 2), 1, np.uint8))
    lj = LabelMap(2, np.full((2, 2), 2, np.uint8))
    corr = _identity_corr(2, 2)
    grid = cast_flow_votes(li, lj, corr, corr, corr, corr, num_classes=4)
    assert (grid.counts[:, :, 1] == 2.0).all()
    assert (grid.counts[:, :, 2] == 2.0).all()


def test_flow_votes_match_brute_force_scatter_gather():
    h, w = 8, 8
    rng = np.random.default_rng(0)
    li = LabelMap(0, rng.integers(0, 3, (h, w)).astype(np.uint8))
    lj = LabelMap(4, rng.integers(0, 3, (h, w)).astype(np.uint8))
    flows = _const_flows(h, w, 5, dx=1.0)
    k = 2
    corr_k_i = chain_correspondence(flows, k, 0)
    corr_k_j = chain_correspondence(flows, k, 4)
    corr_i_k = chain_correspondence(flows, 0, k)
    corr_j_k = chain_correspondence(flows, 4, k)
    grid = cast_flow_votes(li, lj, corr_k_i, corr_k_j, corr_i_k, corr_j_k, num_classes=3)

    # independent scalar oracle: content shifts +1/frame, so k=2 sees frame 0
    # content at x-2 and frame 4 content at x+2
    ref = np.zeros((h, w, 3), np.float32)
    for y in range(h):
        for x in range(w):
            if x - 2 >= 0:
                ref[y, x, li.data[y, x - 2]] += 1  # pull from i
            if x + 2 <= w - 1:
                ref[y, x, lj.data[y, x + 2]] += 1  # pull from j
    for y in range(h):
        for x in range(w):
            if x + 2 <= w - 1:
                ref[y, x + 2, li.data[y, x]] += 1  # push from i
            if x - 2 >= 0:
                ref[y, x - 2, lj.data[y, x]] += 1  # push from j
    assert np.array_equal(grid.counts, ref)


def test_vote_totals_bounded_by_valid_pixels():
    h, w = 6, 6
    rng = np.random.default_rng(1)
    li = LabelMap(0, rng.integers(0, 2, (h, w)).astype(np.uint8))
    lj = LabelMap(3, rng.integers(0, 2, (h, w)).astype(np.uint8))
    flows = _const_flows(h, w, 4, dx=1.5)
    corr_k_i = chain_correspondence(flows, 1, 0)
    corr_k_j = chain_correspondence(flows, 1, 3)
    corr_i_k = chain_correspondence(flows, 0, 1)
    corr_j_k = chain_correspondence(flows, 3, 1)
    grid = cast_flow_votes(li, lj, corr_k_i, corr_k_j, corr_i_k, corr_j_k, num_classes=2)
    pull_valid = corr_k_i.valid.sum() + corr_k_j.valid.sum()
    push_valid = corr_i_k.valid.sum() + corr_j_k.valid.sum()
    assert grid.counts.sum() == pull_valid + push_valid  # exactly one vote each
    assert grid.counts.sum() <= 2 * corr_k_i.valid.size * 2


def test_dimension_mismatch_rejected():
    li = LabelMap(0, np.zeros((2, 2), np.uint8))
    lj = LabelMap(1, np.zeros((3, 3), np.uint8))
    corr = _identity_corr(2, 2)
    with pytest.raises(ValueError):
        cast_flow_votes(li, lj, corr, corr, corr, corr, num_classes=2)


# ------------------------------------------------------ homography-vote casts

class _Region:
    def __init__(self, pixels, class_id, bbox=None):
        self.pixels = np.asarray(pixels, dtype=np.int32)
        self.class_id = class_id
        xs, ys = self.pixels[:, 0], self.pixels[:, 1]
        self.bbox = bbox or (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def _block(x0, y0, x1, y1, class_id):
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    return _Region(np.stack([xs.ravel(), ys.ravel()], axis=1), class_id)


def test_homography_votes_at_source_keyframe_equal_region_labels():
    region = _block(2, 2, 5, 4, class_id=1)
    grid = VoteGrid(8, 8, 3)
    cast_homography_votes([(region, np.eye(3))], [], k=0, key_i=0, key_j=10, grid=grid)
    votes = grid.counts[:, :, 1]
    expected = np.zeros((8, 8))
    expected[2:5, 2:6] = 1.0
    assert np.array_equal(votes, expected)


def test_static_scene_two_homography_votes_everywhere():
    region_i = _block(0, 0, 7, 7, class_id=2)
    region_j = _block(0, 0, 7, 7, class_id=2)
    grid = VoteGrid(8, 8, 3)
    cast_homography_votes([(region_i, np.eye(3))], [(region_j, np.eye(3))],
                          k=4, key_i=0, key_j=10, grid=grid)
    assert (grid.counts[:, :, 2] == 2.0).all()


def test_translating_region_votes_at_midpoint_offset():
    region = _block(0, 0, 3, 3, class_id=1)
    T = np.array([[1, 0, 10], [0, 1, 0], [0, 0, 1.0]])
    grid = VoteGrid(8, 20, 2)
    cast_homography_votes([(region, T)], [], k=5, key_i=0, key_j=10, grid=grid)
    votes = grid.counts[:, :, 1]
    expected = np.zeros((8, 20))
    expected[0:4, 5:9] = 1.0  # halfway along a 10 px translation
    assert np.array_equal(votes, expected)


# ------------------------------------------------------------------ resolving

def test_strict_majority_wins():
    grid = VoteGrid(1, 1, 3)
    grid.counts[0, 0] = [0, 4, 2]
    lm = resolve_majority(grid, None, None, frame_index=0)
    assert lm.data[0, 0] == 1


def test_tie_goes_to_near_pull_class():
    grid = VoteGrid(1, 1, 3)
    grid.counts[0, 0] = [0, 3, 3]
    tie = np.full((1, 1), 2, np.uint8)
    lm = resolve_majority(grid, tie, None, frame_index=0)
    assert lm.data[0, 0] == 2


def test_tie_without_preference_takes_lowest_id():
    grid = VoteGrid(1, 1, 3)
    grid.counts[0, 0] = [0, 3, 3]
    lm = resolve_majority(grid, None, None, frame_index=0)
    assert lm.data[0, 0] == 1


def test_preference_not_at_max_is_ignored():
    grid = VoteGrid(1, 1, 3)
    grid.counts[0, 0] = [0, 3, 1]
    tie = np.full((1, 1), 2, np.uint8)
    lm = resolve_majority(grid, tie, None, frame_index=0)
    assert lm.data[0, 0] == 1


def test_zero_votes_fall_back_to_near_keyframe_copy():
    grid = VoteGrid(2, 2, 3)
    fallback = np.array([[2, 1], [0, 2]], np.uint8)
    lm = resolve_majority(grid, None, fallback, frame_index=0)
    assert np.array_equal(lm.data, fallback)
    bare = resolve_majority(grid, None, None, frame_index=0)
    assert (bare.data == UNLABELED).all()


# ------------------------------------------------------------- propagate_pair

def test_zero_flow_static_scene_reproduces_keyframes_exactly():
    rng = np.random.default_rng(2)
    data = rng.integers(0, 3, (8, 8)).astype(np.uint8)
    li = LabelMap(0, data)
    lj = LabelMap(5, data.copy())
    flows = _zero_flows(8, 8, 6)
    cfg = PropagationConfig(iterations=0, min_region_size=4, seed=1)
    out = propagate_pair(li, lj, flows, cfg, num_classes=3)
    assert len(out) == 4
    for lm in out:
        assert np.array_equal(lm.data, data)


def test_propagate_pair_rejects_bad_inputs():
    li = LabelMap(3, np.zeros((4, 4), np.uint8))
    lj = LabelMap(1, np.zeros((4, 4), np.uint8))
    flows = _zero_flows(4, 4, 5)
    with pytest.raises(ValueError):
        propagate_pair(li, lj, flows)
    partial = LabelMap(4, np.full((4, 4), UNLABELED, np.uint8))
    with pytest.raises(ValueError):
        propagate_pair(LabelMap(0, np.zeros((4, 4), np.uint8)), partial, flows)


def test_propagation_is_deterministic_given_seed():
    spec = translating_rectangles_scene(width=48, height=48, frame_count=9, seed=4)
    scene = render_scene(spec)
    flows = scene.flow_source()
    cfg = PropagationConfig(iterations=1, radius=1, min_region_size=16, seed=7)

    def run():
        prop = Propagator(config=cfg, num_classes=3)
        return prop.run([scene.labels[0], scene.labels[8]], flows, 9)

    a, b = run(), run()
    for lm_a, lm_b in zip(a, b):
        assert np.array_equal(lm_a.data, lm_b.data)


def test_keyframes_pinned_through_iterations():
    spec = translating_rectangles_scene(width=40, height=40, frame_count=7, seed=5)
    scene = render_scene(spec)
    flows = scene.flow_source()
    cfg = PropagationConfig(iterations=3, radius=2, min_region_size=16, seed=0)
    prop = Propagator(config=cfg, num_classes=3)
    out = prop.run([scene.labels[0], scene.labels[6]], flows, 7)
    assert np.array_equal(out[0].data, scene.labels[0].data)
    assert np.array_equal(out[6].data, scene.labels[6].data)


def test_report_carries_config_and_stats():
    rng = np.random.default_rng(3)
    data = rng.integers(0, 2, (6, 6)).astype(np.uint8)
    flows = _zero_flows(6, 6, 4)
    prop = Propagator(config=PropagationConfig(iterations=1, min_region_size=2, seed=0),
                      num_classes=2)
    prop.run([LabelMap(0, data), LabelMap(3, data)], flows, 4)
    assert prop.report["config"]["iterations"] == 1
    assert prop.report["pairs"][0]["keyframes"] == [0, 3]
    assert len(prop.report["pairs"][0]["frames"]) == 2
    assert "iterations" in prop.report


# ------------------------------------------------------------------ iteration

def test_zero_iterations_is_identity():
    labels, flows, keyframes, c, _f = random_micro_instance(seed=10)
    cfg = PropagationConfig(iterations=0)
    out = segprop_iterate(labels, flows, keyframes, cfg, num_classes=c)
    for a, b in zip(out, labels):
        assert a is b


def test_salt_pepper_pixel_corrected_by_one_iteration():
    h, w = 6, 6
    clean = np.full((h, w), 1, np.uint8)
    labels = [LabelMap(t, clean.copy()) for t in range(5)]
    noisy = clean.copy()
    noisy[3, 3] = 0
    labels[2] = LabelMap(2, noisy)
    flows = _zero_flows(h, w, 5)
    cfg = PropagationConfig(iterations=1, radius=1, use_homography=False, seed=0)
    out = segprop_iterate(labels, flows, [0, 4], cfg, num_classes=2)
    # brute-force count at (3,3) of frame 2: neighbors 1 and 3 each give one
    # pull and one push vote for class 1 -> 4 votes vs 0
    assert out[2].data[3, 3] == 1
    for t in range(5):
        assert (out[t].data == 1).all()


def test_iteration_matches_graph_oracle_single_seed():
    labels, flows, keyframes, c, radius = random_micro_instance(seed=42)
    for tie in ("lowest", "near_pull"):
        assert_engine_matches_graph_step(labels, flows, keyframes, c, radius, tie)


def test_sequential_mode_runs_and_pins_keyframes():
    labels, flows, keyframes, c, radius = random_micro_instance(seed=21)
    cfg = PropagationConfig(iterations=2, radius=radius, sequential=True,
                            use_homography=False, seed=0)
    out = segprop_iterate(labels, flows, keyframes, cfg, num_classes=c)
    for k in keyframes:
        assert np.array_equal(out[k].data, labels[k].data)


# ------------------------------------------------------------------ providers

def test_null_provider_changes_nothing():
    rng = np.random.default_rng(6)
    data = rng.integers(0, 3, (6, 6)).astype(np.uint8)
    flows = _zero_flows(6, 6, 4)
    li, lj = LabelMap(0, data), LabelMap(3, data)
    cfg = PropagationConfig(iterations=0, min_region_size=2, seed=0)
    base = propagate_pair(li, lj, flows, cfg, num_classes=3)
    with_null = propagate_pair(li, lj, flows, cfg, num_classes=3,
                               providers=[NullVoteProvider()])
    for a, b in zip(base, with_null):
        assert np.array_equal(a.data, b.data)


class _OracleProvider(VoteProvider):
    name = "oracle"

    def __init__(self, truth):
        self.truth = truth

    def cast(self, frame, key_i, key_j, label_i, label_j):
        t = self.truth[frame]
        votes = np.zeros(t.shape + (3,), np.float32)
        ys, xs = np.mgrid[0:t.shape[0], 0:t.shape[1]]
        votes[ys, xs, t] = 1.0
        return votes


def test_weighted_oracle_provider_dominates():
    rng = np.random.default_rng(8)
    h, w = 6, 6
    truth = {k: rng.integers(0, 3, (h, w)) for k in range(1, 4)}
    li = LabelMap(0, rng.integers(0, 3, (h, w)).astype(np.uint8))
    lj = LabelMap(4, rng.integers(0, 3, (h, w)).astype(np.uint8))
    flows = _zero_flows(h, w, 5)
    cfg = PropagationConfig(iterations=0, external_weight=100.0,
                            use_homography=False, seed=0)
    out = propagate_pair(li, lj, flows, cfg, num_classes=3,
                         providers=[_OracleProvider(truth)])
    for lm in out:
        assert np.array_equal(lm.data, truth[lm.frame_index].astype(np.uint8))


class _FailingProvider(VoteProvider):
    name = "broken"

    def cast(self, frame, key_i, key_j, label_i, label_j):
        raise RuntimeError("boom")


def test_provider_failure_is_never_fatal():
    rng = np.random.default_rng(9)
    data = rng.integers(0, 2, (5, 5)).astype(np.uint8)
    flows = _zero_flows(5, 5, 3)
    cfg = PropagationConfig(iterations=0, use_homography=False, seed=0)
    out = propagate_pair(LabelMap(0, data), LabelMap(2, data), flows, cfg,
                         num_classes=2, providers=[_FailingProvider()])
    assert np.array_equal(out[0].data, data)


class _DuplicateFlowProvider(VoteProvider):
    """Re-casts the four flow channels, doubling every flow vote."""

    name = "dupflow"

    def __init__(self, flows, num_classes):
        self.flows = flows
        self.num_classes = num_classes

    def cast(self, frame, key_i, key_j, label_i, label_j):
        corr_k_i = chain_correspondence(self.flows, frame, key_i)
        corr_k_j = chain_correspondence(self.flows, frame, key_j)
        corr_i_k = chain_correspondence(self.flows, key_i, frame)
        corr_j_k = chain_correspondence(self.flows, key_j, frame)
        grid = cast_flow_votes(label_i, label_j, corr_k_i, corr_k_j,
                               corr_i_k, corr_j_k, self.num_classes)
        return grid.counts


def test_duplicate_flow_provider_keeps_argmax_on_tie_free_pixels():
    rng = np.random.default_rng(11)
    h, w = 8, 8
    li = LabelMap(0, rng.integers(0, 3, (h, w)).astype(np.uint8))
    lj = LabelMap(4, rng.integers(0, 3, (h, w)).astype(np.uint8))
    flows = _const_flows(h, w, 5, dx=0.5, dy=0.25)
    cfg = PropagationConfig(iterations=0, use_homography=False, tie_break="lowest", seed=0)

    base_grids = {}
    for k in range(1, 4):
        corr_k_i = chain_correspondence(flows, k, 0)
        corr_k_j = chain_correspondence(flows, k, 4)
        corr_i_k = chain_correspondence(flows, 0, k)
        corr_j_k = chain_correspondence(flows, 4, k)
        base_grids[k] = cast_flow_votes(li, lj, corr_k_i, corr_k_j,
                                        corr_i_k, corr_j_k, 3).counts

    base = propagate_pair(li, lj, flows, cfg, num_classes=3)
    doubled = propagate_pair(li, lj, flows, cfg, num_classes=3,
                             providers=[_DuplicateFlowProvider(flows, 3)])
    for lm_a, lm_b in zip(base, doubled):
        counts = base_grids[lm_a.frame_index]
        top = counts.max(axis=2)
        tie_free = (counts == top[..., None]).sum(axis=2) == 1
        nonzero = top > 0
        check = tie_free & nonzero
        assert np.array_equal(lm_a.data[check], lm_b.data[check])
