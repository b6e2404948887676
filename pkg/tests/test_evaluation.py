import numpy as np
import pytest

from segprop.core import LabelMap
from segprop.evaluation import (
    StrideError,
    ablation_propagation_length,
    confusion,
    evaluate_frame,
    evaluate_frames,
    format_ablation_table,
    precision_recall_f,
    report_from_confusion,
)
from segprop.propagation import PropagationConfig
from segprop.synth import render_scene, translating_rectangles_scene


def test_perfect_prediction_is_diagonal():
    rng = np.random.default_rng(0)
    gt = rng.integers(0, 4, (16, 16))
    conf = confusion(gt, gt, num_classes=4)
    assert conf.sum() == 256
    assert np.array_equal(conf, np.diag(np.diag(conf)))


def test_single_pixel_off_diagonal():
    conf = confusion(np.array([[1]]), np.array([[0]]), num_classes=3)
    assert conf[0, 1] == 1 and conf.sum() == 1


def test_confusion_matches_double_loop_tally():
    rng = np.random.default_rng(1)
    pred = rng.integers(0, 5, (32, 32))
    gt = rng.integers(0, 5, (32, 32))
    conf = confusion(pred, gt, num_classes=5)
    ref = np.zeros((5, 5), dtype=np.int64)
    for y in range(32):
        for x in range(32):
            ref[gt[y, x], pred[y, x]] += 1
    assert np.array_equal(conf, ref)
    assert conf.sum() == 32 * 32


def test_confusion_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((3, 3)))


def test_f_measure_hand_computed_fixture():
    # class 0: TP=2, FP=1, FN=1 -> P = R = 2/3, F = 2/3
    conf = np.array([[2, 1], [1, 0]], dtype=np.int64)
    precision, recall, f = precision_recall_f(conf)
    assert precision[0] == pytest.approx(2 / 3)
    assert recall[0] == pytest.approx(2 / 3)
    assert f[0] == pytest.approx(2 / 3)


def test_perfect_prediction_scores_one():
    rng = np.random.default_rng(2)
    data = rng.integers(0, 3, (8, 8)).astype(np.uint8)
    rep = evaluate_frame(LabelMap(0, data), LabelMap(0, data), num_classes=3)
    assert rep.mean_f == pytest.approx(1.0)
    for c in np.unique(data):
        assert rep.f_measure(int(c)) == pytest.approx(1.0)


def test_missed_class_scores_zero_and_counts_in_mean():
    # gt has class 1, prediction never emits it
    gt = np.zeros((4, 4), np.uint8)
    gt[0] = 1
    pred = np.zeros((4, 4), np.uint8)
    rep = evaluate_frame(LabelMap(0, pred), LabelMap(0, gt), num_classes=3)
    assert rep.f_measure(1) == 0.0
    assert rep.present[1]
    assert not rep.present[2]  # absent from both: excluded
    # mean over classes 0 and 1 only
    p0 = 12 / 16
    f0 = 2 * p0 * 1.0 / (p0 + 1.0)
    assert rep.mean_f == pytest.approx((f0 + 0.0) / 2)


def test_mean_invariant_to_consistent_class_permutation():
    rng = np.random.default_rng(3)
    pred = rng.integers(0, 4, (10, 10)).astype(np.uint8)
    gt = rng.integers(0, 4, (10, 10)).astype(np.uint8)
    rep = evaluate_frame(LabelMap(0, pred), LabelMap(0, gt), num_classes=4)
    perm = np.array([2, 3, 1, 0], dtype=np.uint8)
    rep_p = evaluate_frame(LabelMap(0, perm[pred]), LabelMap(0, perm[gt]), num_classes=4)
    assert rep.mean_f == pytest.approx(rep_p.mean_f)


def test_f_symmetric_under_role_swap():
    rng = np.random.default_rng(4)
    a = rng.integers(0, 3, (12, 12)).astype(np.uint8)
    b = rng.integers(0, 3, (12, 12)).astype(np.uint8)
    rep_ab = evaluate_frame(LabelMap(0, a), LabelMap(0, b), num_classes=3)
    rep_ba = evaluate_frame(LabelMap(0, b), LabelMap(0, a), num_classes=3)
    assert np.allclose(rep_ab.f_per_class, rep_ba.f_per_class)


def test_aggregate_reports_both_mean_conventions():
    rng = np.random.default_rng(5)
    pairs = []
    for t in range(3):
        pred = rng.integers(0, 3, (6, 6)).astype(np.uint8)
        gt = rng.integers(0, 3, (6, 6)).astype(np.uint8)
        pairs.append((LabelMap(t, pred), LabelMap(t, gt)))
    agg = evaluate_frames(pairs, num_classes=3)
    assert agg["frames_evaluated"] == 3
    assert 0.0 <= agg["mean_f"] <= 1.0
    assert 0.0 <= agg["mean_f_pooled"] <= 1.0
    assert np.asarray(agg["pooled"]["confusion"]).sum() == 3 * 36


def _scene_setup(frame_count, size=48, seed=0):
    spec = translating_rectangles_scene(width=size, height=size,
                                        frame_count=frame_count, seed=seed)
    scene = render_scene(spec)
    return scene, scene.flow_source()


def test_ablation_nothing_hidden_is_empty_row():
    scene, flows = _scene_setup(9)
    gt = {k: scene.labels[k] for k in (0, 4, 8)}
    rows = ablation_propagation_length(
        gt, flows, 9, strides=[4],
        config=PropagationConfig(iterations=0, min_region_size=16, seed=0),
        num_classes=3,
    )
    assert rows[0]["frames_evaluated"] == 0 and rows[0]["mean_f"] is None


def test_ablation_scores_hidden_keyframes_only():
    scene, flows = _scene_setup(9)
    gt = {k: scene.labels[k] for k in (0, 2, 4, 6, 8)}
    rows = ablation_propagation_length(
        gt, flows, 9, strides=[4, 8],
        config=PropagationConfig(iterations=0, min_region_size=16, seed=0),
        num_classes=3,
    )
    # stride 4: visible {0,4,8}, hidden {2,6}
    assert rows[0]["frames_evaluated"] == len([k for k in gt if k % 4 != 0])
    assert rows[1]["frames_evaluated"] == len([k for k in gt if k % 8 != 0])
    assert rows[0]["mean_f"] >= rows[1]["mean_f"] - 0.02  # exact flow: longer span no better
    table = format_ablation_table(rows)
    assert "stride" in table and "4" in table


def test_ablation_rejects_incompatible_stride():
    scene, flows = _scene_setup(9)
    gt = {k: scene.labels[k] for k in (0, 4, 8)}
    with pytest.raises(StrideError):
        ablation_propagation_length(gt, flows, 9, strides=[3],
                                    config=PropagationConfig(iterations=0, seed=0),
                                    num_classes=3)
    with pytest.raises(StrideError):
        ablation_propagation_length(gt, flows, 9, strides=[0],
                                    config=PropagationConfig(iterations=0, seed=0),
                                    num_classes=3)


def test_report_serializes():
    conf = np.array([[2, 1], [1, 0]], dtype=np.int64)
    doc = report_from_confusion(conf).to_dict()
    assert "per_class" in doc and doc["confusion"] == [[2, 1], [1, 0]]
