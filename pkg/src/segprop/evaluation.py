"""Confusion matrices, per-class F-measure, and hidden-keyframe sweeps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NUM_CLASSES, CLASS_NAMES, LabelMap, SegpropError
from .flow import FlowSource
from .propagation import PropagationConfig, Propagator


class StrideError(SegpropError):
    pass


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """(C, C) counts; entry (g, p) = pixels with ground-truth g predicted p."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    idx = gt.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


def precision_recall_f(conf: np.ndarray):
    """Per-class precision, recall, and F, with 0 wherever undefined."""
    tp = np.diag(conf).astype(np.float64)
    pred_total = conf.sum(axis=0).astype(np.float64)
    gt_total = conf.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_total > 0, tp / pred_total, 0.0)
        recall = np.where(gt_total > 0, tp / gt_total, 0.0)
        denom = precision + recall
        f = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    return precision, recall, f


@dataclass
class EvalReport:
    """Scores for one prediction/ground-truth pairing.

    Classes absent from both sides are excluded from the mean; classes
    present in the ground truth but never predicted count as 0.
    """

    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f_per_class: np.ndarray
    present: np.ndarray  # bool: class appears in gt or prediction

    @property
    def mean_f(self) -> float:
        if not self.present.any():
            return 0.0
        return float(self.f_per_class[self.present].mean())

    def f_measure(self, class_id: int) -> float:
        return float(self.f_per_class[class_id])

    def to_dict(self) -> dict:
        names = CLASS_NAMES if len(self.f_per_class) == NUM_CLASSES else [
            str(i) for i in range(len(self.f_per_class))
        ]
        return {
            "mean_f": self.mean_f,
            "per_class": {
                names[c]: {
                    "precision": float(self.precision[c]),
                    "recall": float(self.recall[c]),
                    "f": float(self.f_per_class[c]),
                    "present": bool(self.present[c]),
                }
                for c in range(len(self.f_per_class))
            },
            "confusion": self.confusion.tolist(),
        }


def report_from_confusion(conf: np.ndarray) -> EvalReport:
    precision, recall, f = precision_recall_f(conf)
    present = (conf.sum(axis=1) > 0) | (conf.sum(axis=0) > 0)
    return EvalReport(confusion=conf, precision=precision, recall=recall,
                      f_per_class=f, present=present)


def evaluate_frame(pred: LabelMap, gt: LabelMap, num_classes: int = NUM_CLASSES) -> EvalReport:
    return report_from_confusion(confusion(pred.data, gt.data, num_classes))


def evaluate_frames(pairs, num_classes: int = NUM_CLASSES) -> dict:
    """Aggregate scores over (pred, gt) LabelMap pairs.

    mean_f averages each frame's class-mean F over frames; mean_f_pooled is
    the class-mean of the confusion matrix pooled across frames, reported as
    the alternative aggregation.
    """
    frame_scores = []
    pooled = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, gt in pairs:
        rep = evaluate_frame(pred, gt, num_classes)
        pooled += rep.confusion
        frame_scores.append({"frame": gt.frame_index, "mean_f": rep.mean_f})
    pooled_report = report_from_confusion(pooled)
    mean_f = float(np.mean([s["mean_f"] for s in frame_scores])) if frame_scores else 0.0
    return {
        "frames_evaluated": len(frame_scores),
        "mean_f": mean_f,
        "mean_f_pooled": pooled_report.mean_f,
        "per_frame": frame_scores,
        "pooled": pooled_report.to_dict(),
    }


def ablation_propagation_length(gt_labels: dict[int, LabelMap], flows: FlowSource,
                                frame_count: int, strides,
                                config: PropagationConfig | None = None,
                                num_classes: int = NUM_CLASSES) -> list[dict]:
    """Hidden-keyframe sweep: keep labels every `stride` frames, propagate,
    and score only the hidden manual labels.

    gt_labels maps frame index -> manual LabelMap. Every multiple of the
    stride inside the labeled range must itself be labeled, otherwise the
    stride is incompatible with the keyframe layout.
    """
    config = config or PropagationConfig()
    if not gt_labels:
        raise StrideError("no ground-truth labels supplied")
    indices = sorted(gt_labels)
    rows = []
    for stride in strides:
        if stride <= 0:
            raise StrideError(f"invalid stride {stride}")
        visible = [k for k in range(indices[0], indices[-1] + 1, stride)]
        missing = [k for k in visible if k not in gt_labels]
        if missing:
            raise StrideError(
                f"stride {stride} needs labels at {missing[:4]}{'...' if len(missing) > 4 else ''}"
            )
        if len(visible) < 2:
            raise StrideError(f"stride {stride} leaves fewer than 2 keyframes")
        hidden = [k for k in indices if k not in set(visible)]
        if not hidden:
            rows.append({"stride": stride, "frames_evaluated": 0, "mean_f": None})
            continue
        prop = Propagator(config=config, num_classes=num_classes)
        dense = prop.run([gt_labels[k] for k in visible], flows, frame_count)
        agg = evaluate_frames(((dense[k], gt_labels[k]) for k in hidden), num_classes)
        rows.append({
            "stride": stride,
            "frames_evaluated": agg["frames_evaluated"],
            "mean_f": agg["mean_f"],
            "mean_f_pooled": agg["mean_f_pooled"],
        })
    return rows


def format_ablation_table(rows) -> str:
    lines = [f"{'stride':>8} | {'frames':>6} | {'mean F':>7}"]
    lines.append("-" * len(lines[0]))
    for row in rows:
        mf = "-" if row["mean_f"] is None else f"{row['mean_f']:.3f}"
        lines.append(f"{row['stride']:>8} | {row['frames_evaluated']:>6} | {mf:>7}")
    return "\n".join(lines)


def format_class_table(report: EvalReport) -> str:
    names = CLASS_NAMES if len(report.f_per_class) == NUM_CLASSES else [
        str(i) for i in range(len(report.f_per_class))
    ]
    header = "Class        " + "".join(f"{n[:10]:>11}" for n in names) + f"{'Overall':>11}"
    row = "F-measure    " + "".join(
        f"{report.f_per_class[c]:>11.3f}" for c in range(len(names))
    ) + f"{report.mean_f:>11.3f}"
    return header + "\n" + row
