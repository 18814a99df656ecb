"""Per-rib evaluation: recall, Label-Accuracy (A/F/I/T) and Label-Dice.

A rib instance counts as correctly labeled when its recall is strictly
greater than the threshold (default 0.7). Accuracies are reported for
all rib pairs (A) and split into first (type 1), intermediate (types
2-11) and twelfth (type 12) groups. Dice is computed per rib and
aggregated as mean and minimum over the ribs present in the ground
truth; ribs with an empty ground-truth mask are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .refine import Centerline, spine_cut
from .volume import MAX_LABEL, LabelVolume, label_to_type

RECALL_THRESHOLD = 0.7


class DimensionMismatchError(ValueError):
    """Prediction and ground truth grids do not align."""


@dataclass(frozen=True)
class RibInstanceScore:
    rib_label: int        # 1..24
    rib_type: int         # 1..12
    gt_present: bool
    recall: float | None  # None when gt is empty for this rib
    dice: float | None
    gt_voxels: int
    pred_voxels: int
    intersection: int


@dataclass
class MetricsReport:
    case_id: str
    per_rib: list[RibInstanceScore]
    label_accuracy: dict  # keys A, F, I, T; values percent or None
    dice_avg: float | None
    dice_min: float | None
    hallucinated_labels: int  # predicted labels with empty ground truth
    cut_radius_mm: float | None = None
    accuracy_counts: dict = field(default_factory=dict)  # group -> (correct, present)


def _check_dims(pred: LabelVolume, gt: LabelVolume):
    if pred.dims != gt.dims:
        raise DimensionMismatchError(f"pred dims {pred.dims} != gt dims {gt.dims}")
    if pred.spacing != gt.spacing:
        raise DimensionMismatchError(
            f"pred spacing {pred.spacing} != gt spacing {gt.spacing}"
        )


def _contingency(pred: LabelVolume, gt: LabelVolume) -> np.ndarray:
    """(25, 25) voxel-count table indexed [pred_label, gt_label]."""
    _check_dims(pred, gt)
    joint = pred.data.astype(np.int64).ravel() * (MAX_LABEL + 1) + gt.data.ravel()
    counts = np.bincount(joint, minlength=(MAX_LABEL + 1) ** 2)
    return counts.reshape(MAX_LABEL + 1, MAX_LABEL + 1)


def rib_recall(pred: LabelVolume, gt: LabelVolume, rib: int) -> float | None:
    """|pred_rib ∩ gt_rib| / |gt_rib|, or None when gt has no such rib."""
    if not 1 <= rib <= MAX_LABEL:
        raise ValueError(f"rib label must lie in 1..{MAX_LABEL}, got {rib}")
    table = _contingency(pred, gt)
    gt_count = int(table[:, rib].sum())
    if gt_count == 0:
        return None
    return float(table[rib, rib]) / gt_count


def _per_rib_scores(table: np.ndarray) -> list[RibInstanceScore]:
    scores = []
    for rib in range(1, MAX_LABEL + 1):
        gt_count = int(table[:, rib].sum())
        pred_count = int(table[rib, :].sum())
        inter = int(table[rib, rib])
        present = gt_count > 0
        recall = inter / gt_count if present else None
        dice = 2.0 * inter / (gt_count + pred_count) if present else None
        scores.append(RibInstanceScore(
            rib_label=rib,
            rib_type=int(label_to_type(np.array(rib))),
            gt_present=present,
            recall=recall,
            dice=dice,
            gt_voxels=gt_count,
            pred_voxels=pred_count,
            intersection=inter,
        ))
    return scores


def _group_of(rib_type: int) -> str:
    if rib_type == 1:
        return "F"
    if rib_type == 12:
        return "T"
    return "I"


def accuracy_counts(scores, threshold: float = RECALL_THRESHOLD) -> dict:
    """(correct, present) per group A/F/I/T; strict ``recall > threshold``."""
    counts = {g: [0, 0] for g in ("A", "F", "I", "T")}
    for s in scores:
        if not s.gt_present:
            continue
        correct = s.recall > threshold
        for g in ("A", _group_of(s.rib_type)):
            counts[g][0] += int(correct)
            counts[g][1] += 1
    return {g: (c, n) for g, (c, n) in counts.items()}


def label_accuracy(scores, threshold: float = RECALL_THRESHOLD) -> dict:
    """Percent correctly labeled ribs per group; None when none present."""
    return {
        g: (100.0 * c / n if n else None)
        for g, (c, n) in accuracy_counts(scores, threshold).items()
    }


def label_dice(pred: LabelVolume, gt: LabelVolume):
    """Per-rib dice list (None for skipped ribs), mean and minimum."""
    scores = _per_rib_scores(_contingency(pred, gt))
    dices = [s.dice for s in scores]
    scored = [d for d in dices if d is not None]
    if not scored:
        return dices, None, None
    return dices, float(np.mean(scored)), float(min(scored))


def evaluate_case(
    pred: LabelVolume,
    gt: LabelVolume,
    centerline: Centerline | None = None,
    cut_radius_mm: float = 30.0,
    case_id: str = "",
    threshold: float = RECALL_THRESHOLD,
) -> MetricsReport:
    """Score one case; with a centerline, cut both volumes near the spine first."""
    _check_dims(pred, gt)
    cut_applied = None
    if centerline is not None:
        pred = spine_cut(pred, centerline, cut_radius_mm)
        gt = spine_cut(gt, centerline, cut_radius_mm)
        cut_applied = cut_radius_mm
    table = _contingency(pred, gt)
    scores = _per_rib_scores(table)
    scored = [s.dice for s in scores if s.dice is not None]
    hallucinated = sum(
        1 for s in scores if not s.gt_present and s.pred_voxels > 0
    )
    return MetricsReport(
        case_id=case_id,
        per_rib=scores,
        label_accuracy=label_accuracy(scores, threshold),
        dice_avg=float(np.mean(scored)) if scored else None,
        dice_min=float(min(scored)) if scored else None,
        hallucinated_labels=hallucinated,
        cut_radius_mm=cut_applied,
        accuracy_counts=accuracy_counts(scores, threshold),
    )


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Dataset-level summary: micro (pooled rib instances) and macro
    (mean of per-case values) aggregates."""
    micro_counts = {g: [0, 0] for g in ("A", "F", "I", "T")}
    pooled_dice = []
    for r in reports:
        for g, (c, n) in r.accuracy_counts.items():
            micro_counts[g][0] += c
            micro_counts[g][1] += n
        pooled_dice.extend(s.dice for s in r.per_rib if s.dice is not None)

    micro_acc = {
        g: (100.0 * c / n if n else None) for g, (c, n) in micro_counts.items()
    }

    def _macro(values):
        vals = [v for v in values if v is not None]
        return float(np.mean(vals)) if vals else None

    macro_acc = {
        g: _macro([r.label_accuracy[g] for r in reports]) for g in ("A", "F", "I", "T")
    }
    return {
        "cases": len(reports),
        "micro": {
            "label_accuracy": micro_acc,
            "dice_avg": float(np.mean(pooled_dice)) if pooled_dice else None,
            "dice_min": float(min(pooled_dice)) if pooled_dice else None,
        },
        "macro": {
            "label_accuracy": macro_acc,
            "dice_avg": _macro([r.dice_avg for r in reports]),
            "dice_min": _macro([r.dice_min for r in reports]),
        },
    }
