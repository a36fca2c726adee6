"""Occupancy evaluation: scene-completion IoU and per-class semantic mIoU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, LabelOutOfRange
from .voxelizer import EMPTY


@dataclass(frozen=True)
class OccEvalReport:
    """Evaluation summary.

    ``per_class_iou`` maps each semantic class (EMPTY excluded) to its IoU,
    or None when the class occurs in neither grid; undefined classes are
    excluded from ``ssc_miou``.
    """

    sc_iou: float
    per_class_iou: dict[int, float | None]
    ssc_miou: float

    def render(self) -> str:
        lines = []
        for cls in sorted(self.per_class_iou):
            iou = self.per_class_iou[cls]
            text = "undefined" if iou is None else f"{iou:.6f}"
            lines.append(f"class {cls}: iou {text}")
        lines.append(f"sc_iou: {self.sc_iou:.6f}")
        lines.append(f"ssc_miou: {self.ssc_miou:.6f}")
        return "\n".join(lines)


def evaluate(pred: np.ndarray, gt: np.ndarray, class_count: int) -> OccEvalReport:
    """Compare two label grids of identical dimensions.

    Scene-completion IoU pools every non-EMPTY label into one occupied class;
    per-class IoU is TP / (TP + FP + FN).  Classes absent from both grids are
    reported as undefined and excluded from the mean.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimMismatch(f"pred dims {pred.shape} != gt dims {gt.shape}")
    if class_count < 2:
        raise LabelOutOfRange(f"class_count must be >= 2, got {class_count}")
    p = pred.reshape(-1).astype(np.int64)
    g = gt.reshape(-1).astype(np.int64)
    for name, arr in (("pred", p), ("gt", g)):
        if len(arr) and (arr.min() < 0 or arr.max() >= class_count):
            raise LabelOutOfRange(
                f"{name} labels span [{arr.min()}, {arr.max()}] outside [0, {class_count})"
            )

    confusion = np.bincount(p * class_count + g, minlength=class_count * class_count)
    confusion = confusion.reshape(class_count, class_count)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=1) - tp
    fn = confusion.sum(axis=0) - tp

    total = len(p)
    pred_occ = total - int(confusion[EMPTY].sum())
    gt_occ = total - int(confusion[:, EMPTY].sum())
    both_empty = int(confusion[EMPTY, EMPTY])
    occ_union = total - both_empty
    occ_inter = pred_occ + gt_occ - occ_union
    sc_iou = occ_inter / occ_union if occ_union > 0 else 1.0

    per_class: dict[int, float | None] = {}
    defined = []
    for cls in range(1, class_count):
        denom = tp[cls] + fp[cls] + fn[cls]
        if denom == 0:
            per_class[cls] = None
        else:
            iou = float(tp[cls] / denom)
            per_class[cls] = iou
            defined.append(iou)
    ssc_miou = float(np.mean(defined)) if defined else 0.0
    return OccEvalReport(sc_iou=float(sc_iou), per_class_iou=per_class, ssc_miou=ssc_miou)
