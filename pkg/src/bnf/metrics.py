"""Class-mean intersection-over-union, pooled over pixels and averaged per image.

PP-IOU pools intersections and unions over the whole corpus before dividing.
PI-IOU computes IOU per image (only where the class occurs in the ground
truth) and averages over images, so every image carries the same weight.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class IouReport:
    per_class_iou: list  # pooled IOU per class, None where undefined
    pp_iou: float
    pi_iou: float
    images: int
    per_class_pi_iou: list = field(default_factory=list)

    def to_dict(self):
        return {
            "per_class_iou": self.per_class_iou,
            "per_class_pi_iou": self.per_class_pi_iou,
            "pp_iou": self.pp_iou,
            "pi_iou": self.pi_iou,
            "images": self.images,
        }


def _check(pred, truth):
    if pred.shape != truth.shape:
        raise ValueError(f"prediction is {pred.shape}, truth is {truth.shape}")
    if pred.num_classes != truth.num_classes:
        raise ValueError(f"class counts differ: {pred.num_classes} vs {truth.num_classes}")


def _counts(pred, truth):
    """Per-class (intersection, union, truth-present) for one image."""
    k = truth.num_classes
    p, t = pred.labels.ravel(), truth.labels.ravel()
    inter = np.bincount(t[p == t], minlength=k)
    union = np.bincount(p, minlength=k) + np.bincount(t, minlength=k) - inter
    present = np.bincount(t, minlength=k) > 0
    return inter, union, present


def iou_single(pred, truth, k):
    """IOU of class ``k``; ``None`` when neither map contains it."""
    _check(pred, truth)
    pk = pred.labels == k
    tk = truth.labels == k
    union = np.count_nonzero(pk | tk)
    if union == 0:
        return None
    return np.count_nonzero(pk & tk) / union


def evaluate_corpus(pairs, strict=False):
    """Score a list of ``(pred, truth)`` label maps.

    Classes whose pooled union is empty are left out of both class means; with
    ``strict=True`` they raise instead.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty corpus")
    k = pairs[0][1].num_classes
    inter_tot = np.zeros(k)
    union_tot = np.zeros(k)
    image_iou = [[] for _ in range(k)]
    for pred, truth in pairs:
        _check(pred, truth)
        if truth.num_classes != k:
            raise ValueError("inconsistent class count across corpus")
        inter, union, present = _counts(pred, truth)
        inter_tot += inter
        union_tot += union
        for c in np.flatnonzero(present):
            image_iou[c].append(inter[c] / union[c])

    defined = union_tot > 0
    if strict and not defined.all():
        missing = np.flatnonzero(~defined).tolist()
        raise ValueError(f"classes {missing} never occur in the corpus")
    per_class = [float(inter_tot[c] / union_tot[c]) if defined[c] else None for c in range(k)]
    per_class_pi = [float(np.mean(v)) if v else None for v in image_iou]
    pp = [v for v in per_class if v is not None]
    pi = [v for c, v in enumerate(per_class_pi) if v is not None and defined[c]]
    return IouReport(
        per_class_iou=per_class,
        pp_iou=float(np.mean(pp)) if pp else 0.0,
        pi_iou=float(np.mean(pi)) if pi else 0.0,
        images=len(pairs),
        per_class_pi_iou=per_class_pi,
    )
