"""Small COCO-style detection evaluation (AP, AP50, AP75, APS/M/L).

Follows the usual COCO protocol: per image and category, detections are
visited in descending score order and each one claims the unmatched ground
truth with the highest IoU at or above the threshold.  Precision is
interpolated at 101 recall points.  Crowd annotations and, for the size
stratified metrics, ground truth outside the size bucket are ignored:
detections matched to them count neither as true nor as false positives,
and unmatched detections whose own area falls outside the bucket are
ignored as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def iou(box_a, box_b) -> float:
    """IoU of two ``(x1, y1, x2, y2)`` boxes; 0 when the union is empty."""
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def xywh_to_xyxy(b):
    x, y, w, h = b
    return (x, y, x + w, y + h)


@dataclass
class EvalConfig:
    iou_thresholds: tuple[float, ...] = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
    max_detections: int = 100

    def __post_init__(self):
        t = tuple(float(v) for v in self.iou_thresholds)
        if not t or any(v <= 0 or v > 1 for v in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigError(f"IoU thresholds must be strictly increasing in (0, 1], got {t}")
        if self.max_detections < 1:
            raise ConfigError("max_detections must be >= 1")
        self.iou_thresholds = t


@dataclass
class APReport:
    AP: float
    AP50: float | None
    AP75: float | None
    APS: float
    APM: float
    APL: float
    per_threshold: dict[float, float] = field(default_factory=dict)
    per_class: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "AP": self.AP,
            "AP50": self.AP50,
            "AP75": self.AP75,
            "APS": self.APS,
            "APM": self.APM,
            "APL": self.APL,
            "per_threshold": {f"{k:.2f}": v for k, v in self.per_threshold.items()},
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }


def _gt_area(g) -> float:
    if g.get("area") is not None:
        return float(g["area"])
    _, _, w, h = g["bbox"]
    return float(w * h)


def _match_image(dets, gts, thresholds, area_rng):
    """Greedy matching for one (image, category).

    Returns per-detection (scores, matched[T, D], ignored[T, D]) and the
    number of non-ignored ground truths.
    """
    lo, hi = area_rng
    dets = sorted(dets, key=lambda d: -d["score"])
    gt_ignore = np.array([bool(g.get("iscrowd", 0)) or not (lo <= _gt_area(g) < hi) for g in gts], dtype=bool)
    # non-ignored ground truth first, as COCO does
    gorder = np.argsort(gt_ignore, kind="stable")
    gts = [gts[k] for k in gorder]
    gt_ignore = gt_ignore[gorder]
    crowd = np.array([bool(g.get("iscrowd", 0)) for g in gts], dtype=bool)
    gboxes = [xywh_to_xyxy(g["bbox"]) for g in gts]
    T, D, G = len(thresholds), len(dets), len(gts)
    matched = np.zeros((T, D), dtype=bool)
    ignored = np.zeros((T, D), dtype=bool)
    ious = np.array([[iou(xywh_to_xyxy(d["bbox"]), gb) for gb in gboxes] for d in dets]).reshape(D, G)
    for t, thr in enumerate(thresholds):
        taken = np.zeros(G, dtype=bool)
        for di in range(D):
            best, best_iou = -1, min(thr, 1 - 1e-10)
            for gi in range(G):
                if taken[gi] and not crowd[gi]:
                    continue
                # once a real match exists, stop at ignored ground truth
                if best > -1 and not gt_ignore[best] and gt_ignore[gi]:
                    break
                if ious[di, gi] < best_iou:
                    continue
                best, best_iou = gi, ious[di, gi]
            if best == -1:
                continue
            taken[best] = True
            matched[t, di] = True
            ignored[t, di] = gt_ignore[best]
    # unmatched detections outside the area range are ignored
    d_area = np.array([d["bbox"][2] * d["bbox"][3] for d in dets], dtype=np.float64)
    out_of_range = (d_area < lo) | (d_area >= hi)
    ignored |= (~matched) & out_of_range[None, :]
    scores = np.array([d["score"] for d in dets], dtype=np.float64)
    return scores, matched, ignored, int((~gt_ignore).sum())


def _interpolated_ap(scores, matched, ignored, n_gt) -> np.ndarray:
    """101-point interpolated AP for each threshold row."""
    order = np.argsort(-scores, kind="mergesort")
    matched, ignored = matched[:, order], ignored[:, order]
    tps = np.cumsum(matched & ~ignored, axis=1).astype(np.float64)
    fps = np.cumsum(~matched & ~ignored, axis=1).astype(np.float64)
    aps = np.zeros(matched.shape[0])
    for t in range(matched.shape[0]):
        tp, fp = tps[t], fps[t]
        if tp.size == 0:
            continue
        recall = tp / n_gt
        precision = tp / np.maximum(tp + fp, np.spacing(1))
        # precision envelope, right to left
        precision = np.maximum.accumulate(precision[::-1])[::-1]
        idx = np.searchsorted(recall, RECALL_POINTS, side="left")
        q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
        aps[t] = q.mean()
    return aps


def match_and_score(detections, ground_truth, config: EvalConfig | None = None) -> APReport:
    """Evaluate COCO-style result dicts against COCO-style ground truth.

    ``detections``: iterable of ``{image_id, category_id, bbox: [x, y, w, h],
    score}``.  ``ground_truth``: iterable of annotation dicts with
    ``image_id``, ``category_id``, ``bbox`` and optionally ``area`` and
    ``iscrowd``.  Categories without (non-ignored) ground truth are left out
    of the mean; a metric with no eligible category is reported as -1.
    """
    config = config or EvalConfig()
    thresholds = config.iou_thresholds
    gt_by_key: dict[tuple, list] = {}
    for g in ground_truth:
        gt_by_key.setdefault((g["image_id"], g["category_id"]), []).append(g)
    dt_by_image: dict = {}
    for d in detections:
        dt_by_image.setdefault(d["image_id"], []).append(d)
    # cap detections per image across categories
    dt_by_key: dict[tuple, list] = {}
    for img, ds in dt_by_image.items():
        ds = sorted(ds, key=lambda d: -d["score"])[: config.max_detections]
        for d in ds:
            dt_by_key.setdefault((img, d["category_id"]), []).append(d)
    categories = sorted({k[1] for k in gt_by_key} | {k[1] for k in dt_by_key})
    images = sorted({k[0] for k in gt_by_key} | {k[0] for k in dt_by_key}, key=str)

    results = {}
    per_class_all = {}
    for name, rng in AREA_RANGES.items():
        cls_aps = []
        for cat in categories:
            all_scores, all_m, all_i, n_gt = [], [], [], 0
            for img in images:
                gts = gt_by_key.get((img, cat), [])
                dts = dt_by_key.get((img, cat), [])
                if not gts and not dts:
                    continue
                s, m, ig, n = _match_image(dts, gts, thresholds, rng)
                all_scores.append(s)
                all_m.append(m)
                all_i.append(ig)
                n_gt += n
            if n_gt == 0:
                continue
            aps = _interpolated_ap(
                np.concatenate(all_scores), np.concatenate(all_m, axis=1), np.concatenate(all_i, axis=1), n_gt
            )
            cls_aps.append(aps)
            if name == "all":
                per_class_all[cat] = float(aps.mean())
        results[name] = np.array(cls_aps).reshape(-1, len(thresholds))

    def mean_at(name, t=None):
        a = results[name]
        if a.shape[0] == 0:
            return -1.0
        return float(a.mean() if t is None else a[:, t].mean())

    def at_threshold(v):
        for t, thr in enumerate(thresholds):
            if abs(thr - v) < 1e-9:
                return mean_at("all", t)
        return None

    return APReport(
        AP=mean_at("all"),
        AP50=at_threshold(0.5),
        AP75=at_threshold(0.75),
        APS=mean_at("small"),
        APM=mean_at("medium"),
        APL=mean_at("large"),
        per_threshold={thr: mean_at("all", t) for t, thr in enumerate(thresholds)},
        per_class=per_class_all,
    )
