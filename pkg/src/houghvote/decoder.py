"""Turn presence maps plus offset/size regressions into detections.

Pipeline: 3x3 peak picking -> top-k -> offset correction and box decoding at
the output stride -> Soft-NMS.  Multi-scale / flip test results are mapped
back to the original frame with :func:`rescale_to_original` and merged with
:func:`merge_multiscale`.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import ShapeError, ValidationError
from .evalkit import iou

DEFAULT_SCALES = (0.6, 1.0, 1.2, 1.5, 1.8)
DEFAULT_TOP_K = 100
DEFAULT_STRIDE = 4
DEFAULT_SIGMA = 0.5
DEFAULT_SCORE_FLOOR = 0.001


class Peak(NamedTuple):
    class_id: int
    row: int
    col: int
    score: float


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    center: tuple[int, int]
    offset: tuple[float, float]
    size: tuple[float, float]
    box: tuple[float, float, float, float]  # x1, y1, x2, y2 in image pixels
    image_id: int | None = None

    def to_coco(self, image_id=None) -> dict:
        x1, y1, x2, y2 = self.box
        img = self.image_id if image_id is None else image_id
        return {
            "image_id": img,
            "category_id": self.class_id,
            "bbox": [x1, y1, x2 - x1, y2 - y1],
            "score": self.score,
        }


@dataclass(frozen=True)
class ScaleResult:
    scale: float
    detections: list[Detection]


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def extract_peaks(maps, top_k: int = DEFAULT_TOP_K, logits: bool = False) -> list[Peak]:
    """Local maxima of a stack of presence maps, best ``top_k`` first.

    A pixel survives when it is >= every neighbour in its 3x3 window (the
    window is clipped at the map border), so plateaus keep all their pixels.
    Ties in score are broken by (class, row, col).
    """
    if isinstance(maps, np.ndarray):
        stack = maps[None] if maps.ndim == 2 else maps
    else:
        if len(maps) == 0:
            raise ValidationError("no presence maps given")
        stack = np.stack([np.asarray(m) for m in maps])
    if stack.ndim != 3 or stack.size == 0:
        raise ShapeError(f"presence maps must be (C, H, W), got shape {stack.shape}")
    if top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}")
    stack = stack.astype(np.float64)
    if not np.isfinite(stack).all():
        raise ValidationError("presence maps contain NaN or infinite values")
    if logits:
        stack = sigmoid(stack)
    pooled = maximum_filter(stack, size=(1, 3, 3), mode="constant", cval=-np.inf)
    cls, rows, cols = np.nonzero(stack >= pooled)
    scores = stack[cls, rows, cols]
    # lexsort: last key is primary
    order = np.lexsort((cols, rows, cls, -scores))[:top_k]
    return [Peak(int(cls[k]), int(rows[k]), int(cols[k]), float(scores[k])) for k in order]


def decode_boxes(
    peaks: Sequence[Peak],
    offset_map,
    size_map,
    stride: int = DEFAULT_STRIDE,
    image_size: tuple[int, int] | None = None,
    diagnostics: Counter | None = None,
) -> list[Detection]:
    """Decode peaks into boxes in input-image pixels.

    ``offset_map`` and ``size_map`` are ``(H, W, 2)`` holding ``(dy, dx)`` and
    ``(h, w)`` in output-map units.  Boxes are clamped to ``image_size``
    ``(height, width)``, which defaults to the map size times ``stride``.
    Negative sizes are clamped to zero and counted under
    ``diagnostics["negative_size"]``.
    """
    offset_map = np.asarray(offset_map, dtype=np.float64)
    size_map = np.asarray(size_map, dtype=np.float64)
    if offset_map.ndim != 3 or offset_map.shape[-1] != 2:
        raise ShapeError(f"offset map must be (H, W, 2), got {offset_map.shape}")
    if size_map.shape != offset_map.shape:
        raise ShapeError(f"size map shape {size_map.shape} differs from offset map {offset_map.shape}")
    H, W = offset_map.shape[:2]
    img_h, img_w = (float(v) for v in (image_size if image_size is not None else (H * stride, W * stride)))
    dets = []
    for p in peaks:
        if not (0 <= p.row < H and 0 <= p.col < W):
            raise ValidationError(f"peak ({p.row}, {p.col}) outside the {H}x{W} map")
        dy, dx = offset_map[p.row, p.col]
        h, w = size_map[p.row, p.col]
        if h < 0 or w < 0:
            if diagnostics is not None:
                diagnostics["negative_size"] += 1
            h, w = max(h, 0.0), max(w, 0.0)
        cx = (p.col + dx) * stride
        cy = (p.row + dy) * stride
        hw, hh = w * stride / 2, h * stride / 2
        box = (
            min(max(cx - hw, 0.0), img_w),
            min(max(cy - hh, 0.0), img_h),
            min(max(cx + hw, 0.0), img_w),
            min(max(cy + hh, 0.0), img_h),
        )
        dets.append(Detection(p.class_id, p.score, (p.row, p.col), (float(dy), float(dx)), (float(h), float(w)), box))
    return dets


def soft_nms(dets: Sequence[Detection], sigma: float = DEFAULT_SIGMA, score_floor: float = DEFAULT_SCORE_FLOOR) -> list[Detection]:
    """Gaussian Soft-NMS, applied within each class.

    Repeatedly take the best remaining detection and multiply the score of
    every other remaining detection of its class by ``exp(-IoU^2 / sigma)``.
    Anything that decays below ``score_floor`` is dropped.
    """
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    by_class: dict[int, list[Detection]] = {}
    for d in dets:
        by_class.setdefault(d.class_id, []).append(d)
    kept = []
    for group in by_class.values():
        pool = list(group)
        scores = [d.score for d in pool]
        while pool:
            best = max(range(len(pool)), key=lambda k: scores[k])
            top = pool.pop(best)
            top_score = scores.pop(best)
            if top_score < score_floor:
                break
            kept.append(replace(top, score=top_score))
            for k, d in enumerate(pool):
                ov = iou(top.box, d.box)
                if ov > 0:
                    scores[k] *= math.exp(-(ov * ov) / sigma)
            survivors = [k for k in range(len(pool)) if scores[k] >= score_floor]
            pool = [pool[k] for k in survivors]
            scores = [scores[k] for k in survivors]
    kept.sort(key=lambda d: -d.score)
    return kept


def rescale_to_original(dets: Sequence[Detection], scale: float, flip: bool = False, image_width: float | None = None) -> list[Detection]:
    """Map boxes from a resized (and possibly mirrored) test input back.

    Coordinates are divided by ``scale``; with ``flip`` the x-coordinates are
    then mirrored about ``image_width`` (the original image width).
    """
    if scale <= 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    if flip and image_width is None:
        raise ValidationError("image_width is required to undo a horizontal flip")
    out = []
    for d in dets:
        x1, y1, x2, y2 = (v / scale for v in d.box)
        if flip:
            x1, x2 = image_width - x2, image_width - x1
        out.append(replace(d, box=(x1, y1, x2, y2)))
    return out


def merge_multiscale(
    results: Sequence[ScaleResult],
    top_k: int = DEFAULT_TOP_K,
    sigma: float = DEFAULT_SIGMA,
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> list[Detection]:
    """Pool per-scale detections (already in original coordinates) and keep the best ``top_k``."""
    pooled = [d for res in results for d in res.detections]
    if not pooled:
        return []
    return soft_nms(pooled, sigma=sigma, score_floor=score_floor)[:top_k]


def detect(
    presence,
    offset_map,
    size_map,
    stride: int = DEFAULT_STRIDE,
    top_k: int = DEFAULT_TOP_K,
    sigma: float = DEFAULT_SIGMA,
    score_floor: float = DEFAULT_SCORE_FLOOR,
    logits: bool = False,
    image_size: tuple[int, int] | None = None,
    diagnostics: Counter | None = None,
) -> list[Detection]:
    """Single-pass decode: peaks, boxes, Soft-NMS, top-k."""
    peaks = extract_peaks(presence, top_k=top_k, logits=logits)
    dets = decode_boxes(peaks, offset_map, size_map, stride=stride, image_size=image_size, diagnostics=diagnostics)
    return soft_nms(dets, sigma=sigma, score_floor=score_floor)[:top_k]
