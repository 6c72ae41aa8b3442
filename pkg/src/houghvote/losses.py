"""Training objectives with analytic gradients, and ground-truth rendering.

* :func:`focal_loss` -- penalty-reduced pixel-wise focal loss on presence
  maps (CornerNet form, alpha=2, beta=4), normalised by the object count.
* :func:`offset_loss` -- L1 on sub-stride center offsets.
* :func:`size_loss` -- L1 on width/height, scaled by 0.1.

Every loss returns ``(value, gradient)`` so the voting adjoint can be chained
without an autodiff framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError

EPS = 1e-7
FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
SIZE_WEIGHT = 0.1
MIN_OVERLAP = 0.7


@dataclass
class TargetHeatmap:
    data: np.ndarray  # (C, H, W) in [0, 1]

    @property
    def num_positive(self) -> int:
        return int((self.data == 1.0).sum())


@dataclass
class RegressionTargets:
    positions: np.ndarray  # (N, 2) int rows/cols on the output map
    offsets: np.ndarray  # (N, 2) (dy, dx) in [0, 1)
    sizes: np.ndarray  # (N, 2) (h, w) in output-map units
    classes: np.ndarray  # (N,) class index into the heatmap planes
    skipped: int = 0

    def __len__(self):
        return len(self.positions)


@dataclass
class LossReport:
    focal: float
    offset: float
    size: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = total_loss(self.focal, self.offset, self.size)

    def to_dict(self) -> dict:
        return {"focal": self.focal, "offset": self.offset, "size": self.size, "total": self.total}


def gaussian_radius(height: float, width: float, min_overlap: float = MIN_OVERLAP) -> float:
    """Largest corner jitter keeping IoU >= ``min_overlap`` with the true box.

    Smallest radius over the three extreme cases: the box shifted
    diagonally, shrunk on all sides, or grown on all sides.
    """
    h, w, o = height, width, min_overlap
    # shifted: (w - r)(h - r) / (2wh - (w - r)(h - r)) = o
    b1 = h + w
    r1 = (b1 - math.sqrt(b1 * b1 - 4 * w * h * (1 - o) / (1 + o))) / 2
    # shrunk: (w - 2r)(h - 2r) / wh = o
    b2 = 2 * (h + w)
    r2 = (b2 - math.sqrt(b2 * b2 - 16 * (1 - o) * w * h)) / 8
    # grown: wh / ((w + 2r)(h + 2r)) = o
    b3 = 2 * o * (h + w)
    r3 = (-b3 + math.sqrt(b3 * b3 + 16 * o * (1 - o) * w * h)) / (8 * o)
    return min(r1, r2, r3)


def draw_gaussian(plane: np.ndarray, center: tuple[int, int], radius: int) -> np.ndarray:
    """Max-splat a ``(2r+1)^2`` Gaussian (sigma = diameter / 6) onto ``plane`` in place."""
    diameter = 2 * radius + 1
    sigma = diameter / 6
    ys, xs = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    g = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    g[g < np.finfo(g.dtype).eps * g.max()] = 0
    row, col = center
    H, W = plane.shape
    top, bottom = min(row, radius), min(H - row, radius + 1)
    left, right = min(col, radius), min(W - col, radius + 1)
    window = plane[row - top : row + bottom, col - left : col + right]
    patch = g[radius - top : radius + bottom, radius - left : radius + right]
    np.maximum(window, patch, out=window)
    return plane


def render_targets(boxes, classes, map_shape: tuple[int, int, int], stride: int = 4, min_overlap: float = MIN_OVERLAP):
    """Rasterise one image's boxes into a heatmap and regression targets.

    ``boxes`` are ``(x1, y1, x2, y2)`` in input pixels, ``classes`` the plane
    index of each box, ``map_shape`` the ``(C, H, W)`` output shape.  Zero-area
    boxes are skipped and counted in ``RegressionTargets.skipped``.
    """
    C, H, W = map_shape
    heat = np.zeros((C, H, W), dtype=np.float64)
    positions, offsets, sizes, cls_out = [], [], [], []
    skipped = 0
    for (x1, y1, x2, y2), c in zip(boxes, classes):
        if not 0 <= c < C:
            raise ValidationError(f"class index {c} outside 0..{C - 1}")
        bw, bh = (x2 - x1) / stride, (y2 - y1) / stride
        if bw <= 0 or bh <= 0:
            skipped += 1
            continue
        cx, cy = (x1 + x2) / 2 / stride, (y1 + y2) / 2 / stride
        col, row = int(math.floor(cx)), int(math.floor(cy))
        if not (0 <= row < H and 0 <= col < W):
            raise ValidationError(f"box {(x1, y1, x2, y2)} center falls outside the {H}x{W} map")
        radius = max(0, int(gaussian_radius(math.ceil(bh), math.ceil(bw), min_overlap)))
        draw_gaussian(heat[c], (row, col), radius)
        positions.append((row, col))
        offsets.append((cy - row, cx - col))
        sizes.append((bh, bw))
        cls_out.append(c)
    targets = RegressionTargets(
        positions=np.array(positions, dtype=np.int64).reshape(-1, 2),
        offsets=np.array(offsets, dtype=np.float64).reshape(-1, 2),
        sizes=np.array(sizes, dtype=np.float64).reshape(-1, 2),
        classes=np.array(cls_out, dtype=np.int64),
        skipped=skipped,
    )
    return TargetHeatmap(heat), targets


def focal_loss(pred, target, alpha: float = FOCAL_ALPHA, beta: float = FOCAL_BETA, eps: float = EPS):
    """Penalty-reduced focal loss and its gradient with respect to ``pred``.

    Positives (target exactly 1) contribute ``-(1 - p)^alpha log p``; every
    other pixel ``-(1 - y)^beta p^alpha log(1 - p)``.  The sum is divided by
    the number of positives (at least 1).  ``pred`` is clamped to
    ``[eps, 1 - eps]``; the returned gradient is evaluated at the clamped
    values.
    """
    y = target.data if isinstance(target, TargetHeatmap) else np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} differs from target shape {y.shape}")
    p = np.clip(p, eps, 1 - eps)
    pos = y == 1.0
    neg = ~pos
    n = max(int(pos.sum()), 1)
    log_p, log_q = np.log(p), np.log1p(-p)
    neg_w = (1 - y) ** beta
    pos_term = np.where(pos, (1 - p) ** alpha * log_p, 0.0)
    neg_term = np.where(neg, neg_w * p**alpha * log_q, 0.0)
    value = -(pos_term.sum() + neg_term.sum()) / n

    d_pos = alpha * (1 - p) ** (alpha - 1) * log_p - (1 - p) ** alpha / p
    d_neg = -neg_w * (alpha * p ** (alpha - 1) * log_q - p**alpha / (1 - p))
    grad = np.where(pos, d_pos, d_neg) / n
    return float(value), grad


def _l1(pred, target, weight: float):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - target
    value = weight * np.abs(diff).mean()
    grad = weight * np.sign(diff) / diff.size
    return float(value), grad


def offset_loss(pred, target):
    """Mean absolute error over the 2N offset components."""
    return _l1(pred, target, 1.0)


def size_loss(pred, target, weight: float = SIZE_WEIGHT):
    """``weight`` (0.1) times the mean absolute error over the 2N size components."""
    return _l1(pred, target, weight)


def total_loss(*components) -> float:
    """Sum of the branch losses; accepts values or ``(value, grad)`` pairs."""
    return float(sum(c[0] if isinstance(c, tuple) else c for c in components))


def gather_at(regression_map, positions) -> np.ndarray:
    """Read an ``(H, W, 2)`` regression map at ``(N, 2)`` integer positions."""
    m = np.asarray(regression_map)
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    return m[pos[:, 0], pos[:, 1]]


def compute_losses(pred_heatmap, pred_offsets, pred_sizes, heatmap: TargetHeatmap, targets: RegressionTargets) -> LossReport:
    """Evaluate all three branches for one image; maps are ``(C,H,W)`` / ``(H,W,2)``."""
    focal, _ = focal_loss(pred_heatmap, heatmap)
    off, _ = offset_loss(gather_at(pred_offsets, targets.positions), targets.offsets)
    size, _ = size_loss(gather_at(pred_sizes, targets.positions), targets.sizes)
    return LossReport(focal, off, size)
