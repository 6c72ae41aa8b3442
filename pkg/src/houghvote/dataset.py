"""COCO annotation handling and the stratified ``minitrain`` sampler.

The sampler draws ``trials`` seeded uniform image subsets and keeps the one
whose statistics stay closest to the full set on three families:

* ``class``           -- proportion of instances per category;
* ``size``            -- overall small / medium / large ratios;
* ``class_size``      -- small / medium / large ratios within each category.

Each family is scored by an L1 distance between proportion vectors (for
``class_size`` the per-category L1 distances are averaged with the full-set
category proportions as weights) and a draw is scored by its worst family.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IntegrityError, ValidationError

SMALL_MAX = 32.0**2
MEDIUM_MAX = 96.0**2
SIZE_BUCKETS = ("small", "medium", "large")
FAMILIES = ("class", "size", "class_size")


@dataclass(frozen=True)
class Image:
    id: int
    width: int
    height: int
    file_name: str = ""


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    area: float
    iscrowd: int = 0


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass
class AnnotationSet:
    images: list[Image]
    annotations: list[Annotation]
    categories: list[Category]
    extra: dict = field(default_factory=dict)  # passthrough top-level keys (info, licenses, ...)

    def validate(self) -> None:
        image_ids = {im.id for im in self.images}
        cat_ids = {c.id for c in self.categories}
        if len(image_ids) != len(self.images):
            raise IntegrityError("duplicate image ids")
        if len(cat_ids) != len(self.categories):
            raise IntegrityError("duplicate category ids")
        for a in self.annotations:
            if a.image_id not in image_ids:
                raise IntegrityError(f"annotation {a.id} references missing image {a.image_id}")
            if a.category_id not in cat_ids:
                raise IntegrityError(f"annotation {a.id} references missing category {a.category_id}")
            if not a.area > 0:
                raise IntegrityError(f"annotation {a.id} has non-positive area {a.area}")

    @classmethod
    def from_dict(cls, doc: dict) -> "AnnotationSet":
        if not isinstance(doc, dict):
            raise IntegrityError("top level of a COCO file must be an object")
        try:
            images = [Image(int(im["id"]), int(im.get("width", 0)), int(im.get("height", 0)), im.get("file_name", "")) for im in doc.get("images", [])]
            cats = [Category(int(c["id"]), str(c.get("name", c["id"]))) for c in doc.get("categories", [])]
            anns = []
            for a in doc.get("annotations", []):
                bbox = tuple(float(v) for v in a["bbox"])
                if len(bbox) != 4:
                    raise IntegrityError(f"annotation {a.get('id')} bbox must have 4 numbers")
                area = float(a["area"]) if a.get("area") is not None else bbox[2] * bbox[3]
                anns.append(Annotation(int(a["id"]), int(a["image_id"]), int(a["category_id"]), bbox, area, int(a.get("iscrowd", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, IntegrityError):
                raise
            raise IntegrityError(f"malformed COCO record: {exc!r}") from exc
        extra = {k: v for k, v in doc.items() if k not in ("images", "annotations", "categories")}
        ann = cls(images, anns, cats, extra)
        ann.validate()
        return ann

    def to_dict(self) -> dict:
        doc = dict(self.extra)
        doc["images"] = [{"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name} for im in self.images]
        doc["annotations"] = [
            {"id": a.id, "image_id": a.image_id, "category_id": a.category_id, "bbox": list(a.bbox), "area": a.area, "iscrowd": a.iscrowd}
            for a in self.annotations
        ]
        doc["categories"] = [{"id": c.id, "name": c.name} for c in self.categories]
        return doc

    def subset(self, image_ids) -> "AnnotationSet":
        keep = set(image_ids)
        return AnnotationSet(
            [im for im in self.images if im.id in keep],
            [a for a in self.annotations if a.image_id in keep],
            list(self.categories),
            dict(self.extra),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)


def load_annotations(path) -> AnnotationSet:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return AnnotationSet.from_dict(doc)


def size_bucket(area: float) -> str:
    if not area > 0:
        raise ValidationError(f"area must be positive, got {area}")
    if area < SMALL_MAX:
        return "small"
    if area < MEDIUM_MAX:
        return "medium"
    return "large"


@dataclass
class DatasetStats:
    category_ids: list[int]
    image_count: int
    object_count: int
    class_counts: dict[int, int]
    size_counts: dict[str, int]
    class_size_counts: dict[int, dict[str, int]]

    @property
    def class_proportions(self) -> dict[int, float]:
        n = self.object_count
        return {c: (self.class_counts[c] / n if n else 0.0) for c in self.category_ids}

    @property
    def size_ratios(self) -> dict[str, float]:
        n = self.object_count
        return {b: (self.size_counts[b] / n if n else 0.0) for b in SIZE_BUCKETS}

    @property
    def class_size_ratios(self) -> dict[int, dict[str, float]]:
        out = {}
        for c in self.category_ids:
            n = self.class_counts[c]
            out[c] = {b: (self.class_size_counts[c][b] / n if n else 0.0) for b in SIZE_BUCKETS}
        return out

    def to_dict(self) -> dict:
        return {
            "image_count": self.image_count,
            "object_count": self.object_count,
            "class_counts": {str(c): v for c, v in self.class_counts.items()},
            "class_proportions": {str(c): v for c, v in self.class_proportions.items()},
            "size_counts": dict(self.size_counts),
            "size_ratios": self.size_ratios,
            "class_size_ratios": {str(c): v for c, v in self.class_size_ratios.items()},
        }


def compute_stats(ann: AnnotationSet) -> DatasetStats:
    cat_ids = [c.id for c in ann.categories]
    class_counts = Counter({c: 0 for c in cat_ids})
    size_counts = Counter({b: 0 for b in SIZE_BUCKETS})
    class_size = {c: Counter({b: 0 for b in SIZE_BUCKETS}) for c in cat_ids}
    for a in ann.annotations:
        b = size_bucket(a.area)
        class_counts[a.category_id] += 1
        size_counts[b] += 1
        class_size[a.category_id][b] += 1
    return DatasetStats(
        category_ids=cat_ids,
        image_count=len(ann.images),
        object_count=len(ann.annotations),
        class_counts=dict(class_counts),
        size_counts=dict(size_counts),
        class_size_counts={c: dict(v) for c, v in class_size.items()},
    )


def divergence(full: DatasetStats, sub: DatasetStats) -> dict[str, float]:
    """L1 distance between subset and full-set proportions, per family."""
    cats = full.category_ids
    fp, sp = full.class_proportions, sub.class_proportions
    d_class = sum(abs(fp[c] - sp[c]) for c in cats)
    fr, sr = full.size_ratios, sub.size_ratios
    d_size = sum(abs(fr[b] - sr[b]) for b in SIZE_BUCKETS)
    fcs, scs = full.class_size_ratios, sub.class_size_ratios
    d_cs = 0.0
    for c in cats:
        d_cs += fp[c] * sum(abs(fcs[c][b] - scs[c][b]) for b in SIZE_BUCKETS)
    return {"class": d_class, "size": d_size, "class_size": d_cs}


def max_divergence(report: dict[str, float]) -> float:
    return max(report[f] for f in FAMILIES)


class _Counts:
    """Per-image count matrices so a trial costs one sum over selected rows."""

    def __init__(self, ann: AnnotationSet):
        self.image_ids = np.array([im.id for im in ann.images], dtype=np.int64)
        self.cat_ids = [c.id for c in ann.categories]
        row = {im.id: k for k, im in enumerate(ann.images)}
        col = {c: k for k, c in enumerate(self.cat_ids)}
        counts = np.zeros((len(ann.images), len(self.cat_ids), 3), dtype=np.int64)
        bucket = {b: k for k, b in enumerate(SIZE_BUCKETS)}
        for a in ann.annotations:
            counts[row[a.image_id], col[a.category_id], bucket[size_bucket(a.area)]] += 1
        self.counts = counts

    def stats(self, rows) -> DatasetStats:
        t = self.counts[rows].sum(axis=0)
        return DatasetStats(
            category_ids=list(self.cat_ids),
            image_count=len(rows),
            object_count=int(t.sum()),
            class_counts={c: int(t[k].sum()) for k, c in enumerate(self.cat_ids)},
            size_counts={b: int(t[:, j].sum()) for j, b in enumerate(SIZE_BUCKETS)},
            class_size_counts={c: {b: int(t[k, j]) for j, b in enumerate(SIZE_BUCKETS)} for k, c in enumerate(self.cat_ids)},
        )


@dataclass
class SampleResult:
    image_ids: list[int]
    stats: DatasetStats
    divergence: dict[str, float]
    score: float
    trial: int

    def report(self, full: DatasetStats | None = None) -> dict:
        doc = {
            "selected_images": len(self.image_ids),
            "best_trial": self.trial,
            "score": self.score,
            "divergence": self.divergence,
            "subset": self.stats.to_dict(),
        }
        if full is not None:
            doc["full"] = full.to_dict()
        return doc


def sample_minitrain(
    ann: AnnotationSet,
    image_count: int,
    trials: int = 1,
    seed: int = 0,
    score_fn: Callable[[dict[str, float]], float] = max_divergence,
) -> SampleResult:
    """Best-of-``trials`` uniform draws of ``image_count`` images.

    Draw ``t`` uses ``numpy.random.default_rng([seed, t])`` so each trial is
    reproducible on its own; ties in score go to the lowest trial index.
    """
    total = len(ann.images)
    if image_count < 1:
        raise ValidationError("image_count must be >= 1")
    if image_count > total:
        raise ValidationError(f"image_count {image_count} exceeds the {total} available images")
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    table = _Counts(ann)
    full = table.stats(np.arange(total))
    best = None
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        rows = np.sort(rng.choice(total, size=image_count, replace=False))
        stats = table.stats(rows)
        div = divergence(full, stats)
        score = score_fn(div)
        if best is None or score < best.score:
            best = SampleResult([int(i) for i in table.image_ids[rows]], stats, div, score, t)
    return best
