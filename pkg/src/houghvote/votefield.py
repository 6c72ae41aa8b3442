"""Log-polar vote field geometry.

A vote field partitions a square window of integer pixel offsets into a
center disk plus ``rings - 1`` annuli, each annulus split into
``angle_bin_count`` angular sectors.  Region ids are 1-based:

* id 1 is the center disk (never split angularly);
* the remaining ids run ring by ring, inner to outer, and within a ring
  counter-clockwise starting from the sector that contains 0 degrees.

``ring_extents`` are full extents (diameters) in pixels, so a field with
extents ``[2, 8, 16]`` has half-extents 1, 4, 8 and a 17x17 window.

Offsets are ``(dy, dx)`` with the image row axis pointing down; angles are
measured with ``dy`` negated so that "up" in the image is 90 degrees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

OUTSIDE = -1

MASK_MODES = ("only_center", "no_center", "only_context")

# (angle bin width in degrees, ring extents) for the published configurations
PRESET_ANGLE_BINS = {60: 6, 90: 4, 180: 2, 360: 1}
PRESET_RING_EXTENTS = {
    3: (2, 8, 16),
    4: (2, 8, 16, 32),
    5: (2, 8, 16, 32, 64),
}


@dataclass(frozen=True)
class VoteFieldConfig:
    angle_bin_count: int
    ring_extents: tuple[int, ...]
    masked_regions: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "ring_extents", tuple(int(e) for e in self.ring_extents))
        object.__setattr__(self, "masked_regions", frozenset(int(r) for r in self.masked_regions))
        self.validate()

    def validate(self) -> None:
        n = self.angle_bin_count
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise ConfigError(f"angle_bin_count must be a positive integer, got {n!r}")
        if 360 % n:
            raise ConfigError(f"angle_bin_count must divide 360 degrees evenly, got {n}")
        ext = self.ring_extents
        if not ext:
            raise ConfigError("ring_extents must not be empty")
        for e in ext:
            if e < 2 or e % 2:
                raise ConfigError(f"ring extents must be even and >= 2, got {list(ext)}")
        if any(b <= a for a, b in zip(ext, ext[1:])):
            raise ConfigError(f"ring extents must be strictly increasing, got {list(ext)}")
        bad = sorted(r for r in self.masked_regions if not 1 <= r <= self.region_count)
        if bad:
            raise ConfigError(f"masked regions {bad} outside 1..{self.region_count}")

    @property
    def ring_count(self) -> int:
        return len(self.ring_extents)

    @property
    def region_count(self) -> int:
        return 1 + (self.ring_count - 1) * self.angle_bin_count

    @property
    def field_size(self) -> int:
        return self.ring_extents[-1] + 1

    @classmethod
    def from_preset(cls, angle_degrees: int = 90, rings: int = 5) -> "VoteFieldConfig":
        """Config for one of the ablation settings (angle bin width, ring count)."""
        try:
            return cls(PRESET_ANGLE_BINS[angle_degrees], PRESET_RING_EXTENTS[rings])
        except KeyError:
            raise ConfigError(f"no published configuration for {angle_degrees} deg / {rings} rings") from None


def ring_of(offset: tuple[int, int], ring_extents: Sequence[int]) -> int | None:
    """0-based ring index of an offset, or None beyond the last ring."""
    dy, dx = offset
    d4 = 4 * (dy * dy + dx * dx)  # (2 * distance)^2, exact in integers
    for k, e in enumerate(ring_extents):
        if d4 <= e * e:
            return k
    return None


def angle_bin_of(offset: tuple[int, int], angle_bin_count: int) -> int:
    dy, dx = offset
    angle = math.degrees(math.atan2(-dy, dx)) % 360.0
    b = math.floor(angle * angle_bin_count / 360.0 + 1e-9)
    return b % angle_bin_count


def region_of(offset: tuple[int, int], config: VoteFieldConfig) -> int:
    """Region id (1-based) containing ``offset``, or ``OUTSIDE`` (-1)."""
    k = ring_of(offset, config.ring_extents)
    if k is None:
        return OUTSIDE
    if k == 0:
        return 1
    n = config.angle_bin_count
    return 2 + (k - 1) * n + angle_bin_of(offset, n)


def region_ring(region_id: int, config: VoteFieldConfig) -> int:
    """0-based ring index that a region id belongs to."""
    if region_id == 1:
        return 0
    return 1 + (region_id - 2) // config.angle_bin_count


@dataclass(frozen=True, eq=False)
class VoteField:
    """Immutable, precomputed geometry for a :class:`VoteFieldConfig`.

    ``offsets[r - 1]`` is an ``(K_r, 2)`` int array of ``(dy, dx)`` offsets of
    region ``r`` in row-major window order; ``region_map`` is the
    ``field_size x field_size`` grid of region ids with ``OUTSIDE`` elsewhere.
    """

    config: VoteFieldConfig
    region_map: np.ndarray
    offsets: tuple[np.ndarray, ...]

    @property
    def region_count(self) -> int:
        return self.config.region_count

    @property
    def field_size(self) -> int:
        return self.config.field_size

    @property
    def radius(self) -> int:
        return self.field_size // 2

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(o) for o in self.offsets], dtype=np.int64)

    @property
    def masked_regions(self) -> frozenset[int]:
        return self.config.masked_regions

    @property
    def active_regions(self) -> list[int]:
        return [r for r in range(1, self.region_count + 1) if r not in self.masked_regions]

    def region_mask(self) -> np.ndarray:
        """Boolean vector of length R, True for regions that vote."""
        keep = np.ones(self.region_count, dtype=bool)
        for r in self.masked_regions:
            keep[r - 1] = False
        return keep

    def with_mask(self, masked: Iterable[int]) -> "VoteField":
        return VoteField(replace(self.config, masked_regions=frozenset(masked)), self.region_map, self.offsets)

    def __eq__(self, other):
        if not isinstance(other, VoteField):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.region_map, other.region_map)

    __hash__ = None

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "angle_bin_count": cfg.angle_bin_count,
            "ring_extents": list(cfg.ring_extents),
            "masked_regions": sorted(cfg.masked_regions),
            "region_count": self.region_count,
            "field_size": self.field_size,
            "region_sizes": self.sizes.tolist(),
            "region_map": self.region_map.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VoteField":
        try:
            cfg = VoteFieldConfig(
                doc["angle_bin_count"], doc["ring_extents"], frozenset(doc.get("masked_regions", ()))
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed vote field document: {exc}") from exc
        vf = build_field(cfg)
        if "region_count" in doc and doc["region_count"] != vf.region_count:
            raise ConfigError(f"region_count {doc['region_count']} disagrees with config ({vf.region_count})")
        if "field_size" in doc and doc["field_size"] != vf.field_size:
            raise ConfigError(f"field_size {doc['field_size']} disagrees with config ({vf.field_size})")
        if "region_map" in doc and not np.array_equal(np.asarray(doc["region_map"]), vf.region_map):
            raise ConfigError("region_map does not match the geometry implied by the config")
        return vf

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "VoteField":
        with open(path) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc)


def build_field(config: VoteFieldConfig) -> VoteField:
    config.validate()
    size = config.field_size
    rad = size // 2
    region_map = np.full((size, size), OUTSIDE, dtype=np.int32)
    buckets: list[list[tuple[int, int]]] = [[] for _ in range(config.region_count)]
    for dy in range(-rad, rad + 1):
        for dx in range(-rad, rad + 1):
            r = region_of((dy, dx), config)
            region_map[dy + rad, dx + rad] = r
            if r != OUTSIDE:
                buckets[r - 1].append((dy, dx))
    empty = [i + 1 for i, b in enumerate(buckets) if not b]
    if empty:
        raise ConfigError(f"regions {empty} contain no pixels; rings too thin for {config.angle_bin_count} angle bins")
    offsets = tuple(np.array(b, dtype=np.int64).reshape(-1, 2) for b in buckets)
    region_map.setflags(write=False)
    for o in offsets:
        o.setflags(write=False)
    return VoteField(config, region_map, offsets)


def mask_rings(vote_field: VoteField, mode: str | Iterable[int]) -> VoteField:
    """Return a copy of ``vote_field`` with the ablation mask ``mode`` applied.

    ``mode`` is one of ``only_center`` (keep region 1 only), ``no_center``
    (drop region 1), ``only_context`` (drop the two innermost rings) or an
    explicit collection of region ids to mask.
    """
    cfg = vote_field.config
    R = cfg.region_count
    if isinstance(mode, str):
        if mode == "only_center":
            masked = set(range(2, R + 1))
        elif mode == "no_center":
            masked = {1}
        elif mode == "only_context":
            masked = {r for r in range(1, R + 1) if region_ring(r, cfg) <= 1}
        elif mode in ("none", ""):
            masked = set()
        else:
            raise ConfigError(f"unknown mask mode {mode!r}; expected one of {MASK_MODES} or a set of region ids")
    else:
        masked = {int(r) for r in mode}
        bad = sorted(r for r in masked if not 1 <= r <= R)
        if bad:
            raise ConfigError(f"cannot mask nonexistent regions {bad} (field has {R})")
    return vote_field.with_mask(masked)
