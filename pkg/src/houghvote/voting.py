"""Vote aggregation: evidence tensors E (H x W x R) -> presence maps O (H x W).

Every evidence entry ``E[i, j, r]`` is spread uniformly over the ``K_r``
pixels of region ``r`` centred on ``(i, j)``; votes landing outside the grid
are dropped.  Three equivalent views of the same linear operator live here:

* :func:`aggregate_scatter` -- the loop over regions and offsets exactly as
  the accumulation rule reads; slow but obviously right, used as the oracle.
* :func:`aggregate_gather` -- per output pixel, pull contributions through
  the field's region map.  Each row of the map is compressed into runs of
  one region so a run costs two reads of a row-wise prefix sum.  Compiled
  with numba; this is the fast path.
* :func:`aggregate_adjoint` -- the transpose, i.e. the gradient of
  ``<G, O>`` with respect to ``E``.

Inputs may be a single class ``(H, W, R)`` or a stack ``(C, H, W, R)``.
Accumulation is always in float64.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np

from .errors import ShapeError, ValidationError
from .votefield import OUTSIDE, VoteField


def _check_evidence(E, vote_field: VoteField) -> np.ndarray:
    E = np.asarray(E)
    if E.ndim not in (3, 4):
        raise ShapeError(f"evidence must be (H, W, R) or (C, H, W, R), got shape {E.shape}")
    if E.shape[-1] != vote_field.region_count:
        raise ShapeError(
            f"evidence has {E.shape[-1]} region channels but the vote field has R={vote_field.region_count}"
        )
    if E.shape[-3] < 1 or E.shape[-2] < 1:
        raise ShapeError(f"empty spatial extent {E.shape}")
    if not np.issubdtype(E.dtype, np.floating):
        E = E.astype(np.float64)
    if not np.isfinite(E).all():
        raise ValidationError("evidence contains NaN or infinite values")
    return E


def _shift_slices(d: int, n: int) -> tuple[slice, slice]:
    """(source, target) slices along one axis for ``target = source + d``."""
    if d >= 0:
        return slice(0, max(n - d, 0)), slice(d, n)
    return slice(-d, n), slice(0, max(n + d, 0))


def aggregate_scatter(E, vote_field: VoteField) -> np.ndarray:
    """Accumulate votes by scattering each evidence entry over its region.

    Reference implementation: for each active region ``r`` and each offset
    ``(dy, dx)`` in it, every source pixel ``(i, j)`` adds ``E[i, j, r] / K_r``
    to ``O[i + dy, j + dx]`` when that target is inside the grid.
    """
    E = _check_evidence(E, vote_field)
    H, W = E.shape[-3], E.shape[-2]
    O = np.zeros(E.shape[:-1], dtype=np.float64)
    sizes = vote_field.sizes
    for r in vote_field.active_regions:
        channel = E[..., r - 1].astype(np.float64) / sizes[r - 1]
        for dy, dx in vote_field.offsets[r - 1]:
            sy, ty = _shift_slices(int(dy), H)
            sx, tx = _shift_slices(int(dx), W)
            O[..., ty, tx] += channel[..., sy, sx]
    return O


def gather_runs(vote_field: VoteField) -> np.ndarray:
    """Compress the region map into horizontal runs.

    Returns a float array with one row ``(dy, channel, dx_first, dx_last,
    1/K_r)`` per maximal run of equal region ids along a row of the map.
    Masked regions and out-of-disk cells are left out, so the kernel never
    has to look at the mask.
    """
    rad = vote_field.radius
    sizes = vote_field.sizes
    keep = vote_field.region_mask()
    rmap = vote_field.region_map
    runs = []
    for row in range(rmap.shape[0]):
        col = 0
        while col < rmap.shape[1]:
            r = int(rmap[row, col])
            end = col
            while end + 1 < rmap.shape[1] and rmap[row, end + 1] == r:
                end += 1
            if r != OUTSIDE and keep[r - 1]:
                runs.append((row - rad, r - 1, col - rad, end - rad, 1.0 / sizes[r - 1]))
            col = end + 1
    return np.array(runs, dtype=np.float64).reshape(-1, 5)


@numba.njit(nogil=True, cache=True)
def _gather_kernel(prefix, runs, out):
    # prefix[c, i, j] = sum of channel c over source columns < j in row i
    H, W = out.shape
    for y in range(H):
        row = out[y]
        for t in range(runs.shape[0]):
            i = y - int(runs[t, 0])
            if i < 0 or i >= H:
                continue
            src = prefix[int(runs[t, 1]), i]
            a = int(runs[t, 2])
            b = int(runs[t, 3])
            w = runs[t, 4]
            # output x pulls source columns x-b .. x-a
            for x in range(W):
                lo = max(x - b, 0)
                hi = min(x - a, W - 1)
                if lo <= hi:
                    row[x] += (src[hi + 1] - src[lo]) * w


def _worker_count(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("HVT_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def aggregate_gather(E, vote_field: VoteField, threads: int | None = None) -> np.ndarray:
    """Accumulate votes by gathering, per output pixel, from the region map.

    ``O[y, x] = sum(E[y - dy, x - dx, r] / K_r)`` over every in-disk cell
    ``(dy, dx)`` of the field whose region ``r`` is not masked.  Results match
    :func:`aggregate_scatter` up to float64 rounding.  Classes are
    processed independently, on up to ``threads`` workers (default: the
    ``HVT_THREADS`` environment variable, else the CPU count).
    """
    E = _check_evidence(E, vote_field)
    single = E.ndim == 3
    stack = E[None] if single else E
    runs = gather_runs(vote_field)
    C, H, W, R = stack.shape
    out = np.zeros((C, H, W), dtype=np.float64)

    def run(c):
        prefix = np.zeros((R, H, W + 1), dtype=np.float64)
        np.cumsum(np.moveaxis(stack[c], -1, 0), axis=-1, dtype=np.float64, out=prefix[..., 1:])
        _gather_kernel(prefix, runs, out[c])

    workers = min(_worker_count(threads), len(stack))
    if workers == 1:
        for c in range(len(stack)):
            run(c)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, range(len(stack))))
    return out[0] if single else out


def aggregate_adjoint(G, vote_field: VoteField) -> np.ndarray:
    """Transpose of the voting operator (gradient of ``<G, O>`` w.r.t. ``E``).

    ``grad[i, j, r] = sum_k G[(i, j) + offset_k] / K_r`` over in-grid targets;
    masked regions get exactly zero.  ``G`` may be ``(H, W)`` or ``(C, H, W)``.
    """
    G = np.asarray(G)
    if G.ndim not in (2, 3):
        raise ShapeError(f"gradient must be (H, W) or (C, H, W), got shape {G.shape}")
    if not np.isfinite(G).all():
        raise ValidationError("gradient contains NaN or infinite values")
    G = G.astype(np.float64, copy=False)
    H, W = G.shape[-2:]
    grad = np.zeros(G.shape + (vote_field.region_count,), dtype=np.float64)
    sizes = vote_field.sizes
    for r in vote_field.active_regions:
        acc = np.zeros(G.shape, dtype=np.float64)
        for dy, dx in vote_field.offsets[r - 1]:
            sy, ty = _shift_slices(int(dy), H)
            sx, tx = _shift_slices(int(dx), W)
            acc[..., sy, sx] += G[..., ty, tx]
        grad[..., r - 1] = acc / sizes[r - 1]
    return grad


def aggregate_multiclass(E_list, vote_field: VoteField, mode: str = "gather", threads: int | None = None) -> list[np.ndarray]:
    """Aggregate each class's evidence independently.

    ``E_list`` is a sequence of ``(H, W, R)`` tensors or one ``(C, H, W, R)``
    array; all classes must share H, W and R.
    """
    if isinstance(E_list, np.ndarray):
        if E_list.ndim != 4:
            raise ShapeError(f"stacked evidence must be (C, H, W, R), got shape {E_list.shape}")
        stack = E_list
    else:
        E_list = [np.asarray(e) for e in E_list]
        if not E_list:
            return []
        shapes = {e.shape for e in E_list}
        if len(shapes) != 1:
            raise ShapeError(f"all classes must share one shape, got {sorted(shapes)}")
        if E_list[0].ndim != 3:
            raise ShapeError(f"per-class evidence must be (H, W, R), got shape {E_list[0].shape}")
        stack = np.stack(E_list)
    if mode == "scatter":
        out = aggregate_scatter(stack, vote_field)
    elif mode == "gather":
        out = aggregate_gather(stack, vote_field, threads=threads)
    else:
        raise ValueError(f"mode must be 'scatter' or 'gather', got {mode!r}")
    return list(out)


def vote_contributions(E, vote_field: VoteField, target: tuple[int, int]) -> np.ndarray:
    """Per-source-pixel contribution to ``O[target]`` for one class.

    Returns an ``(H, W)`` map that sums to the presence value at ``target``.
    """
    E = _check_evidence(E, vote_field)
    if E.ndim != 3:
        raise ShapeError("vote_contributions takes a single class (H, W, R)")
    H, W = E.shape[:2]
    y, x = target
    if not (0 <= y < H and 0 <= x < W):
        raise ValidationError(f"target {target} outside the {H}x{W} map")
    onehot = np.zeros((H, W))
    onehot[y, x] = 1.0
    return (aggregate_adjoint(onehot, vote_field) * E).sum(axis=-1)
