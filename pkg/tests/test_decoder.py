import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from houghvote.decoder import (
    DEFAULT_SCALES,
    Detection,
    Peak,
    ScaleResult,
    decode_boxes,
    detect,
    extract_peaks,
    merge_multiscale,
    rescale_to_original,
    soft_nms,
)
from houghvote.errors import ValidationError
from houghvote.evalkit import iou


def det(box, score, cls=0):
    return Detection(cls, score, (0, 0), (0.0, 0.0), (0.0, 0.0), tuple(float(v) for v in box))


def gaussian(shape, center, sigma=1.5, amp=1.0):
    ys, xs = np.mgrid[: shape[0], : shape[1]]
    return amp * np.exp(-((ys - center[0]) ** 2 + (xs - center[1]) ** 2) / (2 * sigma**2))


def exhaustive_peaks(m):
    H, W = m.shape
    out = []
    for r in range(H):
        for c in range(W):
            nb = m[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2]
            if m[r, c] >= nb.max():
                out.append((r, c))
    return out


def test_unique_peak():
    m = np.zeros((8, 8))
    m[3, 5] = 0.7
    m[3, 4] = 0.2
    assert extract_peaks(m[None], top_k=5)[0] == Peak(0, 3, 5, 0.7)


def test_plateau_tie_break():
    peaks = extract_peaks(np.full((2, 3, 3), 0.5), top_k=4)
    assert [(p.class_id, p.row, p.col) for p in peaks] == [(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 1, 0)]
    assert len(extract_peaks(np.full((2, 3, 3), 0.5), top_k=100)) == 18


def test_two_gaussians():
    m = gaussian((20, 20), (4, 5), amp=0.9) + gaussian((20, 20), (14, 13), amp=0.6)
    peaks = extract_peaks(m[None], top_k=2)
    assert [(p.row, p.col) for p in peaks] == [(4, 5), (14, 13)]
    assert set(exhaustive_peaks(m)) >= {(4, 5), (14, 13)}


def test_logits_flag():
    m = np.array([[[-2.0, 3.0, -2.0]]])
    (p,) = extract_peaks(m, top_k=1, logits=True)
    assert p.score == pytest.approx(1 / (1 + math.exp(-3.0)))


def test_peak_errors():
    with pytest.raises(ValidationError):
        extract_peaks([], top_k=1)
    with pytest.raises(ValidationError):
        extract_peaks(np.zeros((1, 3, 3)), top_k=0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 30))
def test_peaks_invariant_to_monotone_transform(seed, k):
    m = np.random.default_rng(seed).uniform(size=(2, 9, 11))
    a = [(p.class_id, p.row, p.col) for p in extract_peaks(m, top_k=k)]
    b = [(p.class_id, p.row, p.col) for p in extract_peaks(np.exp(3 * m) - 7, top_k=k)]
    assert a == b


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_peaks_match_exhaustive_check(seed):
    m = np.random.default_rng(seed).uniform(size=(7, 9))
    got = {(p.row, p.col) for p in extract_peaks(m[None], top_k=1000)}
    assert got == set(exhaustive_peaks(m))


def test_decode_example():
    off = np.zeros((16, 32, 2))
    size = np.zeros((16, 32, 2))
    size[10, 20] = (4, 6)
    (d,) = decode_boxes([Peak(0, 10, 20, 0.9)], off, size, stride=4)
    assert d.box == (68.0, 32.0, 92.0, 48.0)


def test_decode_degenerate_and_identity_stride():
    off = np.zeros((8, 8, 2))
    size = np.zeros((8, 8, 2))
    (d,) = decode_boxes([Peak(0, 3, 5, 1.0)], off, size, stride=4)
    assert d.box == (20.0, 12.0, 20.0, 12.0)
    off[3, 5] = (0.5, 0.5)
    (d,) = decode_boxes([Peak(0, 3, 5, 1.0)], off, size, stride=1)
    assert d.box[:2] == (5.5, 3.5)


def test_decode_negative_size_is_counted():
    size = np.zeros((4, 4, 2))
    size[1, 1] = (-2, 3)
    diag = Counter()
    (d,) = decode_boxes([Peak(0, 1, 1, 1.0)], np.zeros((4, 4, 2)), size, stride=4, diagnostics=diag)
    assert diag["negative_size"] == 1
    assert d.size == (0.0, 3.0)
    assert d.box[1] == d.box[3]


def test_decode_clamps_to_image():
    size = np.full((4, 4, 2), 10.0)
    (d,) = decode_boxes([Peak(0, 0, 0, 1.0)], np.zeros((4, 4, 2)), size, stride=4)
    assert d.box == (0.0, 0.0, 16.0, 16.0)


@given(t=st.tuples(st.integers(-3, 3), st.integers(-3, 3)))
def test_decode_translation(t):
    rng = np.random.default_rng(0)
    off = rng.uniform(size=(20, 20, 2))
    size = rng.uniform(1, 3, size=(20, 20, 2))
    r, c = 10, 9
    off2 = np.roll(off, t, axis=(0, 1))
    size2 = np.roll(size, t, axis=(0, 1))
    (a,) = decode_boxes([Peak(0, r, c, 1.0)], off, size, image_size=(1000, 1000))
    (b,) = decode_boxes([Peak(0, r + t[0], c + t[1], 1.0)], off2, size2, image_size=(1000, 1000))
    shift = (4 * t[1], 4 * t[0]) * 2
    np.testing.assert_allclose(np.array(b.box), np.array(a.box) + shift, atol=1e-9)


def test_soft_nms_examples():
    (single,) = soft_nms([det((0, 0, 10, 10), 0.7)])
    assert single.score == 0.7
    out = soft_nms([det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.8)], sigma=0.5)
    assert out[0].score == 0.9
    assert out[1].score == pytest.approx(0.8 * math.exp(-2), rel=1e-12)
    assert out[1].score == pytest.approx(0.1083, abs=5e-5)
    disjoint = soft_nms([det((0, 0, 10, 10), 0.9), det((20, 20, 30, 30), 0.8)])
    assert [d.score for d in disjoint] == [0.9, 0.8]


def test_soft_nms_is_per_class():
    out = soft_nms([det((0, 0, 10, 10), 0.9, 0), det((0, 0, 10, 10), 0.8, 1)])
    assert [d.score for d in out] == [0.9, 0.8]


def test_soft_nms_small_sigma_acts_as_hard_nms():
    dets = [det((0, 0, 10, 10), 0.9), det((5, 0, 15, 10), 0.85), det((30, 30, 40, 40), 0.5)]
    out = soft_nms(dets, sigma=1e-4, score_floor=0.01)
    assert [d.box for d in out] == [dets[0].box, dets[2].box]


def test_soft_nms_drops_below_floor():
    out = soft_nms([det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.001)], score_floor=0.001)
    assert len(out) == 1


def test_rescale_examples():
    d = det((10, 10, 30, 20), 0.5)
    assert rescale_to_original([d], 1.0)[0].box == d.box
    assert rescale_to_original([d], 2.0)[0].box == (5, 5, 15, 10)
    (f,) = rescale_to_original([det((10, 0, 30, 10), 0.5)], 1.0, flip=True, image_width=100)
    assert f.box == (70, 0, 90, 10)


def test_flip_matches_reflected_scene():
    # object at x 10..30 in a 100-wide image; its mirror image sits at 70..90
    W, H, stride = 100, 40, 4
    presence = np.zeros((1, H // stride, W // stride))
    off = np.zeros(presence.shape[1:] + (2,))
    size = np.zeros_like(off)
    presence[0, 1, 20] = 0.9  # center x = 80 in the flipped frame
    size[1, 20] = (2.5, 5.0)
    (d,) = detect(presence, off, size, stride=stride)
    (back,) = rescale_to_original([d], 1.0, flip=True, image_width=W)
    assert d.box == (70.0, 0.0, 90.0, 9.0)
    assert back.box == (10.0, 0.0, 30.0, 9.0)


def test_default_scales():
    assert DEFAULT_SCALES == (0.6, 1.0, 1.2, 1.5, 1.8)


def test_merge_multiscale():
    assert merge_multiscale([]) == []
    dets = [det((0, 0, 10, 10), 0.9), det((2, 0, 12, 10), 0.6), det((50, 50, 60, 60), 0.4)]
    one = merge_multiscale([ScaleResult(1.0, dets)])
    assert one == soft_nms(dets)
    five = merge_multiscale([ScaleResult(s, [det((0, 0, 10, 10), 0.9)]) for s in DEFAULT_SCALES])
    assert five[0].score == 0.9
    # each pick decays the remaining duplicates by another exp(-1/sigma)
    chain = [0.9 * math.exp(-2 * k) for k in range(5)]
    expected = [s for s in chain if s >= 0.001]
    assert [d.score for d in five] == pytest.approx(expected, rel=1e-12)
    assert merge_multiscale([ScaleResult(1.0, dets)], top_k=1) == one[:1]
