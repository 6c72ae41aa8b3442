import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import classify
from houghvote.errors import ShapeError, ValidationError
from houghvote.votefield import VoteFieldConfig, build_field, mask_rings
from houghvote.voting import (
    aggregate_adjoint,
    aggregate_gather,
    aggregate_multiclass,
    aggregate_scatter,
    vote_contributions,
)


def brute_force_votes(E, bins, extents, masked=()):
    """Literal accumulation loop with its own geometry, no library code."""
    H, W, R = E.shape
    rad = extents[-1] // 2
    members = {r: [] for r in range(1, R + 1)}
    for dy in range(-rad, rad + 1):
        for dx in range(-rad, rad + 1):
            r = classify(dy, dx, bins, extents)
            if r:
                members[r].append((dy, dx))
    O = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            for r in range(1, R + 1):
                if r in masked:
                    continue
                K = len(members[r])
                for dy, dx in members[r]:
                    y, x = i + dy, j + dx
                    if 0 <= y < H and 0 <= x < W:
                        O[y, x] += E[i, j, r - 1] / K
    return O


def test_single_center_vote():
    vf = build_field(VoteFieldConfig(4, (2, 8, 16)))
    E = np.zeros((9, 9, 9))
    E[4, 4, 0] = 1.0
    want = np.zeros((9, 9))
    for y, x in [(4, 4), (3, 4), (5, 4), (4, 3), (4, 5)]:
        want[y, x] = 0.2
    for agg in (aggregate_scatter, aggregate_gather):
        np.testing.assert_allclose(agg(E, vf), want, atol=1e-15)


def test_zero_in_zero_out(field):
    E = np.zeros((12, 10, field.region_count))
    assert not aggregate_scatter(E, field).any()
    assert not aggregate_gather(E, field).any()
    assert not aggregate_adjoint(np.zeros((12, 10)), field).any()


@pytest.mark.parametrize("bins, extents", [(4, (2, 8, 16)), (6, (2, 8, 16)), (2, (2, 8, 16, 32))])
def test_scatter_matches_brute_force(rng, bins, extents):
    vf = build_field(VoteFieldConfig(bins, extents))
    E = rng.normal(size=(11, 13, vf.region_count))
    np.testing.assert_allclose(aggregate_scatter(E, vf), brute_force_votes(E, bins, extents), rtol=1e-12, atol=1e-12)


def test_scatter_matches_brute_force_masked(rng):
    vf = mask_rings(build_field(VoteFieldConfig(4, (2, 8, 16))), "only_context")
    E = rng.normal(size=(10, 10, 9))
    want = brute_force_votes(E, 4, (2, 8, 16), masked=vf.masked_regions)
    np.testing.assert_allclose(aggregate_scatter(E, vf), want, atol=1e-12)
    np.testing.assert_allclose(aggregate_gather(E, vf), want, atol=1e-12)


def test_gather_matches_scatter(field, rng):
    E = rng.normal(size=(2, 40, 37, field.region_count)).astype(np.float32)
    s = aggregate_scatter(E, field)
    g = aggregate_gather(E, field)
    assert np.abs(g - s).max() <= 1e-5 * np.abs(E).max()


def test_gather_thread_count_does_not_change_result(small_field, rng):
    E = rng.normal(size=(5, 20, 20, 9))
    a = aggregate_gather(E, small_field, threads=1)
    b = aggregate_gather(E, small_field, threads=3)
    np.testing.assert_array_equal(a, b)


def test_linearity(field, rng):
    E1 = rng.normal(size=(20, 20, field.region_count))
    E2 = rng.normal(size=(20, 20, field.region_count))
    a, b = 1.7, -0.3
    lhs = aggregate_scatter(a * E1 + b * E2, field)
    rhs = a * aggregate_scatter(E1, field) + b * aggregate_scatter(E2, field)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-9)


def test_adjoint_identity(field, rng):
    E = rng.normal(size=(24, 19, field.region_count))
    Y = rng.normal(size=(24, 19))
    lhs = np.vdot(aggregate_scatter(E, field), Y)
    rhs = np.vdot(E, aggregate_adjoint(Y, field))
    assert abs(lhs - rhs) <= 1e-6 * max(abs(lhs), 1.0)


def test_adjoint_one_hot_is_membership(small_field):
    H = W = 15
    y, x = 7, 5
    G = np.zeros((H, W))
    G[y, x] = 1.0
    grad = aggregate_adjoint(G, small_field)
    K = small_field.sizes
    for i in range(H):
        for j in range(W):
            r = classify(y - i, x - j, 4, (2, 8, 16))
            for c in range(9):
                want = 1.0 / K[c] if r == c + 1 else 0.0
                assert grad[i, j, c] == pytest.approx(want, abs=1e-15)


def test_adjoint_masked_regions_get_zero(rng):
    vf = mask_rings(build_field(VoteFieldConfig(4, (2, 8, 16))), "no_center")
    grad = aggregate_adjoint(rng.normal(size=(10, 10)), vf)
    assert not grad[..., 0].any()
    assert grad[..., 1:].any()


def test_interior_mass_conservation(field, rng):
    rad = field.radius
    H = W = 2 * rad + 8
    E = np.zeros((H, W, field.region_count))
    E[rad : H - rad, rad : W - rad] = rng.normal(size=(H - 2 * rad, W - 2 * rad, field.region_count))
    O = aggregate_gather(E, field)
    assert O.sum() == pytest.approx(E.sum(), abs=1e-9)


def test_boundary_clipping_loses_mass(small_field, rng):
    E = rng.uniform(size=(12, 12, 9))
    assert aggregate_scatter(E, small_field).sum() < E.sum()


def test_masking_equals_zeroed_channels(field, rng):
    E = rng.normal(size=(16, 16, field.region_count))
    for mode in ("only_center", "no_center", "only_context"):
        masked = mask_rings(field, mode)
        Z = E.copy()
        for r in masked.masked_regions:
            Z[..., r - 1] = 0.0
        np.testing.assert_array_equal(aggregate_scatter(E, masked), aggregate_scatter(Z, field))
        np.testing.assert_allclose(aggregate_gather(E, masked), aggregate_gather(Z, field), atol=1e-12)


def test_translation_equivariance(small_field, rng):
    E = np.zeros((40, 40, 9))
    E[12:20, 12:20] = rng.normal(size=(8, 8, 9))
    shifted = np.roll(E, (5, -3), axis=(0, 1))
    O = aggregate_gather(E, small_field)
    Os = aggregate_gather(shifted, small_field)
    np.testing.assert_allclose(np.roll(O, (5, -3), axis=(0, 1)), Os, atol=1e-12)


def test_multiclass(small_field, rng):
    Es = [rng.normal(size=(10, 12, 9)) for _ in range(3)]
    outs = aggregate_multiclass(Es, small_field)
    for E, O in zip(Es, outs):
        np.testing.assert_allclose(O, aggregate_scatter(E, small_field), atol=1e-12)
    (single,) = aggregate_multiclass(Es[:1], small_field, mode="scatter")
    np.testing.assert_array_equal(single, aggregate_scatter(Es[0], small_field))
    perm = aggregate_multiclass([Es[2], Es[0], Es[1]], small_field)
    for a, b in zip(perm, [outs[2], outs[0], outs[1]]):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ShapeError):
        aggregate_multiclass([Es[0], Es[0][:5]], small_field)


def test_errors(small_field):
    with pytest.raises(ShapeError):
        aggregate_scatter(np.zeros((5, 5, 8)), small_field)
    with pytest.raises(ShapeError):
        aggregate_gather(np.zeros((5, 5)), small_field)
    bad = np.zeros((5, 5, 9))
    bad[1, 1, 1] = np.nan
    with pytest.raises(ValidationError):
        aggregate_scatter(bad, small_field)
    with pytest.raises(ValidationError):
        aggregate_gather(bad, small_field)
    with pytest.raises(ShapeError):
        aggregate_adjoint(np.zeros(5), small_field)


def test_vote_contributions_sum_to_presence(small_field, rng):
    E = rng.normal(size=(14, 14, 9))
    O = aggregate_scatter(E, small_field)
    c = vote_contributions(E, small_field, (6, 9))
    assert c.sum() == pytest.approx(O[6, 9], abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    h=st.integers(1, 20),
    w=st.integers(1, 20),
    seed=st.integers(0, 2**31),
    bins=st.sampled_from([1, 2, 4, 6]),
)
def test_scatter_gather_agree_any_shape(h, w, seed, bins):
    vf = build_field(VoteFieldConfig(bins, (2, 8, 16)))
    E = np.random.default_rng(seed).normal(size=(h, w, vf.region_count))
    np.testing.assert_allclose(aggregate_gather(E, vf), aggregate_scatter(E, vf), atol=1e-10)
