import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrank_detect.errors import CoverageError, InvalidArgument
from lowrank_detect.patches import (
    Patch3Config, aggregate_array, aggregate_patches, extract_patch_array, extract_patches_3d,
    group_indices, group_similar_patches, lattice, stack_spatial_patches,
)


def _video(H, W, T, seed=0):
    return np.random.default_rng(seed).uniform(size=(H, W, T))


def test_patch_count_lattice():
    v = _video(8, 8, 4)
    patches = extract_patches_3d(v, Patch3Config(h=4, w=4, t=2, stride_s=2, stride_t=2))
    assert len(patches) == 18


def test_full_size_patch():
    v = _video(8, 9, 3)
    patches = extract_patches_3d(v, Patch3Config(h=8, w=9, t=3, stride_s=5, stride_t=5))
    assert len(patches) == 1
    np.testing.assert_array_equal(patches[0][0], v)
    assert patches[0][1] == (0, 0, 0)


def test_boundary_clamp():
    np.testing.assert_array_equal(lattice(9, 4, 4), [0, 4, 5])
    v = _video(9, 8, 1)
    origins = {o[0] for _, o in extract_patches_3d(v, Patch3Config(h=4, w=8, t=1, stride_s=4))}
    assert origins == {0, 4, 5}


def test_patch_larger_than_video():
    with pytest.raises(InvalidArgument):
        extract_patches_3d(_video(8, 8, 2), Patch3Config(h=9, w=4, t=1))
    with pytest.raises(InvalidArgument):
        extract_patches_3d(_video(8, 8, 2), Patch3Config(h=4, w=4, t=3))


def test_patches_equal_source():
    v = _video(10, 12, 5)
    for p, (x, y, z) in extract_patches_3d(v, Patch3Config(h=3, w=5, t=2, stride_s=3, stride_t=2)):
        np.testing.assert_array_equal(p, v[x:x + 3, y:y + 5, z:z + 2])


@settings(max_examples=60, deadline=None)
@given(
    H=st.integers(8, 20), W=st.integers(8, 20), T=st.integers(1, 6),
    h=st.integers(1, 8), w=st.integers(1, 8), t=st.integers(1, 6),
    ss=st.integers(1, 6), stt=st.integers(1, 4),
)
def test_count_formula_and_identity(H, W, T, h, w, t, ss, stt):
    t = min(t, T)
    ss, stt = min(ss, h, w), min(stt, t)  # full coverage
    v = _video(H, W, T, seed=H * W + T)
    cfg = Patch3Config(h=h, w=w, t=t, stride_s=ss, stride_t=stt)

    def n(L, p, s):
        return (L - p) // s + 1 + (1 if (L - p) % s else 0)

    patches, origins = extract_patch_array(v, cfg)
    assert len(patches) == n(H, h, ss) * n(W, w, ss) * n(T, t, stt)
    np.testing.assert_array_equal(aggregate_array(patches, origins, v.shape, "median"), v)
    np.testing.assert_allclose(aggregate_array(patches, origins, v.shape, "mean"), v, rtol=1e-14)


def test_group_identical_pair():
    a = np.zeros((2, 2))
    a[0, 0] = 1.0
    b = np.zeros((2, 2))
    b[1, 1] = 1.0
    patches = [(a, (0, 0, 0)), (b, (0, 2, 0)), (a.copy(), (2, 0, 0))]
    groups = group_similar_patches(patches, k=2, search_radius=10)
    g0 = groups[0]
    assert g0.origins == [(0, 0, 0), (2, 0, 0)]
    assert not g0.padded.any()


def test_group_k1_is_reference_alone():
    v = _video(8, 8, 2)
    patches = extract_patches_3d(v, Patch3Config(h=4, w=4, t=1, stride_s=2))
    groups = group_similar_patches(patches, k=1, search_radius=20)
    assert len(groups) == len(patches)
    for g in groups:
        assert g.data.shape == (4, 4, 1, 1)
        assert len(g.origins) == 1


def test_group_matches_brute_force():
    rng = np.random.default_rng(9)
    patches = [(rng.normal(size=(3, 3, 1)), (int(x), int(y), 0))
               for x, y in zip(rng.permutation(10), rng.permutation(10))]
    groups = group_similar_patches(patches, k=3, search_radius=100)
    by_origin = {o: p for p, o in patches}
    for g in groups:
        ref = g.origins[0]
        others = sorted(
            (float(np.sum((by_origin[o] - by_origin[ref]) ** 2)), o) for o in by_origin if o != ref
        )
        assert g.origins[1:] == [o for _, o in others[:2]]


def test_group_padding_and_radius():
    patches = [(np.zeros((2, 2, 1)), (0, 0, 0)), (np.ones((2, 2, 1)), (50, 50, 0))]
    g = group_similar_patches(patches, k=3, search_radius=5)[0]
    assert g.origins == [(0, 0, 0)] * 3
    np.testing.assert_array_equal(g.padded, [False, True, True])


def test_group_same_slab_versus_sequence():
    a = np.ones((2, 2, 1))
    patches = [(a, (0, 0, 0)), (a * 5, (0, 2, 0)), (a, (0, 0, 1))]
    slab = group_similar_patches(patches, k=2, search_radius=5, same_slab=True)[0]
    seq = group_similar_patches(patches, k=2, search_radius=5, same_slab=False)[0]
    assert slab.origins[1] == (0, 2, 0)
    assert seq.origins[1] == (0, 0, 1)


def test_grouping_permutation_invariant():
    v = _video(12, 12, 2, seed=4)
    patches = extract_patches_3d(v, Patch3Config(h=4, w=4, t=1, stride_s=2))
    perm = np.random.default_rng(1).permutation(len(patches))
    g1 = group_similar_patches(patches, k=4, search_radius=6)
    g2 = group_similar_patches([patches[i] for i in perm], k=4, search_radius=6)
    assert [g.origins for g in g1] == [g.origins for g in g2]
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(a.data, b.data)


def test_group_indices_reference_first():
    v = _video(10, 10, 1)
    patches, origins = extract_patch_array(v, Patch3Config(h=3, w=3, t=1, stride_s=1))
    members, _ = group_indices(patches, origins, 5, 3)
    np.testing.assert_array_equal(members[:, 0], np.arange(len(origins)))


def test_stack_counts_and_order():
    v = _video(8, 8, 2)
    st3 = stack_spatial_patches(v, 4, 4, 4)
    assert st3.data.shape == (4, 4, 8)
    frames = st3.origins[:, 2]
    assert np.all(np.diff(frames) >= 0)
    assert frames.max() == 1 and frames[:4].max() == 0
    for n, (x, y, z) in enumerate(st3.origins):
        np.testing.assert_array_equal(st3.data[:, :, n], v[x:x + 4, y:y + 4, z])


def test_stack_full_frames():
    v = _video(8, 10, 3)
    st3 = stack_spatial_patches(v, 8, 10, 3)
    assert st3.data.shape == (8, 10, 3)
    np.testing.assert_array_equal(st3.data, v)


def test_aggregate_median_rules():
    one = np.ones((1, 1))
    vals = [(one * 1, (0, 0, 0)), (one * 2, (0, 0, 0)), (one * 3, (0, 0, 0))]
    assert aggregate_patches(vals, 1, 1, 1)[0, 0, 0] == 2
    vals = [(one * 1, (0, 0, 0)), (one * 4, (0, 0, 0))]
    assert aggregate_patches(vals, 1, 1, 1)[0, 0, 0] == 2.5
    assert aggregate_patches(vals, 1, 1, 1, reducer="mean")[0, 0, 0] == 2.5


def test_aggregate_uncovered_pixel():
    with pytest.raises(CoverageError) as err:
        aggregate_patches([(np.ones((2, 2)), (0, 0, 0))], 3, 2, 1)
    assert err.value.coords == (2, 0, 0)


def test_aggregate_unknown_reducer():
    with pytest.raises(InvalidArgument):
        aggregate_patches([(np.ones((1, 1)), (0, 0, 0))], 1, 1, 1, reducer="max")


def test_group_indices_track_offsets():
    # a bright dot moving 2 px/frame: with matching offsets every member is an exact copy
    v = np.zeros((24, 24, 4))
    for t in range(4):
        v[10, 4 + 2 * t, t] = 1.0
    cfg = Patch3Config(h=4, w=4, t=1, stride_s=2, stride_t=1)
    patches, origins = extract_patch_array(v, cfg)
    ref = int(np.flatnonzero((origins == [8, 2, 0]).all(axis=1))[0])
    offsets = np.array([[0, 2 * t] for t in range(4)])
    members, padded = group_indices(patches, origins, 4, 0, refs=[ref], offsets=offsets)
    assert not padded.any()
    assert [tuple(origins[m]) for m in members[0]] == [(8, 2, 0), (8, 4, 1), (8, 6, 2), (8, 8, 3)]
    for m in members[0]:
        np.testing.assert_array_equal(patches[m], patches[ref])
    # without offsets a zero radius finds the same position in other frames, where the dot is gone
    members, padded = group_indices(patches, origins, 4, 0, same_slab=False, refs=[ref])
    assert not padded.any()
    assert sorted(tuple(origins[m]) for m in members[0][1:]) == [(8, 2, 1), (8, 2, 2), (8, 2, 3)]


def test_aggregate_fill():
    vals = np.ones((1, 2, 2))
    out = aggregate_array(vals, [(0, 0, 0)], (3, 3, 1), "median", fill=0.0)
    assert out[:2, :2, 0].tolist() == [[1, 1], [1, 1]] and out[2].sum() == 0 and out[:, 2].sum() == 0
    with pytest.raises(CoverageError):
        aggregate_array(vals, [(0, 0, 0)], (3, 3, 1))
