import numpy as np
import pytest

from texsplat.texture import (MAX_RES, TextureGrid, TexturePool, activate, bilinear_taps, centered_offset,
                              reallocate, reallocate_index, required_resolution, resample_double, resample_half,
                              sample_bilinear, sample_raw, uv_fixed, uv_naive)


def grid_of(texels, k=0.5, offset=None):
    texels = np.asarray(texels, dtype=float)
    return TextureGrid(texels, k, centered_offset(texels.shape[:2]) if offset is None else offset)


def test_uv_fixed():
    g = TextureGrid.zeros((17, 17), 0.5)
    g.offset[:] = 8
    np.testing.assert_allclose(uv_fixed([0, 0], g), [8, 8])
    np.testing.assert_allclose(uv_fixed([1, 0], g), [10, 8])


def test_uv_naive():
    np.testing.assert_allclose(uv_naive([0, 0], 3, 16), [8, 8])
    np.testing.assert_allclose(uv_naive([3, 3], 3, 16), [16, 16])
    np.testing.assert_allclose(uv_naive([-3, -3], 3, 16), [0, 0])


def test_sample_bilinear_examples():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(4, 5, 3))
    t[2, 3] = 0
    g = grid_of(t)
    assert np.all(sample_bilinear(g, [2, 3]) == 0)
    # midway between two texels on the border row: the outside neighbours carry zero weight
    mid = sample_bilinear(g, [0.5, 0])
    np.testing.assert_allclose(mid, (activate(t[0, 0]) + activate(t[1, 0])) / 2)
    assert np.all(sample_bilinear(g, [100, -50]) == 0)
    # half a texel past the edge: zero padding halves the border value
    np.testing.assert_allclose(sample_bilinear(g, [-0.5, 2]), activate(t[0, 2]) / 2)


def test_activate_examples():
    assert activate(0.0) == 0.0
    assert activate(50.0) == pytest.approx(1.0)
    assert activate(1.0) == pytest.approx(0.46212, abs=1e-5)
    np.testing.assert_allclose(activate(np.array([-2.0, 2.0])), [-activate(2.0), activate(2.0)])


def test_required_resolution():
    assert required_resolution(np.array([1.0, 1.0]), 0.5) == (12, 12)
    assert required_resolution(np.array([1.0, 1.0]), 1e-3) == (MAX_RES, MAX_RES)
    assert required_resolution(np.array([0.01, 0.01]), 1.0) == (1, 1)


def test_reallocate_grow_shrink_noop():
    rng = np.random.default_rng(1)
    g = grid_of(rng.normal(size=(8, 8, 3)))
    big = reallocate(g, (12, 12))
    np.testing.assert_array_equal(big.texels[2:10, 2:10], g.texels)
    assert np.all(big.texels[:2] == 0) and np.all(big.texels[:, 10:] == 0)
    small = reallocate(big, (8, 8))
    np.testing.assert_array_equal(small.texels, g.texels)
    np.testing.assert_array_equal(reallocate(g, (8, 8)).texels, g.texels)


def test_reallocate_keeps_world_position():
    rng = np.random.default_rng(2)
    g = grid_of(rng.normal(size=(7, 4, 3)), 0.1)
    for res in ((11, 9), (3, 2), (8, 4), (7, 5)):
        h = reallocate(g, res)
        for p in rng.uniform(-0.4, 0.4, (50, 2)):
            u = uv_fixed(p, h)
            if np.all(u >= 0) and np.all(u <= np.array(h.res) - 1):  # every tap kept by the crop
                np.testing.assert_allclose(sample_raw(h, u), sample_raw(g, uv_fixed(p, g)), atol=1e-12)
        idx = reallocate_index(g, res)
        flat = g.texels.reshape(-1, 3)
        keep = idx >= 0
        np.testing.assert_array_equal(h.texels.reshape(-1, 3)[keep], flat[idx[keep]])
        assert np.all(h.texels.reshape(-1, 3)[~keep] == 0)


def test_resample_examples():
    c = np.full((3, 5, 3), 0.7)
    d = resample_double(grid_of(c))
    assert d.res == (6, 10) and np.all(d.texels == 0.7) and d.texel_size == 0.25
    a, b = 0.3, -1.1
    h = resample_half(grid_of([[[a] * 3, [a] * 3], [[b] * 3, [b] * 3]]))
    assert h.res == (1, 1) and h.texel_size == 1.0
    np.testing.assert_allclose(h.texels[0, 0], (a + b) / 2)


def test_resample_preserves_appearance():
    rng = np.random.default_rng(3)
    g = grid_of(rng.normal(size=(5, 6, 3)), 0.2)
    d = resample_double(g)
    # nearest-neighbour double: samples at the new texel centers equal the old texel under them
    for p in rng.uniform(-0.5, 0.5, (30, 2)):
        u = np.floor(uv_fixed(p, d)) + 0
        world = (u - d.offset) * d.texel_size
        old = np.round(uv_fixed(world, g) - 0.25 + 1e-9).astype(int)  # texel of g containing it
        if np.all(old >= 0) and np.all(old < g.res) and np.all(u >= 0) and np.all(u < d.res):
            np.testing.assert_array_equal(d.texels[int(u[0]), int(u[1])], g.texels[old[0], old[1]])


def test_pool_layout_and_grids():
    rng = np.random.default_rng(4)
    grids = [grid_of(rng.normal(size=(2, 3, 3))), None, grid_of(rng.normal(size=(4, 1, 3)), 0.3)]
    pool = TexturePool.from_grids(grids)
    assert pool.total_texels == 10
    np.testing.assert_array_equal(pool.start, [0, 6, 6])
    np.testing.assert_array_equal(pool.counts, [6, 0, 4])
    assert pool.grid(1) is None and not pool.textured(1)
    np.testing.assert_array_equal(pool.grid(2).texels, grids[2].texels)
    assert pool.grid(2).texel_size == 0.3


def test_bilinear_taps_match_sample():
    rng = np.random.default_rng(5)
    grids = [grid_of(rng.normal(size=(4, 6, 3))), grid_of(rng.normal(size=(3, 2, 3)))]
    pool = TexturePool.from_grids(grids)
    act = np.vstack([pool.activated(), np.zeros((1, 3))])
    for i, g in enumerate(grids):
        u = rng.uniform(-2, 7, (2, 40))
        idx, w = bilinear_taps(u, np.repeat(pool.res[i][:, None], 40, axis=1), np.full(40, pool.start[i]),
                               pool.total_texels)
        got = np.einsum("th,thc->hc", w, act[idx])
        want = np.array([sample_bilinear(g, u[:, j]) for j in range(40)])
        np.testing.assert_allclose(got, want, atol=1e-14)


def test_reallocate_rejects_bad_resolution():
    with pytest.raises(ValueError):
        reallocate(TextureGrid.zeros((2, 2), 1.0), (0, 3))
    with pytest.raises(ValueError):
        reallocate(TextureGrid.zeros((2, 2), 1.0), (MAX_RES + 1, 3))
