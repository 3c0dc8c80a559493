import numpy as np
import pytest

from scenes import random_scene
from texsplat.adaptation import (AdaptationConfig, adapt_step, aggregate_error, downscale_error,
                                 initial_t2p_exponent, min_texel_size, prune, reallocate_scene, split,
                                 texel_size, top_error_mask)
from texsplat.camera import Camera
from texsplat.geometry import Primitive
from texsplat.scene import Scene
from texsplat.texture import TextureGrid, TexturePool, centered_offset, required_resolution


def _cam(z, f=100.0):
    return Camera(np.eye(3), [0, 0, -z], f, f, 32, 32, 64, 64)


def test_min_texel_size_examples():
    p = Primitive([0, 0, 0], [1, 1], [1, 0, 0, 0], 0.5)
    assert min_texel_size(p, [_cam(-2.0)]) == pytest.approx(0.02)
    assert min_texel_size(p, [_cam(-2.0), _cam(1.0)]) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        min_texel_size(p, [])


def test_texel_size_example():
    p = Primitive([0, 0, 0], [1, 1], [1, 0, 0, 0], 0.5, t2p_exponent=2)
    assert texel_size(p, 0.01) == pytest.approx(0.04)


def test_initial_exponent_respects_floor():
    e = initial_t2p_exponent([[0.1, 0.2], [1e-4, 1.0]], [0.01, 0.01])
    # 0.6 / (8 * 0.01) = 7.5 -> 2^3
    assert list(e) == [3, 1]


def test_downscale_error_examples():
    p = Primitive([0, 0, 0], [0.3, 0.3], [1, 0, 0, 0], 0.5)
    flat = TextureGrid(np.full((8, 8, 3), 0.7), 0.05, centered_offset((8, 8)))
    assert downscale_error(flat, p) == pytest.approx(0.0, abs=1e-15)
    blocks = np.kron(np.random.default_rng(0).normal(0, 1, (4, 4, 3)), np.ones((2, 2, 1)))
    assert downscale_error(TextureGrid(blocks, 0.05, centered_offset((8, 8))), p) < 1e-15
    sign = np.where((np.arange(8)[:, None] + np.arange(8)[None]) % 2 == 0, 1.0, -1.0)
    v = 0.4
    raw = np.log((1 + sign * v) / (1 - sign * v))
    checker = TextureGrid(np.repeat(raw[..., None], 3, axis=2), 0.05, centered_offset((8, 8)))
    assert downscale_error(checker, p) == pytest.approx(v)


def test_aggregate_error_example():
    assert aggregate_error([(1.0, 1.0), (0.0, 1.0)]) == pytest.approx(0.5)
    assert aggregate_error([(1.0, 0.0)]) == 0.0
    out = aggregate_error([(np.array([1.0, 2.0]), np.array([3.0, 0.0])), (np.array([0.0, 4.0]), np.array([1.0, 1.0]))])
    np.testing.assert_allclose(out, [0.75, 4.0])


def test_top_decile_of_ten_is_argmax():
    e = np.arange(10.0)[::-1]
    mask = top_error_mask(e, np.ones(10, bool), 0.9)
    assert mask.sum() == 1 and mask[0]
    assert not top_error_mask(e, np.zeros(10, bool), 0.9).any()


def test_config_validation_and_ramp():
    with pytest.raises(ValueError):
        AdaptationConfig(tau_ds=0)
    with pytest.raises(ValueError):
        AdaptationConfig(quantile=1.0)
    cfg = AdaptationConfig(tau_tr_start=64, tau_tr_end=32, tau_tr_ramp_iters=100)
    assert cfg.tau_tr(0) == 64 and cfg.tau_tr(50) == 48 and cfg.tau_tr(1000) == 32


def _one(texels, t2p, k=0.05, scales=(0.3, 0.3)):
    res = texels.shape[:2]
    grid = TextureGrid(texels, k, centered_offset(res))
    return Scene([[0, 0, 0]], np.log([scales]), [[1, 0, 0, 0]], [0.0], np.zeros((1, 3, 16)), [t2p], [0.01],
                 TexturePool.from_grids([grid]))


def _pad(scene, n):
    # append untextured filler primitives so a quantile has something to rank against
    filler = Scene(np.zeros((n, 3)), np.zeros((n, 2)), np.tile([1.0, 0, 0, 0], (n, 1)), np.zeros(n),
                   np.zeros((n, 3, 16)), np.full(n, 2), np.full(n, 0.01), TexturePool.empty(n))
    return _concat(scene, filler)


def _concat(a, b):
    grids = a.textures.grids() + b.textures.grids()
    return Scene(np.r_[a.means, b.means], np.r_[a.log_scales, b.log_scales], np.r_[a.quats, b.quats],
                 np.r_[a.opacity_logit, b.opacity_logit], np.r_[a.sh, b.sh], np.r_[a.t2p, b.t2p],
                 np.r_[a.k_min, b.k_min], TexturePool.from_grids(grids))


def test_constant_texture_is_downscaled():
    scene = _one(np.full((12, 12, 3), 0.3), 3)
    res = adapt_step(scene, np.zeros(1), AdaptationConfig(), 1000)
    assert res.scene.t2p[0] == 4
    assert res.scene.grid(0).res == (6, 6)
    assert res.scene.grid(0).texel_size == pytest.approx(0.1)
    assert [e["action"] for e in res.log] == ["downscale"]


def test_top_error_at_floor_is_unchanged():
    rng = np.random.default_rng(1)
    top = _one(rng.normal(0, 1, (10, 10, 3)), 1)
    others = _concat(_one(rng.normal(0, 1, (4, 4, 3)), 3), _one(rng.normal(0, 1, (4, 4, 3)), 3))
    scene = _concat(top, others)
    res = adapt_step(scene, np.array([5.0, 0.1, 0.2]), AdaptationConfig(tau_ds=1e-9), 0)
    assert res.scene.t2p[0] == 1
    assert res.scene.grid(0).texels.tobytes() == scene.grid(0).texels.tobytes()
    assert all(e["prim_id"] != 0 for e in res.log)


def test_top_error_upscales_and_splits():
    rng = np.random.default_rng(2)
    big = _one(rng.normal(0, 1, (40, 20, 3)), 3, k=0.02, scales=(0.13, 0.065))
    scene = _concat(big, _concat(_one(rng.normal(0, 1, (4, 4, 3)), 3), _one(rng.normal(0, 1, (4, 4, 3)), 3)))
    cfg = AdaptationConfig(tau_ds=1e-9, tau_tr_start=32, tau_tr_end=32)
    res = adapt_step(scene, np.array([5.0, 0.1, 0.2]), cfg, 0)
    actions = [e["action"] for e in res.log if e["prim_id"] == 0]
    assert actions == ["split", "upscale"]
    assert len(res.scene) == 4
    assert list(res.source) == [-1, -1, 1, 2]  # children start with fresh moments
    assert all(res.scene.t2p[:2] == 2)
    blocked = adapt_step(scene, np.array([5.0, 0.1, 0.2]), cfg, 0, point_budget=3)
    assert len(blocked.scene) == 3
    assert [e["action"] for e in blocked.log if e["prim_id"] == 0] == ["upscale"]


def test_split_constant_texture_children():
    p = Primitive([0, 0, 0], [0.4, 0.2], [1, 0, 0, 0], 0.6, t2p_exponent=2)
    grid = TextureGrid(np.full((96, 48, 3), 0.5), 0.025, centered_offset((96, 48)))
    kids = split(p, grid, [0])
    assert len(kids) == 2
    xs = sorted(c.center[0] for c, _ in kids)
    np.testing.assert_allclose(xs, [-0.4, 0.4])
    for c, g in kids:
        np.testing.assert_allclose(c.scales, [0.2, 0.2])
        assert c.opacity == pytest.approx(0.6 * np.exp(-0.5))
        assert g.texel_size == pytest.approx(0.025)
        assert np.allclose(g.texels, 0.5)
    assert len(split(p, grid, [0, 1])) == 4
    with pytest.raises(ValueError):
        split(p, grid, [])


def test_prune_remaps_texels():
    rng = np.random.default_rng(3)
    scene = random_scene(rng, 8, textured=1.0)
    keep = np.array([1, 0, 1, 1, 0, 0, 1, 1], bool)
    res = prune(scene, keep)
    assert len(res.scene) == 5
    assert list(res.source) == [0, 2, 3, 6, 7]
    np.testing.assert_array_equal(res.scene.textures.data, scene.textures.data[res.texel_source])


def test_reallocate_scene_covers_three_sigma():
    rng = np.random.default_rng(4)
    scene = random_scene(rng, 6, textured=1.0)
    res = reallocate_scene(scene)
    for i in range(6):
        g = res.scene.grid(i)
        assert g.res == required_resolution(scene.scales[i], g.texel_size)
    ok = res.texel_source >= 0
    np.testing.assert_array_equal(res.scene.textures.data[ok], scene.textures.data[res.texel_source[ok]])


def test_refine_off_only_downscales():
    rng = np.random.default_rng(5)
    big = _one(rng.normal(0, 1, (40, 20, 3)), 3, k=0.02, scales=(0.13, 0.065))
    flat = _one(np.full((12, 12, 3), 0.3), 3)
    scene = _concat(big, _concat(flat, _one(rng.normal(0, 1, (4, 4, 3)), 3)))
    cfg = AdaptationConfig(tau_tr_start=32, tau_tr_end=32)
    res = adapt_step(scene, np.array([5.0, 0.1, 0.2]), cfg, 0, refine=False)
    assert len(res.scene) == 3
    assert [(e["prim_id"], e["action"]) for e in res.log] == [(1, "downscale")]
    assert res.scene.grid(0).texels.tobytes() == scene.grid(0).texels.tobytes()
