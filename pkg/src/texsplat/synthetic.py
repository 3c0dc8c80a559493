"""Procedural test scenes with oracle-rendered reference images.

Every scene is built from planar surfels that the model can represent
exactly: huge, nearly opaque surfels act as walls or quads, smaller ones
as soft-edged panels.  References come from :mod:`texsplat.oracle`.
"""
from __future__ import annotations

import copy
from functools import lru_cache

import numpy as np

from .camera import Camera
from .geometry import SH_C0, logit, rotmat_to_quat
from .oracle import trace_image
from .scene import Scene
from .scene_io import Dataset
from .texture import TextureGrid, TexturePool, centered_offset

SPECS = ("textured-quad", "two-quads-occlusion", "half-flat-half-noise", "box-room")
OPAQUE = 30.0  # opacity logit; sigmoid(30) = 1 - 9.4e-14
HUGE = 100.0


class _Builder:
    def __init__(self):
        self.rows = []

    def add(self, center, u_axis, v_axis, scales, opacity_logit, base, texture=None, extent=None, k=None):
        """``texture(x, y) -> (..., 3)`` color offsets in (-1, 1) over ``+-extent``."""
        u_axis = np.asarray(u_axis, dtype=float) / np.linalg.norm(u_axis)
        v_axis = np.asarray(v_axis, dtype=float)
        v_axis = v_axis - u_axis * (u_axis @ v_axis)
        v_axis /= np.linalg.norm(v_axis)
        rot = np.stack([u_axis, v_axis, np.cross(u_axis, v_axis)], axis=1)
        sh = np.zeros((3, 16))
        sh[:, 0] = np.asarray(base, dtype=float) / SH_C0
        grid = None
        if texture is not None:
            res = tuple(int(round(2 * e / k)) for e in extent)
            off = centered_offset(res)
            x = (np.arange(res[0]) - off[0]) * k
            y = (np.arange(res[1]) - off[1]) * k
            vals = np.clip(texture(x[:, None], y[None, :]), -0.999, 0.999)
            grid = TextureGrid(logit((vals + 1.0) / 2.0), k, off)
        self.rows.append((np.asarray(center, dtype=float), np.log(np.asarray(scales, dtype=float)),
                          rotmat_to_quat(rot), float(opacity_logit), sh, grid))

    def scene(self) -> Scene:
        m, s, q, o, sh, g = zip(*self.rows)
        k_min = [0.0 if gr is None else gr.texel_size for gr in g]
        scene = Scene(np.array(m), np.array(s), np.array(q), np.array(o), np.array(sh),
                      np.zeros(len(m), dtype=np.int64), k_min, TexturePool.from_grids(list(g)))
        return scene


def ring_cameras(n, radius, height, target, *, fov=40.0, size=64, phase=0.0):
    cams = []
    for i in range(n):
        a = phase + 2 * np.pi * i / n
        eye = np.array([radius * np.cos(a), radius * np.sin(a), height])
        cams.append(Camera.look_at(eye, target, (0, 0, 1), fov_deg=fov, width=size, height=size))
    return cams


def _plane_points(rng, n, half):
    side = int(np.ceil(np.sqrt(n)))
    g = (np.arange(side) + 0.5) / side * 2 - 1
    xx, yy = np.meshgrid(g * half, g * half, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)[:n]
    pts[:, :2] += rng.uniform(-0.15, 0.15, (len(pts), 2)) * (2 * half / side)
    return pts, np.tile([0.0, 0.0, 1.0], (len(pts), 1))


def _smooth_pattern(rng):
    ph = rng.uniform(0, 2 * np.pi, (3, 3))

    def f(x, y):
        out = []
        for c in range(3):
            out.append(0.22 * np.sin(2 * np.pi * x / 1.3 + ph[c, 0]) * np.cos(2 * np.pi * y / 1.7 + ph[c, 1])
                       + 0.12 * np.sin(2 * np.pi * (x + 0.6 * y) / 0.9 + ph[c, 2]))
        return np.stack(np.broadcast_arrays(*out), axis=-1)
    return f


def _textured_quad(rng, n_views, size):
    b = _Builder()
    b.add([0, 0, 0], [1, 0, 0], [0, 1, 0], [HUGE, HUGE], OPAQUE, [0.5, 0.45, 0.4],
          _smooth_pattern(rng), (1.6, 1.6), 1 / 40)
    cams = ring_cameras(n_views, 1.25, 2.15, [0, 0, 0], size=size)
    pts, nrm = _plane_points(rng, 64, 1.1)
    return b.scene(), cams, pts, nrm, np.array([[-1.6, -1.6, -0.05], [1.6, 1.6, 0.05]])


def _half_flat_half_noise(rng, n_views, size):
    cell = 0.08
    k = 0.04
    ncell = int(round(3.2 / cell))
    noise = rng.uniform(-0.3, 0.3, (ncell, ncell, 3))

    def tex(x, y):
        x, y = np.broadcast_arrays(x, y)
        i = np.clip(((x + 1.6) / cell).astype(int), 0, ncell - 1)
        j = np.clip(((y + 1.6) / cell).astype(int), 0, ncell - 1)
        return np.where((x >= 0)[..., None], noise[i, j], 0.0)

    b = _Builder()
    b.add([0, 0, 0], [1, 0, 0], [0, 1, 0], [HUGE, HUGE], OPAQUE, [0.55, 0.45, 0.4], tex, (1.6, 1.6), k)
    cams = ring_cameras(n_views, 1.25, 2.15, [0, 0, 0], size=size)
    pts, nrm = _plane_points(rng, 64, 1.1)
    return b.scene(), cams, pts, nrm, np.array([[-1.6, -1.6, -0.05], [1.6, 1.6, 0.05]])


def _two_quads(rng, n_views, size):
    b = _Builder()
    b.add([0, 0, 0], [1, 0, 0], [0, 1, 0], [HUGE, HUGE], 0.0, [0.2, 0.4, 0.8])
    b.add([0, 0, 0.6], [1, 0, 0], [0, 1, 0], [0.5, 0.5], 0.0, [0.9, 0.5, 0.1])
    cams = ring_cameras(n_views, 1.25, 2.75, [0, 0, 0.6], size=size)
    pts, nrm = _plane_points(rng, 36, 1.0)
    front = pts[::3].copy()
    front[:, :2] *= 0.5
    front[:, 2] = 0.6
    pts = np.concatenate([pts, front])
    nrm = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    return b.scene(), cams, pts, nrm, np.array([[-1.2, -1.2, 0.0], [1.2, 1.2, 0.6]])


def _box_room(rng, n_views, size):
    lx, ly, lz = 2.0, 2.0, 2.5
    k = 1 / 32
    ph = rng.uniform(0, 2 * np.pi, 4)

    def checker(x, y):
        s = np.sin(np.pi * x / 0.5) * np.sin(np.pi * y / 0.5)
        v = 0.25 * np.tanh(3 * s)
        return np.stack(np.broadcast_arrays(v, 0.8 * v, 0.6 * v), axis=-1)

    def stripes(period, phase):
        def f(x, y):
            v = 0.2 * np.sin(2 * np.pi * x / period + phase) + 0.0 * y
            return np.stack(np.broadcast_arrays(v, -0.5 * v, 0.3 * v), axis=-1)
        return f

    def blobs(x, y):
        v = 0.3 * np.cos(2 * np.pi * x / 0.35) * np.cos(2 * np.pi * y / 0.35)
        return np.stack(np.broadcast_arrays(v, v * 0.2, -v), axis=-1)

    b = _Builder()
    b.add([0, 0, 0], [1, 0, 0], [0, 1, 0], [50, 50], OPAQUE, [0.45, 0.4, 0.35], checker, (lx, ly), k)
    b.add([0, 0, lz], [1, 0, 0], [0, -1, 0], [50, 50], OPAQUE, [0.8, 0.8, 0.78])
    b.add([lx, 0, lz / 2], [0, 1, 0], [0, 0, -1], [50, 50], OPAQUE, [0.6, 0.5, 0.4],
          stripes(0.8, ph[0]), (ly, lz / 2), k)
    b.add([-lx, 0, lz / 2], [0, -1, 0], [0, 0, -1], [50, 50], OPAQUE, [0.4, 0.5, 0.6],
          stripes(0.6, ph[1]), (ly, lz / 2), k)
    b.add([0, ly, lz / 2], [-1, 0, 0], [0, 0, -1], [50, 50], OPAQUE, [0.5, 0.6, 0.45],
          stripes(1.0, ph[2]), (lx, lz / 2), k)
    b.add([0, -ly, lz / 2], [1, 0, 0], [0, 0, -1], [50, 50], OPAQUE, [0.6, 0.45, 0.5],
          stripes(0.7, ph[3]), (lx, lz / 2), k)
    # a painting and a free-standing panel
    b.add([0.4, ly - 0.05, 1.4], [-1, 0, 0], [0, 0, -1], [0.3, 0.22], OPAQUE, [0.3, 0.3, 0.5],
          blobs, (0.9, 0.66), k)
    b.add([0.2, -0.3, 0.9], [0.8, 0.6, 0], [0, 0, -1], [0.3, 0.35], 3.0, [0.65, 0.3, 0.35],
          blobs, (0.9, 1.05), k)
    cams = []
    for i in range(n_views):
        a = 2 * np.pi * i / n_views
        eye = np.array([1.2 * np.cos(a), 1.2 * np.sin(a), 1.3])
        target = np.array([-1.5 * np.cos(a), -1.5 * np.sin(a), 0.9])
        cams.append(Camera.look_at(eye, target, (0, 0, 1), fov_deg=70.0, width=size, height=size))
    faces = [
        ([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], (lx, ly), 5),
        ([0, 0, lz], [1, 0, 0], [0, 1, 0], [0, 0, -1], (lx, ly), 5),
        ([lx, 0, lz / 2], [0, 1, 0], [0, 0, 1], [-1, 0, 0], (ly, lz / 2), 4),
        ([-lx, 0, lz / 2], [0, 1, 0], [0, 0, 1], [1, 0, 0], (ly, lz / 2), 4),
        ([0, ly, lz / 2], [1, 0, 0], [0, 0, 1], [0, -1, 0], (lx, lz / 2), 4),
        ([0, -ly, lz / 2], [1, 0, 0], [0, 0, 1], [0, 1, 0], (lx, lz / 2), 4),
        # painting (just off the wall) and panel, as 2x2 patches
        ([0.4, ly - 0.06, 1.4], [-1, 0, 0], [0, 0, -1], [0, -1, 0], (0.3, 0.22), 2),
        ([0.2, -0.3, 0.9], [0.8, 0.6, 0], [0, 0, -1], [0.6, -0.8, 0], (0.3, 0.35), 2),
    ]
    pts, nrm = [], []
    for c, u, v, n, (eu, ev), side in faces:
        g = (np.arange(side) + 0.5) / side * 2 - 1
        for su in g:
            for sv in g:
                pts.append(np.add(c, np.multiply(u, su * eu) + np.multiply(v, sv * ev)))
                nrm.append(n)
    pts = np.array(pts, dtype=float)
    pts += rng.normal(0, 0.02, pts.shape)
    return b.scene(), cams, pts, np.array(nrm, dtype=float), np.array([[-lx, -ly, 0], [lx, ly, lz]])


_BUILDERS = {
    "textured-quad": _textured_quad,
    "two-quads-occlusion": _two_quads,
    "half-flat-half-noise": _half_flat_half_noise,
    "box-room": _box_room,
}


def ground_truth(name: str, n_views: int = 8, size: int = 64, seed: int = 0):
    """``(scene, cameras, points, normals, bbox)`` without rendering."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown synthetic spec {name!r}; choose from {', '.join(SPECS)}")
    return _BUILDERS[name](np.random.default_rng(seed), n_views, size)


@lru_cache(maxsize=16)
def _cached(name, n_views, size, seed):
    scene, cams, pts, nrm, bbox = ground_truth(name, n_views, size, seed)
    images = [trace_image(scene, c)[0] for c in cams]
    test = [i for i in range(n_views) if i % 4 == 3] if n_views >= 4 else []
    train = [i for i in range(n_views) if i not in test]
    return Dataset(cams, images, train, test, pts, nrm, bbox, name), scene


def make_synthetic(name: str, n_views: int = 8, size: int = 64, seed: int = 0):
    """Dataset of oracle renders plus the ground-truth scene.

    Views are numbered around a ring; every fourth view (3, 7, ...) is held out.
    """
    if name not in _BUILDERS:
        raise ValueError(f"unknown synthetic spec {name!r}; choose from {', '.join(SPECS)}")
    ds, scene = _cached(name, int(n_views), int(size), int(seed))
    return copy.deepcopy(ds), scene.copy()
