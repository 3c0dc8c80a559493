"""Forward image formation for textured surfels.

Every pixel casts one ray through its center.  Hits are found with the plane
equation evaluated in camera space, culled to the +-3 sigma box of each
surfel, sorted per ray by ``t`` and composited front to back.  Pixels are
processed in bands of tile rows; results do not depend on the band size.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .geometry import PARALLEL_EPS, T_NEAR, sh_basis, sh_color
from .scene import Scene
from .texture import bilinear_taps

CUTOFF = 3.0
T_MIN = 1e-4
TILE = 8  # pixel rows per band; small bands keep per-hit arrays in cache


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3), clamped to [0, 1]
    contribution: np.ndarray  # per-primitive sum of w over pixels
    error: np.ndarray = None  # per-primitive sum of E(r) w(r), when a reference was given
    raw: np.ndarray = None  # (H, W, 3) before clamping
    transmittance: np.ndarray = None  # (H, W) T after the last blended hit
    weight_sum: np.ndarray = None  # (H, W) sum of w
    hits: list = field(default_factory=list, repr=False)
    stats: dict = field(default_factory=dict)  # loss terms, filled by the backward pass


def composite(hits, t_min: float = T_MIN):
    """Front-to-back blend of a sorted hit list.

    ``hits`` is a sequence of ``(opacity, falloff, color)``.  Returns the
    unclamped color, per-hit weights and the final transmittance.
    """
    color = np.zeros(3)
    weights = []
    trans = 1.0
    for o, g, c in hits:
        if trans < t_min:
            weights.append(0.0)
            continue
        a = o * g
        w = trans * a
        color = color + w * np.asarray(c, dtype=float)
        weights.append(w)
        trans *= 1.0 - a
    return color, np.array(weights), trans


def shade(sh, direction, texture_sample) -> np.ndarray:
    """Surfel color along a ray: SH term plus activated texture offset."""
    return sh_color(sh, direction) + np.asarray(texture_sample, dtype=float)


class _Prepared:
    """Per-camera quantities shared by all pixel bands."""

    def __init__(self, scene: Scene, cam: Camera):
        self.cam = cam
        self.n_total = len(scene)
        rot_w = scene.rotmats
        self.rot_c = np.einsum("ij,njk->nik", cam.rotation, rot_w)
        self.mu_c = scene.means @ cam.rotation.T + cam.translation
        self.rot_t = self.rot_c.transpose(1, 2, 0).copy()
        self.mu_t = self.mu_c.T.copy()
        self.scales = scene.scales
        self.visible = self._visible()
        v = self.visible
        self.rot_c_v = self.rot_c[v]
        self.mu_c_v = self.mu_c[v]
        self.normal = self.rot_c_v[:, :, 2]
        self.num = np.einsum("ni,ni->n", self.normal, self.mu_c_v)
        self.b0 = np.einsum("ni,ni->n", self.rot_c_v[:, :, 0], self.mu_c_v)
        self.b1 = np.einsum("ni,ni->n", self.rot_c_v[:, :, 1], self.mu_c_v)
        self.scales_v = self.scales[v]
        self.opacity = scene.opacities
        self.sh = scene.sh
        pool = scene.textures
        # trailing zero row: target of every out-of-grid tap
        self.pad = pool.total_texels
        self.act_t = np.vstack([pool.activated(), np.zeros((1, 3))]).T.copy()
        self.pool_start = pool.start
        self.res_t = pool.res.T.copy()
        self.texel_size = pool.texel_size
        self.offset_t = pool.offset.T.copy()
        self.scales_t = self.scales.T.copy()

    def _visible(self) -> np.ndarray:
        """Indices of surfels whose +-3 sigma rectangle can cover a pixel center."""
        n = self.n_total
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        cam = self.cam
        corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float) * CUTOFF
        ext = corners[None, :, :] * self.scales[:, None, :]
        pts = self.mu_c[:, None, :] + ext[..., 0:1] * self.rot_c[:, None, :, 0] + ext[..., 1:2] * self.rot_c[:, None, :, 1]
        z = pts[..., 2]
        keep = np.any(z > 0, axis=1)
        all_front = np.all(z > 0, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            px = cam.fx * pts[..., 0] / z + cam.cx
            py = cam.fy * pts[..., 1] / z + cam.cy
        off = (np.all(px < 0, axis=1) | np.all(px > cam.width, axis=1)
               | np.all(py < 0, axis=1) | np.all(py > cam.height, axis=1))
        keep &= ~(all_front & off)
        return np.nonzero(keep)[0]


class _Band:
    """Forward state of one band of pixels, kept for the backward pass.

    Sorting and the transmittance scan use a padded ``(pixels, slots)``
    layout; everything after that works on the flat list of active hits
    (``pix``, ``slot``, ``prim`` and per-hit arrays of matching length).
    """

    def __init__(self, prep: _Prepared, dirs_c: np.ndarray, dirs_w: np.ndarray):
        self.dirs_c = dirs_c
        self.n_pix = n_pix = len(dirs_c)
        nv = len(prep.visible)
        self.slots = 0
        if nv == 0:
            self._empty(n_pix)
            return
        den = dirs_c @ prep.normal.T
        ok = np.abs(den) > PARALLEL_EPS
        safe = np.where(ok, den, 1.0)
        t = prep.num / safe
        ok &= t > T_NEAR
        a0 = dirs_c @ prep.rot_c_v[:, :, 0].T
        a1 = dirs_c @ prep.rot_c_v[:, :, 1].T
        pc0 = (t * a0 - prep.b0) / prep.scales_v[:, 0]
        pc1 = (t * a1 - prep.b1) / prep.scales_v[:, 1]
        ok &= (np.abs(pc0) <= CUTOFF) & (np.abs(pc1) <= CUTOFF)

        k = int(ok.sum(axis=1).max()) if n_pix else 0
        if k == 0:
            self._empty(n_pix)
            return
        key = np.where(ok, t, np.inf)
        if k < nv:
            part = np.argpartition(key, k - 1, axis=1)[:, :k]
            order = np.take_along_axis(part, np.argsort(np.take_along_axis(key, part, axis=1), axis=1, kind="stable"), axis=1)
        else:
            order = np.argsort(key, axis=1, kind="stable")
        valid = np.take_along_axis(ok, order, axis=1)
        g2 = np.take_along_axis(pc0 * pc0 + pc1 * pc1, order, axis=1)
        o = prep.opacity[prep.visible[order]]
        alpha = np.where(valid, o * np.exp(-0.5 * np.where(valid, g2, 0.0)), 0.0)
        trans = np.ones_like(alpha)
        np.cumprod(1.0 - alpha[:, :-1], axis=1, out=trans[:, 1:])
        active = valid & (trans >= T_MIN)
        self.slots = k

        pix, slot = np.nonzero(active)
        loc = order[pix, slot]  # index into the visible list
        flat = pix * nv + loc
        self.pix, self.slot, self.loc = pix, slot, loc
        self.prim = prim = prep.visible[loc]
        # per-hit arrays are component-first: (components, H)
        self.t = t.ravel().take(flat)
        self.den = safe.ravel().take(flat)
        self.a = np.stack([a0.ravel().take(flat), a1.ravel().take(flat)])
        self.pc = np.stack([pc0.ravel().take(flat), pc1.ravel().take(flat)])
        self.pl = self.pc * prep.scales_t[:, prim]
        self.o = prep.opacity[prim]
        self.g = np.exp(-0.5 * (self.pc[0] ** 2 + self.pc[1] ** 2))
        self.alpha = self.o * self.g
        self.trans = trans[pix, slot]
        self.w = self.trans * self.alpha
        self.alpha_grid = np.where(active, alpha, 0.0)
        self.trans_grid = trans

        self.basis = sh_basis(dirs_w)
        sh_v = prep.sh[prep.visible]
        color = np.stack([(self.basis @ sh_v[:, c, :].T).ravel().take(flat) for c in range(3)])
        self.k_i = prep.texel_size[prim]
        u = self.pl / self.k_i + prep.offset_t[:, prim]
        self.tap_index, self.tap_weight = bilinear_taps(u, prep.res_t[:, prim], prep.pool_start[prim], prep.pad)
        self.frac = u - np.floor(u)
        self.taps = prep.act_t.take(self.tap_index, axis=1)  # (3, 4, H)
        color += np.einsum("th,cth->ch", self.tap_weight, self.taps)
        self.color = color

        wc = self.w * color
        self.rgb = np.stack([np.bincount(pix, weights=wc[c], minlength=n_pix) for c in range(3)], axis=1)
        self.t_final = np.prod(1.0 - self.alpha_grid, axis=1)
        self.weight_sum = np.bincount(pix, weights=self.w, minlength=n_pix)

    def _empty(self, n_pix):
        self.pix = np.zeros(0, dtype=np.int64)
        self.prim = np.zeros(0, dtype=np.int64)
        self.w = np.zeros(0)
        self.rgb = np.zeros((n_pix, 3))
        self.t_final = np.ones(n_pix)
        self.weight_sum = np.zeros(n_pix)


def _bands(cam: Camera, tile: int):
    rows = max(1, tile)
    dirs_c = cam.camera_dirs()
    dirs_w = dirs_c @ cam.rotation
    w = cam.width
    for y0 in range(0, cam.height, rows):
        sl = slice(y0 * w, min(cam.height, y0 + rows) * w)
        yield dirs_c[sl], dirs_w[sl]


def rasterize(scene: Scene, cam: Camera, *, tile: int = TILE, keep_state: bool = False) -> RenderOutput:
    prep = _Prepared(scene, cam)
    bands = [_Band(prep, dc, dw) for dc, dw in _bands(cam, tile)]
    rgb = np.concatenate([b.rgb for b in bands]).reshape(cam.height, cam.width, 3)
    contrib = np.zeros(len(scene))
    for b in bands:
        if b.w.size:
            contrib += np.bincount(b.prim, weights=b.w, minlength=len(scene))
    out = RenderOutput(
        image=np.clip(rgb, 0.0, 1.0),
        contribution=contrib,
        raw=rgb,
        transmittance=np.concatenate([b.t_final for b in bands]).reshape(cam.height, cam.width),
        weight_sum=np.concatenate([b.weight_sum for b in bands]).reshape(cam.height, cam.width),
    )
    if keep_state:
        out.hits = [prep] + bands
    return out


def render(scene: Scene, cam: Camera, reference: np.ndarray | None = None, *, tile: int = TILE) -> RenderOutput:
    """Render ``scene`` from ``cam``; with a reference also fill per-primitive errors."""
    out = rasterize(scene, cam, tile=tile, keep_state=reference is not None)
    if reference is not None:
        error_accumulate(out, reference)
        out.hits = []
    return out


def error_accumulate(out: RenderOutput, reference: np.ndarray):
    """Per-primitive ``sum_r E(r) w_i(r)`` and ``sum_r w_i(r)``.

    ``E(r)`` is the mean absolute RGB error of the clamped render at pixel ``r``.
    ``out`` must come from :func:`rasterize` with ``keep_state=True``.
    """
    reference = np.asarray(reference, dtype=float)
    if reference.shape != out.image.shape:
        raise ValueError(f"reference shape {reference.shape} != render shape {out.image.shape}")
    if not out.hits:
        raise ValueError("render output carries no hit state; use rasterize(..., keep_state=True)")
    err_px = np.abs(out.image - reference).mean(axis=2).ravel()
    n = len(out.contribution)
    err = np.zeros(n)
    row = 0
    for band in out.hits[1:]:
        if band.w.size:
            e = err_px[row + band.pix] * band.w
            err += np.bincount(band.prim, weights=e, minlength=n)
        row += band.n_pix
    out.error = err
    return err, out.contribution
