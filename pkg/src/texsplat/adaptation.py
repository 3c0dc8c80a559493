"""Content-aware texel size control and resolution-aware splitting.

Each adaptation pass ranks primitives by their contribution-weighted image
error.  High-error primitives get smaller texels (upscale); if their texture
still overflows ``tau_tr`` texels along an axis they are split along that
axis.  Primitives whose texture survives a 2x box filter almost unchanged
get larger texels (downscale).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Primitive, logit, sigmoid
from .scene import Scene
from .texture import (
    MAX_RES,
    TextureGrid,
    TexturePool,
    activate,
    centered_offset,
    reallocate,
    reallocate_index,
    required_resolution,
    resample_double,
    resample_half,
)

G1 = float(np.exp(-0.5))


@dataclass
class AdaptationConfig:
    tau_ds: float = 0.01
    quantile: float = 0.9
    tau_tr_start: int = 64
    tau_tr_end: int = 32
    tau_tr_ramp_iters: int = 7000
    t2p_floor_exponent: int = 1

    def __post_init__(self):
        if self.tau_ds <= 0:
            raise ValueError("tau_ds must be positive")
        if not 0 < self.quantile < 1:
            raise ValueError("quantile must lie in (0, 1)")

    def tau_tr(self, iteration: int) -> float:
        """Resolution threshold, linear from start to end over the ramp."""
        if self.tau_tr_ramp_iters <= 0:
            return float(self.tau_tr_end)
        f = min(max(iteration, 0) / self.tau_tr_ramp_iters, 1.0)
        return self.tau_tr_start + f * (self.tau_tr_end - self.tau_tr_start)


def min_texel_size(prim, cams) -> float:
    """Pixel footprint back-projected at the primitive center from the closest camera."""
    center = prim.center if isinstance(prim, Primitive) else np.asarray(prim, dtype=float)
    return float(min_texel_sizes(center[None], cams)[0])


def min_texel_sizes(centers: np.ndarray, cams) -> np.ndarray:
    if not cams:
        raise ValueError("need at least one camera")
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    dist = np.stack([np.linalg.norm(centers - c.center, axis=1) for c in cams])
    focal = np.array([max(c.fx, c.fy) for c in cams])
    best = np.argmin(dist, axis=0)
    return dist[best, np.arange(len(centers))] / focal[best]


def texel_size(prim, k_min: float) -> float:
    e = prim.t2p_exponent if isinstance(prim, Primitive) else int(prim)
    return float(k_min * 2.0 ** e)


def initial_t2p_exponent(scales: np.ndarray, k_min: np.ndarray, texels: int = 8, floor: int = 1) -> np.ndarray:
    """Power-of-two ratio giving the smallest +-3 sigma axis about ``texels`` texels."""
    smallest = 6.0 * np.min(np.asarray(scales, dtype=float).reshape(-1, 2), axis=1)
    e = np.round(np.log2(smallest / (texels * np.asarray(k_min, dtype=float))))
    return np.maximum(e, floor).astype(np.int64)


def lowpass(grid: TextureGrid) -> np.ndarray:
    """Pre-activation texels after a 2x box filter, on the original lattice."""
    ru, rv = grid.res
    return resample_double(resample_half(grid)).texels[:ru, :rv]


def downscale_error(grid: TextureGrid, prim) -> float:
    """Falloff-weighted mean of ``|act(T) - act(lowpass(T))|`` (channel mean)."""
    scales = prim.scales if isinstance(prim, Primitive) else np.asarray(prim, dtype=float)
    ru, rv = grid.res
    diff = np.abs(activate(grid.texels) - activate(lowpass(grid))).mean(axis=2)
    iu = (np.arange(ru) - grid.offset[0]) * grid.texel_size / scales[0]
    iv = (np.arange(rv) - grid.offset[1]) * grid.texel_size / scales[1]
    g = np.exp(-0.5 * (iu[:, None] ** 2 + iv[None, :] ** 2))
    return float((g * diff).sum() / g.sum())


def aggregate_error(per_view) -> float | np.ndarray:
    """Contribution-weighted mean over views of per-view errors.

    ``per_view`` is a sequence of ``(E, w)`` pairs (scalars or per-primitive
    arrays).  Entries with zero total contribution get 0.
    """
    e = np.array([np.asarray(p[0], dtype=float) for p in per_view])
    w = np.array([np.asarray(p[1], dtype=float) for p in per_view])
    num = (e * w).sum(axis=0)
    den = w.sum(axis=0)
    out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def top_error_mask(errors: np.ndarray, eligible: np.ndarray, quantile: float) -> np.ndarray:
    errors = np.asarray(errors, dtype=float)
    eligible = np.asarray(eligible, dtype=bool)
    mask = np.zeros(len(errors), dtype=bool)
    if eligible.any():
        q = np.quantile(errors[eligible], quantile)
        mask = eligible & (errors > q)
    return mask


@dataclass
class _Entry:
    """Row of the rebuilt scene; ``source`` is the old index or -1 for new."""

    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logit: float
    sh: np.ndarray
    t2p: int
    k_min: float
    grid: TextureGrid | None
    source: int
    texel_source: np.ndarray | None = None


@dataclass
class AdaptResult:
    scene: Scene
    log: list = field(default_factory=list)
    source: np.ndarray = None  # old primitive index per new primitive, -1 if new
    texel_source: np.ndarray = None  # old pool row per new pool row, -1 if new


def _entry(scene: Scene, i: int, grid) -> _Entry:
    return _Entry(scene.means[i].copy(), scene.log_scales[i].copy(), scene.quats[i].copy(),
                  float(scene.opacity_logit[i]), scene.sh[i].copy(), int(scene.t2p[i]), float(scene.k_min[i]),
                  grid, i)


def split_entry(e: _Entry, axes) -> list:
    """Children of one primitive split along ``axes`` (1 axis: 2 children, both: 4)."""
    axes = sorted(set(int(a) for a in axes))
    if not axes:
        raise ValueError("split needs at least one axis")
    rot = Primitive(e.means, np.exp(e.log_scales), e.quats, 0.5).rotmat
    scales = np.exp(e.log_scales)
    child_scales = scales.copy()
    for a in axes:
        child_scales[a] = scales[a] / 2.0
    child_logit = float(logit(G1 * sigmoid(e.opacity_logit)))
    signs = [(s,) for s in (-1.0, 1.0)] if len(axes) == 1 else [(s0, s1) for s0 in (-1.0, 1.0) for s1 in (-1.0, 1.0)]
    children = []
    for sgn in signs:
        local = np.zeros(2)
        for a, s in zip(axes, sgn):
            local[a] = s * scales[a]
        center = e.means + local[0] * rot[:, 0] + local[1] * rot[:, 1]
        grid = None
        if e.grid is not None:
            grid = _child_grid(e.grid, local, child_scales)
        children.append(_Entry(center, np.log(child_scales), e.quats.copy(), child_logit, e.sh.copy(),
                               e.t2p, e.k_min, grid, -1))
    return children


def _child_grid(parent: TextureGrid, local_shift: np.ndarray, child_scales: np.ndarray) -> TextureGrid:
    k = parent.texel_size
    res = required_resolution(child_scales, k)
    off = centered_offset(res)
    iu = np.arange(res[0]) - off[0]
    iv = np.arange(res[1]) - off[1]
    # child texel centers in the parent's texture coordinates
    pu = iu + local_shift[0] / k + parent.offset[0]
    pv = iv + local_shift[1] / k + parent.offset[1]
    return TextureGrid(_bilerp_raw(parent.texels, pu, pv), k, off)


def _bilerp_raw(texels: np.ndarray, pu: np.ndarray, pv: np.ndarray) -> np.ndarray:
    ru, rv = texels.shape[:2]
    padded = np.pad(texels, ((1, 1), (1, 1), (0, 0)))
    u = np.clip(pu + 1, 0, ru + 1)
    v = np.clip(pv + 1, 0, rv + 1)
    i0 = np.clip(np.floor(u).astype(int), 0, ru)
    j0 = np.clip(np.floor(v).astype(int), 0, rv)
    fu = (u - i0)[:, None, None]
    fv = (v - j0)[None, :, None]
    a = padded[i0][:, j0]
    b = padded[i0 + 1][:, j0]
    c = padded[i0][:, j0 + 1]
    d = padded[i0 + 1][:, j0 + 1]
    return (1 - fu) * (1 - fv) * a + fu * (1 - fv) * b + (1 - fu) * fv * c + fu * fv * d


def split(prim: Primitive, grid: TextureGrid | None, axes, k_min: float = 0.0) -> list:
    """Split a single primitive; returns ``[(Primitive, TextureGrid | None), ...]``."""
    e = _Entry(prim.center, np.log(prim.scales), prim.rotation, float(logit(prim.opacity)), prim.sh,
               prim.t2p_exponent, k_min, grid, -1)
    out = []
    for c in split_entry(e, axes):
        out.append((Primitive(c.means, np.exp(c.log_scales), c.quats, float(sigmoid(c.opacity_logit)), c.sh, c.t2p),
                    c.grid))
    return out


def upscale_grid(grid: TextureGrid) -> TextureGrid:
    g = resample_double(grid)
    if max(g.res) > MAX_RES:
        g = reallocate(g, (min(g.res[0], MAX_RES), min(g.res[1], MAX_RES)))
    return g


def _upscale(e: _Entry) -> None:
    e.t2p -= 1
    if e.grid is not None:
        e.grid = upscale_grid(e.grid)
    e.texel_source = None


def _downscale(e: _Entry) -> None:
    e.t2p += 1
    if e.grid is not None:
        e.grid = resample_half(e.grid)
    e.texel_source = None


def adapt_step(scene: Scene, errors: np.ndarray, cfg: AdaptationConfig, iteration: int, *,
               eligible: np.ndarray | None = None, point_budget: int | None = None,
               refine: bool = True) -> AdaptResult:
    """One pass of split / upscale / downscale over all textured primitives.

    Primitives are visited in ascending index order.  Splitting is skipped
    once it would push the primitive count above ``point_budget``.  With
    ``refine=False`` only downscales run (top-error primitives are still
    left alone).
    """
    n = len(scene)
    errors = np.asarray(errors, dtype=float)
    eligible = np.ones(n, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
    top = top_error_mask(errors, eligible, cfg.quantile)
    tau = cfg.tau_tr(iteration)
    floor = cfg.t2p_floor_exponent
    grids = scene.textures.grids()
    scales = scene.scales
    count = n
    log = []
    out = []
    for i in range(n):
        e = _entry(scene, i, grids[i])
        if e.grid is not None:
            e.texel_source = np.arange(e.grid.n_texels)
        if e.grid is None:
            out.append(e)
            continue
        group = [e]
        over = [a for a in (0, 1) if e.grid.res[a] > tau]
        if over and top[i] and refine:
            n_children = 2 ** len(over)
            if point_budget is None or count + n_children - 1 <= point_budget:
                group = split_entry(e, over)
                count += n_children - 1
                log.append({"iter": iteration, "prim_id": i, "action": "split",
                            "detail": {"axes": over, "children": n_children, "res": list(e.grid.res)}})
        if e.t2p > floor and top[i] and refine:
            for c in group:
                _upscale(c)
            log.append({"iter": iteration, "prim_id": i, "action": "upscale",
                        "detail": {"t2p_exponent": group[0].t2p, "primitives": len(group)}})
        elif not top[i] and e.grid.res != (1, 1):
            ed = downscale_error(e.grid, scales[i])
            if ed < cfg.tau_ds:
                _downscale(e)
                log.append({"iter": iteration, "prim_id": i, "action": "downscale",
                            "detail": {"t2p_exponent": e.t2p, "E_d": ed}})
        out.extend(group)
    return _assemble(scene, out, log)


def _assemble(old: Scene, entries: list, log: list) -> AdaptResult:
    if not entries:
        return AdaptResult(Scene.empty(), log, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    pool = TexturePool.from_grids([e.grid for e in entries])
    scene = Scene(
        np.array([e.means for e in entries]), np.array([e.log_scales for e in entries]),
        np.array([e.quats for e in entries]), np.array([e.opacity_logit for e in entries]),
        np.array([e.sh for e in entries]), np.array([e.t2p for e in entries]),
        np.array([e.k_min for e in entries]), pool,
    )
    texel_src = np.full(pool.total_texels, -1, dtype=np.int64)
    for j, e in enumerate(entries):
        if e.texel_source is not None and e.source >= 0 and e.grid is not None:
            s = pool.start[j]
            base = old.textures.start[e.source]
            src = e.texel_source
            texel_src[s:s + len(src)] = np.where(src >= 0, base + src, -1)
    source = np.array([e.source for e in entries], dtype=np.int64)
    return AdaptResult(scene, log, source, texel_src)


def prune(scene: Scene, keep: np.ndarray) -> AdaptResult:
    """Drop primitives where ``keep`` is False, with index maps for moment remapping."""
    idx = np.nonzero(np.asarray(keep, dtype=bool))[0]
    sub = scene.subset(idx)
    texel_src = np.full(sub.textures.total_texels, -1, dtype=np.int64)
    for j, i in enumerate(idx):
        c = scene.textures.counts[i]
        s = sub.textures.start[j]
        texel_src[s:s + c] = scene.textures.start[i] + np.arange(c)
    return AdaptResult(sub, [], idx.astype(np.int64), texel_src)


def reallocate_scene(scene: Scene) -> AdaptResult:
    """Crop/pad every texture to cover +-3 sigma at its current texel size."""
    grids = scene.textures.grids()
    scales = scene.scales
    new_grids = []
    texel_src = []
    for i, g in enumerate(grids):
        if g is None:
            new_grids.append(None)
            continue
        res = required_resolution(scales[i], g.texel_size)
        idx = reallocate_index(g, res)
        new_grids.append(reallocate(g, res))
        texel_src.append(np.where(idx >= 0, scene.textures.start[i] + idx, -1))
    pool = TexturePool.from_grids(new_grids)
    out = scene.copy()
    out.textures = pool
    src = np.concatenate(texel_src) if texel_src else np.zeros(0, dtype=np.int64)
    return AdaptResult(out, [], np.arange(len(scene), dtype=np.int64), src)
