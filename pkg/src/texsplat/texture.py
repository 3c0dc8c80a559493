"""Per-primitive texture grids with a world-fixed texel size.

Texel ``(i, j)`` of a grid has its center at continuous texture coordinate
``u = (i, j)``; a local point ``p`` maps to ``u = p / k + offset``.  Texels
store pre-activation offsets; sampling activates each tap with
``2 * sigmoid(x) - 1`` before interpolating, so taps outside the grid read
exactly zero and the surfel falls back to its SH color.

Grids of all primitives live in a :class:`TexturePool`, one contiguous
``(total, 3)`` array plus an index table.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Primitive, sigmoid

MAX_RES = 256


def activate(raw):
    return 2.0 * sigmoid(raw) - 1.0


def activate_grad(raw):
    s = sigmoid(raw)
    return 2.0 * s * (1.0 - s)


def centered_offset(res) -> np.ndarray:
    return np.asarray(res, dtype=float) / 2.0 - 0.5


@dataclass
class TextureGrid:
    texels: np.ndarray  # (res_u, res_v, 3), pre-activation
    texel_size: float
    offset: np.ndarray  # texel units

    def __post_init__(self):
        self.texels = np.asarray(self.texels, dtype=float).reshape(self.texels.shape[0], -1, 3)
        self.offset = np.asarray(self.offset, dtype=float).reshape(2)
        self.texel_size = float(self.texel_size)

    @classmethod
    def zeros(cls, res, texel_size: float) -> "TextureGrid":
        res = (int(res[0]), int(res[1]))
        return cls(np.zeros(res + (3,)), texel_size, centered_offset(res))

    @property
    def res(self) -> tuple[int, int]:
        return self.texels.shape[0], self.texels.shape[1]

    @property
    def n_texels(self) -> int:
        return self.res[0] * self.res[1]

    def copy(self) -> "TextureGrid":
        return TextureGrid(self.texels.copy(), self.texel_size, self.offset.copy())


def uv_fixed(local, grid: TextureGrid) -> np.ndarray:
    return np.asarray(local, dtype=float) / grid.texel_size + grid.offset


def uv_naive(canonical, s_extent: float, res) -> np.ndarray:
    """Scale-coupled mapping (stretches with the primitive).

    Coordinates are edge-aligned: ``0`` and ``res`` are the grid borders, so
    subtract 0.5 before handing them to :func:`sample_bilinear`.
    """
    return (np.asarray(canonical, dtype=float) / (2.0 * s_extent) + 0.5) * np.asarray(res, dtype=float)


def _lerp_taps(texels: np.ndarray, u, values):
    res = texels.shape[:2]
    u = np.asarray(u, dtype=float)
    i0 = np.floor(u).astype(int)
    f = u - i0
    out = np.zeros(3)
    for di in (0, 1):
        for dj in (0, 1):
            i, j = i0[0] + di, i0[1] + dj
            w = (f[0] if di else 1 - f[0]) * (f[1] if dj else 1 - f[1])
            if w != 0 and 0 <= i < res[0] and 0 <= j < res[1]:
                out += w * values(texels[i, j])
    return out


def sample_bilinear(grid: TextureGrid, u) -> np.ndarray:
    """Activated bilinear sample; out-of-grid taps contribute zero."""
    return _lerp_taps(grid.texels, u, activate)


def sample_raw(grid: TextureGrid, u) -> np.ndarray:
    """Bilinear sample of pre-activation values, zero padded."""
    return _lerp_taps(grid.texels, u, lambda x: x)


def required_resolution(prim, k: float) -> tuple[int, int]:
    """Texels per axis covering +-3 sigma, capped at 256 and at least 1."""
    scales = prim.scales if isinstance(prim, Primitive) else np.asarray(prim, dtype=float)
    res = np.clip(np.ceil(6.0 * scales / k - 1e-9), 1, MAX_RES).astype(int)
    return int(res[0]), int(res[1])


def _shift_into(arr: np.ndarray, new_res, shift, fill) -> np.ndarray:
    """Place ``arr`` in a new grid so old index ``i`` lands at ``i + shift``."""
    out = np.full((new_res[0], new_res[1]) + arr.shape[2:], fill, dtype=arr.dtype)
    src_lo = np.maximum(0, -shift)
    dst_lo = np.maximum(0, shift)
    n = np.minimum(np.array(arr.shape[:2]) - src_lo, np.array(new_res) - dst_lo)
    if np.all(n > 0):
        out[dst_lo[0]:dst_lo[0] + n[0], dst_lo[1]:dst_lo[1] + n[1]] = arr[
            src_lo[0]:src_lo[0] + n[0], src_lo[1]:src_lo[1] + n[1]
        ]
    return out


def realloc_shift(grid: TextureGrid, new_res) -> np.ndarray:
    ideal = centered_offset(new_res)
    return np.floor(ideal - grid.offset + 0.5).astype(int)


def reallocate(grid: TextureGrid, new_res) -> TextureGrid:
    """Crop or zero-pad to ``new_res`` keeping texel phase fixed in world space."""
    new_res = (int(new_res[0]), int(new_res[1]))
    if not (1 <= new_res[0] <= MAX_RES and 1 <= new_res[1] <= MAX_RES):
        raise ValueError(f"resolution {new_res} outside [1, {MAX_RES}]")
    if new_res == grid.res:
        return grid.copy()
    shift = realloc_shift(grid, new_res)
    texels = _shift_into(grid.texels, new_res, shift, 0.0)
    return TextureGrid(texels, grid.texel_size, grid.offset + shift)


def reallocate_index(grid: TextureGrid, new_res) -> np.ndarray:
    """Old in-grid flat index for every texel of ``reallocate(grid, new_res)``; -1 if new."""
    new_res = (int(new_res[0]), int(new_res[1]))
    idx = np.arange(grid.n_texels).reshape(grid.res)
    if new_res == grid.res:
        return idx.ravel()
    return _shift_into(idx, new_res, realloc_shift(grid, new_res), -1).ravel()


def resample_half(grid: TextureGrid) -> TextureGrid:
    """2x2 box average of pre-activation texels; texel size doubles.

    Odd axes are zero padded at the high end first.
    """
    t = grid.texels
    pad = (t.shape[0] % 2, t.shape[1] % 2)
    if any(pad):
        t = np.pad(t, ((0, pad[0]), (0, pad[1]), (0, 0)))
    a, b = t[0::2, 0::2], t[0::2, 1::2]
    c, d = t[1::2, 0::2], t[1::2, 1::2]
    # pairwise sums keep double-then-half an exact identity
    texels = 0.25 * ((a + b) + (c + d))
    return TextureGrid(texels, grid.texel_size * 2.0, (grid.offset - 0.5) / 2.0)


def resample_double(grid: TextureGrid) -> TextureGrid:
    """Nearest-neighbour 2x upsample; texel size halves, appearance unchanged."""
    texels = np.repeat(np.repeat(grid.texels, 2, axis=0), 2, axis=1)
    return TextureGrid(texels, grid.texel_size / 2.0, 2.0 * grid.offset + 0.5)


class TexturePool:
    """Jagged storage of all per-primitive grids.

    ``data`` is ``(total, 3)``; grid ``i`` occupies
    ``data[start[i] : start[i] + res[i,0] * res[i,1]]`` in row-major order.
    A primitive without texture has resolution ``(0, 0)``.
    """

    def __init__(self, data, start, res, texel_size, offset):
        self.data = np.asarray(data, dtype=float).reshape(-1, 3)
        self.start = np.asarray(start, dtype=np.int64)
        self.res = np.asarray(res, dtype=np.int64).reshape(-1, 2)
        self.texel_size = np.asarray(texel_size, dtype=float)
        self.offset = np.asarray(offset, dtype=float).reshape(-1, 2)

    @classmethod
    def empty(cls, n: int) -> "TexturePool":
        return cls(np.zeros((0, 3)), np.zeros(n), np.zeros((n, 2)), np.ones(n), np.zeros((n, 2)))

    @classmethod
    def from_grids(cls, grids) -> "TexturePool":
        n = len(grids)
        res = np.zeros((n, 2), dtype=np.int64)
        ks = np.ones(n)
        offs = np.zeros((n, 2))
        chunks = []
        for i, g in enumerate(grids):
            if g is None:
                continue
            res[i] = g.res
            ks[i] = g.texel_size
            offs[i] = g.offset
            chunks.append(g.texels.reshape(-1, 3))
        counts = res[:, 0] * res[:, 1]
        start = np.concatenate([[0], np.cumsum(counts)[:-1]]) if n else np.zeros(0, dtype=np.int64)
        data = np.concatenate(chunks) if chunks else np.zeros((0, 3))
        return cls(data, start, res, ks, offs)

    def __len__(self) -> int:
        return len(self.start)

    @property
    def counts(self) -> np.ndarray:
        return self.res[:, 0] * self.res[:, 1]

    @property
    def total_texels(self) -> int:
        return int(self.counts.sum())

    def textured(self, i: int) -> bool:
        return bool(self.counts[i] > 0)

    def grid(self, i: int):
        if not self.textured(i):
            return None
        ru, rv = self.res[i]
        s = self.start[i]
        texels = self.data[s:s + ru * rv].reshape(ru, rv, 3).copy()
        return TextureGrid(texels, self.texel_size[i], self.offset[i].copy())

    def grids(self) -> list:
        return [self.grid(i) for i in range(len(self))]

    def copy(self) -> "TexturePool":
        return TexturePool(self.data.copy(), self.start.copy(), self.res.copy(),
                           self.texel_size.copy(), self.offset.copy())

    def activated(self) -> np.ndarray:
        return activate(self.data)


def bilinear_taps(u: np.ndarray, res: np.ndarray, start: np.ndarray, pad: int):
    """Tap table for ``H`` continuous coordinates.

    ``u`` is ``(2, H)``; ``res`` is ``(2, H)`` and ``start`` ``(H,)``.
    Returns ``(index, weight)``, both ``(4, H)`` in tap order (0,0), (1,0),
    (0,1), (1,1).  Taps outside a grid point at row ``pad``, which callers
    keep at zero.
    """
    i0 = np.floor(u[0]).astype(np.int64)
    j0 = np.floor(u[1]).astype(np.int64)
    fu = u[0] - i0
    fv = u[1] - j0
    ru, rv = res[0], res[1]
    iu = (i0 >= 0) & (i0 < ru), (i0 >= -1) & (i0 + 1 < ru)
    jv = (j0 >= 0) & (j0 < rv), (j0 >= -1) & (j0 + 1 < rv)
    base = start + i0 * rv + j0
    index = np.empty((4,) + i0.shape, dtype=np.int64)
    weight = np.empty((4,) + i0.shape)
    for n, (di, dj) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
        index[n] = np.where(iu[di] & jv[dj], base + di * rv + dj, pad)
        weight[n] = (fu if di else 1.0 - fu) * (fv if dj else 1.0 - fv)
    return index, weight
