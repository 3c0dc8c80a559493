"""Surfel parameterization, coordinate frames, ray intersection and SH color.

A surfel lives in four frames: world, world-centered (``p - mu``), local
(``R^-1 (p - mu)``, the axis-aligned frame of the disc, two components) and
canonical (local divided by the scales).  Scalar helpers here operate on a
single ray / primitive; the renderer has its own batched path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PARALLEL_EPS = 1e-8
T_NEAR = 1e-4

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
SH_COEFFS = 16


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (w, x, y, z) quaternions, normalized first.

    Accepts shape ``(4,)`` or ``(N, 4)``; returns ``(3, 3)`` or ``(N, 3, 3)``.
    """
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat` for a single matrix (w >= 0)."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q if q[0] >= 0 else -q


def rotmat_grad_to_quat(q: np.ndarray, d_r: np.ndarray) -> np.ndarray:
    """Pull a gradient on ``quat_to_rotmat(q)`` back to the raw quaternion.

    Includes the normalization Jacobian, so ``q`` need not be unit length.
    ``q`` is ``(N, 4)`` and ``d_r`` is ``(N, 3, 3)``.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    g = d_r.reshape(-1, 9).T
    dw = 2 * (-z * g[1] + y * g[2] + z * g[3] - x * g[5] - y * g[6] + x * g[7])
    dx = 2 * (y * g[1] + z * g[2] + y * g[3] - 2 * x * g[4] - w * g[5] + z * g[6] + w * g[7] - 2 * x * g[8])
    dy = 2 * (-2 * y * g[0] + x * g[1] + w * g[2] + x * g[3] + z * g[5] - w * g[6] + z * g[7] - 2 * y * g[8])
    dz = 2 * (-2 * z * g[0] - w * g[1] + x * g[2] + w * g[3] - 2 * z * g[4] + y * g[5] + x * g[6] + y * g[7])
    d_qn = np.stack([dw, dx, dy, dz], axis=-1)
    return (d_qn - qn * np.sum(d_qn * qn, axis=-1, keepdims=True)) / norm


@dataclass
class Primitive:
    """One textured surfel.  ``scales`` and ``opacity`` are activated values."""

    center: np.ndarray
    scales: np.ndarray
    rotation: np.ndarray
    opacity: float
    sh: np.ndarray = field(default_factory=lambda: np.zeros((3, SH_COEFFS)))
    t2p_exponent: int = 1

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.scales = np.asarray(self.scales, dtype=float).reshape(2)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(4)
        self.sh = np.asarray(self.sh, dtype=float).reshape(3, SH_COEFFS)

    @property
    def rotmat(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    @property
    def normal(self) -> np.ndarray:
        return self.rotmat[:, 2]


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        self.direction = d / np.linalg.norm(d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def intersect(ray: Ray, prim: Primitive):
    """Ray / surfel-plane hit.  Returns ``(t, point)`` or ``None``.

    Misses are parallel rays (``|n.d| <= 1e-8``) and hits at ``t <= 1e-4``.
    """
    n = prim.normal
    denom = float(n @ ray.direction)
    if abs(denom) <= PARALLEL_EPS:
        return None
    t = float(n @ (prim.center - ray.origin)) / denom
    if t <= T_NEAR:
        return None
    return t, ray.at(t)


def to_local(world_point, prim: Primitive) -> np.ndarray:
    """First two components of ``R^-1 (p - mu)``; off-plane offsets are dropped."""
    offset = np.asarray(world_point, dtype=float) - prim.center
    return (prim.rotmat.T @ offset)[:2]


def to_canonical(local, prim: Primitive) -> np.ndarray:
    return np.asarray(local, dtype=float) / prim.scales


def falloff(canonical) -> float:
    x = np.asarray(canonical, dtype=float)
    return float(np.exp(-0.5 * (x @ x)))


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Degree-3 real SH basis for unit directions, shape ``(..., 16)``."""
    dirs = np.asarray(dirs, dtype=float)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    return np.stack(
        [
            np.full_like(x, SH_C0),
            -SH_C1 * y,
            SH_C1 * z,
            -SH_C1 * x,
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ],
        axis=-1,
    )


def sh_color(sh, direction) -> np.ndarray:
    """Unclamped RGB from ``(3, 16)`` channel-major coefficients (48 reals)."""
    sh = np.asarray(sh, dtype=float).reshape(3, SH_COEFFS)
    return sh @ sh_basis(direction)
