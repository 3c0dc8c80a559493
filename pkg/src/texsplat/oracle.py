"""Reference ray tracer: one ray at a time, plain Python floats.

Used to render synthetic ground truth and to cross-check the vectorized
renderer.  It deliberately repeats the image-formation math from scratch
(plane hit, falloff, SH via associated Legendre recurrences, zero-padded
bilinear texture lookup, sort and blend) instead of calling into
:mod:`texsplat.renderer` or :mod:`texsplat.geometry`.
"""
from __future__ import annotations

import math

import numpy as np


def _legendre(lmax: int, x: float) -> dict:
    """Associated Legendre P_l^m(x), Condon-Shortley phase included."""
    p = {(0, 0): 1.0}
    s = math.sqrt(max(0.0, 1.0 - x * x))
    for m in range(1, lmax + 1):
        p[(m, m)] = -(2 * m - 1) * s * p[(m - 1, m - 1)]
    for m in range(0, lmax):
        p[(m + 1, m)] = (2 * m + 1) * x * p[(m, m)]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            p[(l, m)] = ((2 * l - 1) * x * p[(l - 1, m)] - (l + m - 1) * p[(l - 2, m)]) / (l - m)
    return p


def real_sh(d, lmax: int = 3) -> list:
    """Real SH values ordered l = 0..lmax, m = -l..l."""
    x, y, z = d
    p = _legendre(lmax, z)
    phi = math.atan2(y, x)
    out = []
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            k = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - am) / math.factorial(l + am))
            if m == 0:
                out.append(k * p[(l, 0)])
            elif m > 0:
                out.append(math.sqrt(2) * k * math.cos(m * phi) * p[(l, m)])
            else:
                out.append(math.sqrt(2) * k * math.sin(am * phi) * p[(l, am)])
    return out


class _Layer:
    def __init__(self, center, rot, scales, opacity, sh, texels, texel_size, offset):
        self.c = [float(v) for v in center]
        self.r = [[float(rot[i][j]) for j in range(3)] for i in range(3)]
        self.s = [float(v) for v in scales]
        self.o = float(opacity)
        self.sh = [[float(v) for v in row] for row in sh]
        self.tex = None if texels is None else np.asarray(texels, dtype=float)
        self.k = float(texel_size)
        self.off = [float(v) for v in offset]

    def hit(self, ro, d):
        r = self.r
        n = (r[0][2], r[1][2], r[2][2])
        den = n[0] * d[0] + n[1] * d[1] + n[2] * d[2]
        if abs(den) <= 1e-8:
            return None
        t = (n[0] * (self.c[0] - ro[0]) + n[1] * (self.c[1] - ro[1]) + n[2] * (self.c[2] - ro[2])) / den
        if t <= 1e-4:
            return None
        q = [ro[i] + t * d[i] - self.c[i] for i in range(3)]
        lx = r[0][0] * q[0] + r[1][0] * q[1] + r[2][0] * q[2]
        ly = r[0][1] * q[0] + r[1][1] * q[1] + r[2][1] * q[2]
        cx, cy = lx / self.s[0], ly / self.s[1]
        if abs(cx) > 3.0 or abs(cy) > 3.0:
            return None
        return t, math.exp(-0.5 * (cx * cx + cy * cy)), lx, ly

    def color(self, basis, lx, ly):
        rgb = [sum(self.sh[ch][b] * basis[b] for b in range(16)) for ch in range(3)]
        if self.tex is not None:
            u = lx / self.k + self.off[0]
            v = ly / self.k + self.off[1]
            i0, j0 = math.floor(u), math.floor(v)
            fu, fv = u - i0, v - j0
            ru, rv = self.tex.shape[:2]
            for i, j, w in ((i0, j0, (1 - fu) * (1 - fv)), (i0 + 1, j0, fu * (1 - fv)),
                            (i0, j0 + 1, (1 - fu) * fv), (i0 + 1, j0 + 1, fu * fv)):
                if 0 <= i < ru and 0 <= j < rv:
                    for ch in range(3):
                        rgb[ch] += w * (2.0 / (1.0 + math.exp(-self.tex[i, j, ch])) - 1.0)
        return rgb


def layers_from_scene(scene) -> list:
    out = []
    for i in range(len(scene)):
        q = scene.quats[i] / np.linalg.norm(scene.quats[i])
        w, x, y, z = (float(v) for v in q)
        rot = [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
        grid = scene.textures.grid(i)
        out.append(_Layer(
            scene.means[i], rot, np.exp(scene.log_scales[i]), 1.0 / (1.0 + math.exp(-scene.opacity_logit[i])),
            scene.sh[i], None if grid is None else grid.texels,
            1.0 if grid is None else grid.texel_size, (0.0, 0.0) if grid is None else grid.offset,
        ))
    return out


def trace_pixel(layers, ro, d, t_min: float = 1e-4):
    """Color, weights (per layer, in input order) and final transmittance of one ray."""
    hits = []
    for idx, layer in enumerate(layers):
        h = layer.hit(ro, d)
        if h is not None:
            hits.append((h[0], idx, h[1], h[2], h[3]))
    hits.sort(key=lambda h: (h[0], h[1]))
    basis = real_sh(d)
    rgb = [0.0, 0.0, 0.0]
    weights = [0.0] * len(layers)
    trans = 1.0
    for t, idx, g, lx, ly in hits:
        if trans < t_min:
            break
        layer = layers[idx]
        a = layer.o * g
        c = layer.color(basis, lx, ly)
        w = trans * a
        for ch in range(3):
            rgb[ch] += w * c[ch]
        weights[idx] += w
        trans *= 1.0 - a
    return rgb, weights, trans


def trace_image(scene, cam):
    """Oracle render of a :class:`~texsplat.scene.Scene`.

    Returns ``(image, transmittance)``; the image is clamped to [0, 1].
    """
    layers = layers_from_scene(scene)
    rot = cam.rotation
    ro = [float(v) for v in cam.center]
    img = np.zeros((cam.height, cam.width, 3))
    trans = np.ones((cam.height, cam.width))
    for py in range(cam.height):
        for px in range(cam.width):
            dc = ((px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0)
            dw = [rot[0][i] * dc[0] + rot[1][i] * dc[1] + rot[2][i] * dc[2] for i in range(3)]
            norm = math.sqrt(dw[0] ** 2 + dw[1] ** 2 + dw[2] ** 2)
            dw = [v / norm for v in dw]
            rgb, _, t = trace_pixel(layers, ro, dw)
            img[py, px] = [min(1.0, max(0.0, v)) for v in rgb]
            trans[py, px] = t
    return img, trans
