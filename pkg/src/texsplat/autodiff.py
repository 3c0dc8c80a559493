"""Analytic gradients of the training loss for every optimizable array."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .camera import Camera
from .geometry import rotmat_grad_to_quat, sigmoid
from .losses import l1, loss_opacity, loss_texture, ssim
from .renderer import RenderOutput, _Band, rasterize
from .scene import Scene
from .texture import activate_grad


class NonFiniteLoss(FloatingPointError):
    def __init__(self, view, value):
        super().__init__(f"non-finite loss {value!r} on view {view}")
        self.view = view


@dataclass
class LossWeights:
    lambda_ssim: float = 0.2
    lambda_texture: float = 0.0
    lambda_opacity: float = 0.0


@dataclass
class GradientSet:
    """Gradients mirroring :meth:`Scene.param_arrays`."""

    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity: np.ndarray
    sh: np.ndarray
    texels: np.ndarray

    @classmethod
    def zeros_like(cls, scene: Scene) -> "GradientSet":
        return cls(*(np.zeros_like(a) for a in scene.param_arrays().values()))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("means", "log_scales", "quats", "opacity", "sh", "texels")}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.as_dict().values())

    def scaled(self, s: float) -> "GradientSet":
        return GradientSet(**{k: s * v for k, v in self.as_dict().items()})


def _band_backward(prep, band: _Band, d_rgb: np.ndarray, acc: dict, d_texels: np.ndarray):
    if band.w.size == 0:
        return
    pix, prim = band.pix, band.prim
    n_prims = len(acc["means_c"])
    d_h = d_rgb.T.take(pix, axis=1)  # (3, H)
    gc = band.w * d_h  # dL/d color per hit
    # alpha gradients need the back-to-front sum over each pixel's hit list
    s = np.zeros((band.n_pix, band.slots))
    s[pix, band.slot] = (d_h * band.color).sum(axis=0)
    alpha = band.alpha_grid
    d_alpha_grid = np.zeros_like(alpha)
    behind = np.zeros(band.n_pix)
    for j in range(band.slots - 1, -1, -1):
        d_alpha_grid[:, j] = band.trans_grid[:, j] * (s[:, j] - behind)
        behind = alpha[:, j] * s[:, j] + (1.0 - alpha[:, j]) * behind
    d_alpha = d_alpha_grid[pix, band.slot]

    d_o = d_alpha * band.g
    d_g = d_alpha * band.o
    d_pc = (-d_g * band.g) * band.pc  # (2, H)

    # texture: texel values and the spatial slope through u = p_l / k + offset
    tg = np.einsum("ch,cth->th", gc, band.taps)
    fu, fv = band.frac
    d_u = np.stack([(tg[1] - tg[0]) * (1 - fv) + (tg[3] - tg[2]) * fv,
                    (tg[2] - tg[0]) * (1 - fu) + (tg[3] - tg[1]) * fu])
    d_pl = d_pc / prep.scales_t[:, prim] + d_u / band.k_i
    d_logs = -d_pc * band.pc

    d_t = d_pl[0] * band.a[0] + d_pl[1] * band.a[1]
    q = d_t / band.den
    rot = prep.rot_t[:, :, prim]  # (3, 3, H)
    dirs = band.dirs_c.T.take(pix, axis=1)
    v = band.t * dirs - prep.mu_t[:, prim]
    d_mu = -(d_pl[0] * rot[:, 0] + d_pl[1] * rot[:, 1]) + q * rot[:, 2]

    def red(x):
        return np.bincount(prim, weights=x, minlength=n_prims)

    for a in range(3):
        acc["means_c"][:, a] += red(d_mu[a])
        acc["rot_c"][:, a, 0] += red(d_pl[0] * v[a])
        acc["rot_c"][:, a, 1] += red(d_pl[1] * v[a])
        acc["rot_c"][:, a, 2] -= red(q * v[a])
    acc["opacity"] += red(d_o)
    acc["log_scales"][:, 0] += red(d_logs[0])
    acc["log_scales"][:, 1] += red(d_logs[1])
    for c in range(3):
        m = sp.csr_matrix((gc[c], (prim, pix)), shape=(n_prims, band.n_pix))
        acc["sh"][:, c, :] += m @ band.basis

    if d_texels.size:
        idx = band.tap_index.ravel()
        n_rows = len(d_texels) + 1  # last row collects out-of-grid taps
        for c in range(3):
            d_texels[:, c] += np.bincount(idx, weights=(band.tap_weight * gc[c]).ravel(), minlength=n_rows)[:-1]


def backward(cam: Camera, scene: Scene, reference: np.ndarray, weights: LossWeights | None = None,
             *, view=None, train_texels: bool = True):
    """Total loss and its gradient for one view.

    Returns ``(loss, grads, render_output)``.  Raises :class:`NonFiniteLoss`
    if the loss is NaN or infinite.
    """
    weights = weights or LossWeights()
    out: RenderOutput = rasterize(scene, cam, keep_state=True)
    v1, g1 = l1(out.image, reference)
    vs, gs = ssim(out.image, reference, with_grad=True)
    lam = weights.lambda_ssim
    loss = (1 - lam) * v1 + lam * (1 - vs)
    d_img = (1 - lam) * g1 - lam * gs
    out.stats = {"l1": v1, "ssim": vs}
    d_img = d_img * ((out.raw >= 0.0) & (out.raw <= 1.0))
    grads = GradientSet.zeros_like(scene)

    n = len(scene)
    prep = out.hits[0] if out.hits else None
    acc = {
        "means_c": np.zeros((n, 3)),
        "rot_c": np.zeros((n, 3, 3)),
        "opacity": np.zeros(n),
        "log_scales": np.zeros((n, 2)),
        "sh": np.zeros((n, 3, 16)),
    }
    d_act = np.zeros_like(scene.textures.data)
    d_flat = d_img.reshape(-1, 3)
    row = 0
    for band in out.hits[1:]:
        _band_backward(prep, band, d_flat[row:row + band.n_pix], acc, d_act)
        row += band.n_pix

    if n:
        grads.means = acc["means_c"] @ cam.rotation
        d_rot_w = np.einsum("ji,njk->nik", cam.rotation, acc["rot_c"])
        grads.quats = rotmat_grad_to_quat(scene.quats, d_rot_w)
        o = sigmoid(scene.opacity_logit)
        grads.opacity = acc["opacity"] * o * (1 - o)
        grads.log_scales = acc["log_scales"]
        grads.sh = acc["sh"]
    if train_texels:
        grads.texels = d_act * activate_grad(scene.textures.data)

    if weights.lambda_texture and train_texels:
        v, g = loss_texture(scene.textures.data, weights.lambda_texture)
        loss += v
        grads.texels = grads.texels + g
    if weights.lambda_opacity and n:
        v, g = loss_opacity(scene.opacity_logit, weights.lambda_opacity)
        loss += v
        grads.opacity = grads.opacity + g

    if not np.isfinite(loss):
        raise NonFiniteLoss(view, loss)
    out.hits = []
    return loss, grads, out
