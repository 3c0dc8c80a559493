"""Image losses and regularizers, each returning ``(value, gradient)``."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import sigmoid
from .texture import activate, activate_grad

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 99.0


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # zero-padded 'same' filtering; symmetric kernel makes this self-adjoint
    out = correlate1d(img, kernel, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)


def ssim(x: np.ndarray, y: np.ndarray, *, with_grad: bool = False):
    """Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5).

    With ``with_grad`` also returns ``d ssim / d x``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = gaussian_window()
    mx, my = _blur(x, k), _blur(y, k)
    sxx = _blur(x * x, k) - mx * mx
    syy = _blur(y * y, k) - my * my
    sxy = _blur(x * y, k) - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    smap = (a1 * a2) / (b1 * b2)
    value = float(smap.mean())
    if not with_grad:
        return value
    n = smap.size
    # partials of the per-pixel map, scaled by the mean
    d_mx = (2 * my * a2 / (b1 * b2) - smap * 2 * mx / b1) / n
    d_sxx = -smap / b2 / n
    d_sxy = 2 * a1 / (b1 * b2) / n
    d_mx = d_mx - 2 * mx * d_sxx - my * d_sxy
    grad = _blur(d_mx, k) + 2 * x * _blur(d_sxx, k) + y * _blur(d_sxy, k)
    return value, grad


def l1(x: np.ndarray, y: np.ndarray):
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def loss_rgb(render: np.ndarray, reference: np.ndarray, lambda_ssim: float = 0.2):
    """``(1 - l) * L1 + l * (1 - SSIM)`` and its gradient w.r.t. ``render``."""
    if render.shape != reference.shape:
        raise ValueError(f"shape mismatch {render.shape} vs {reference.shape}")
    v1, g1 = l1(render, reference)
    if lambda_ssim == 0:
        return v1, g1
    vs, gs = ssim(render, reference, with_grad=True)
    return (1 - lambda_ssim) * v1 + lambda_ssim * (1 - vs), (1 - lambda_ssim) * g1 - lambda_ssim * gs


def loss_texture(raw_texels: np.ndarray, weight: float):
    """``weight * sum |2 sigmoid(c) - 1|`` over all texels and channels."""
    raw = np.asarray(raw_texels, dtype=float)
    act = activate(raw)
    return weight * float(np.abs(act).sum()), weight * np.sign(act) * activate_grad(raw)


def loss_opacity(opacity_logit: np.ndarray, weight: float):
    """``weight * mean(opacity)`` with gradient w.r.t. the opacity logits."""
    z = np.asarray(opacity_logit, dtype=float)
    if z.size == 0:
        return 0.0, np.zeros(0)
    o = sigmoid(z)
    return weight * float(o.mean()), weight * o * (1 - o) / z.size


def psnr(x: np.ndarray, y: np.ndarray, cap: float = PSNR_CAP) -> float:
    mse = float(np.mean((np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) ** 2))
    if mse == 0:
        return cap
    return min(cap, -10.0 * np.log10(mse))
