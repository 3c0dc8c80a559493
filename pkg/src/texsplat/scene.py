"""Structure-of-arrays container for a set of textured surfels."""
from __future__ import annotations

import numpy as np

from .geometry import SH_COEFFS, Primitive, logit, quat_to_rotmat, sigmoid
from .texture import TextureGrid, TexturePool

PARAMS_PER_PRIMITIVE = 59
PARAMS_PER_TEXEL = 3


class Scene:
    """All primitives of a model.

    Optimizable arrays hold raw (pre-activation) values: ``log_scales``,
    ``opacity_logit`` and un-normalized ``quats`` in (w, x, y, z) order.
    ``t2p`` is the integer exponent of the texel-to-pixel ratio and
    ``k_min`` the back-projected pixel size fixed when texturing starts.
    """

    def __init__(self, means, log_scales, quats, opacity_logit, sh, t2p=None, k_min=None, textures=None):
        # always copies: the optimizer updates these arrays in place
        self.means = np.array(means, dtype=float).reshape(-1, 3)
        n = len(self.means)
        self.log_scales = np.array(log_scales, dtype=float).reshape(n, 2)
        self.quats = np.array(quats, dtype=float).reshape(n, 4)
        self.opacity_logit = np.array(opacity_logit, dtype=float).reshape(n)
        self.sh = np.array(sh, dtype=float).reshape(n, 3, SH_COEFFS)
        self.t2p = np.ones(n, dtype=np.int64) if t2p is None else np.array(t2p, dtype=np.int64).reshape(n)
        self.k_min = np.zeros(n) if k_min is None else np.array(k_min, dtype=float).reshape(n)
        self.textures = TexturePool.empty(n) if textures is None else textures
        if len(self.textures) != n:
            raise ValueError("texture pool size does not match primitive count")

    @classmethod
    def empty(cls) -> "Scene":
        return cls(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3, SH_COEFFS)))

    @classmethod
    def from_primitives(cls, prims, grids=None, k_min=None) -> "Scene":
        if not prims:
            return cls.empty()
        scene = cls(
            [p.center for p in prims],
            [np.log(p.scales) for p in prims],
            [p.rotation for p in prims],
            [float(logit(np.clip(p.opacity, 1e-12, 1 - 1e-12))) for p in prims],
            [p.sh for p in prims],
            [p.t2p_exponent for p in prims],
            k_min,
        )
        if grids is not None:
            scene.textures = TexturePool.from_grids(grids)
        return scene

    def __len__(self) -> int:
        return len(self.means)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    @property
    def rotmats(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros((0, 3, 3))
        return quat_to_rotmat(self.quats)

    def primitive(self, i: int) -> Primitive:
        return Primitive(self.means[i], self.scales[i], self.quats[i] / np.linalg.norm(self.quats[i]),
                         float(self.opacities[i]), self.sh[i], int(self.t2p[i]))

    def grid(self, i: int) -> TextureGrid | None:
        return self.textures.grid(i)

    def texel_size(self) -> np.ndarray:
        return self.k_min * np.exp2(self.t2p)

    def param_arrays(self) -> dict:
        """Optimizable arrays by parameter class (views, not copies)."""
        return {
            "means": self.means,
            "log_scales": self.log_scales,
            "quats": self.quats,
            "opacity": self.opacity_logit,
            "sh": self.sh,
            "texels": self.textures.data,
        }

    def subset(self, index) -> "Scene":
        """Scene holding primitives ``index`` (in that order) with their grids."""
        index = np.asarray(index, dtype=np.int64)
        grids = self.textures.grids()
        return Scene(
            self.means[index], self.log_scales[index], self.quats[index], self.opacity_logit[index],
            self.sh[index], self.t2p[index], self.k_min[index],
            TexturePool.from_grids([grids[i] for i in index]),
        )

    def copy(self) -> "Scene":
        return Scene(self.means.copy(), self.log_scales.copy(), self.quats.copy(), self.opacity_logit.copy(),
                     self.sh.copy(), self.t2p.copy(), self.k_min.copy(), self.textures.copy())

    def normalize_rotations(self) -> None:
        self.quats /= np.linalg.norm(self.quats, axis=1, keepdims=True)

    def quantize(self) -> None:
        """Round every stored real to float32 precision (the checkpoint precision)."""
        for arr in (self.means, self.log_scales, self.quats, self.opacity_logit, self.sh, self.k_min,
                    self.textures.data, self.textures.texel_size, self.textures.offset):
            arr[...] = arr.astype(np.float32)

    def parameter_count(self) -> tuple[int, int, int]:
        n_texels = self.textures.total_texels
        return len(self), n_texels, PARAMS_PER_PRIMITIVE * len(self) + PARAMS_PER_TEXEL * n_texels

    def equals(self, other: "Scene") -> bool:
        """Bitwise equality of every array."""
        pairs = [
            (self.means, other.means), (self.log_scales, other.log_scales), (self.quats, other.quats),
            (self.opacity_logit, other.opacity_logit), (self.sh, other.sh), (self.t2p, other.t2p),
            (self.k_min, other.k_min), (self.textures.data, other.textures.data),
            (self.textures.res, other.textures.res), (self.textures.start, other.textures.start),
            (self.textures.texel_size, other.textures.texel_size),
            (self.textures.offset, other.textures.offset),
        ]
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)


def parameter_count(scene: Scene) -> tuple[int, int, int]:
    """``(n_prims, n_texels, n_params)`` with 59 reals per primitive and 3 per texel."""
    return scene.parameter_count()
