"""Training loop: losses, Adam, texture start, memory and adaptation cadences."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import losses
from .adaptation import (
    AdaptationConfig,
    AdaptResult,
    adapt_step,
    initial_t2p_exponent,
    min_texel_sizes,
    prune,
    reallocate_scene,
)
from .autodiff import LossWeights, NonFiniteLoss, backward
from .geometry import SH_C0, rotmat_to_quat
from .optim import Adam
from .renderer import error_accumulate, rasterize, render
from .scene import Scene, parameter_count  # noqa: F401  (re-exported)
from .scene_io import Dataset
from .texture import TextureGrid, TexturePool, required_resolution

log = logging.getLogger(__name__)

PRIM_PARAMS = ("means", "log_scales", "quats", "opacity", "sh")


class TrainingError(RuntimeError):
    pass


def default_lrs() -> dict:
    return {"means": 1.6e-4, "log_scales": 5e-3, "quats": 5e-3, "opacity": 5e-2, "sh": 2.5e-3, "texels": 2.5e-2}


@dataclass
class TrainConfig:
    iters: int = 25000
    lambda_ssim: float = 0.2
    lambda_texture: float = 1e-6
    lambda_opacity: float = 0.01
    lrs: dict = field(default_factory=default_lrs)
    means_lr_final: float = 0.01  # final/initial ratio of the exponential decay on centers
    sh_rest_lr_factor: float = 1 / 20
    texture_start_iter: int = 500
    adapt_every: int = 250
    adapt_until: int = 25000
    realloc_every: int = 100
    init_smallest_axis_texels: int = 8
    point_budget: int | None = None
    prune_opacity: float = 0.005
    adapt: bool = True
    init_points: int | None = None
    init_random_points: int = 64
    seed: int = 0
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)

    def __post_init__(self):
        if isinstance(self.adaptation, dict):
            self.adaptation = AdaptationConfig(**self.adaptation)
        if self.iters < 0:
            raise ValueError("iters must be non-negative")
        for name in ("adapt_every", "realloc_every", "init_smallest_axis_texels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lambda_ssim", "lambda_texture", "lambda_opacity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.point_budget is not None and self.point_budget < 1:
            raise ValueError("point_budget must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    iteration: int
    optimizer: Adam
    seed: int
    rng: np.random.Generator
    order: list = field(default_factory=list)
    textured: bool = False


@dataclass
class TrainResult:
    scene: Scene
    state: TrainState
    metrics: list
    events: list


# public loss wrappers --------------------------------------------------------

def loss_rgb(render_img, reference, lambda_ssim: float = 0.2) -> float:
    return losses.loss_rgb(render_img, reference, lambda_ssim)[0]


def loss_texture(pool: TexturePool, weight: float) -> float:
    return losses.loss_texture(pool.data, weight)[0]


def loss_opacity(scene: Scene, weight: float) -> float:
    if len(scene) == 0:
        raise ValueError("opacity loss needs at least one primitive")
    return losses.loss_opacity(scene.opacity_logit, weight)[0]


# initialization ---------------------------------------------------------------

def _rotation_facing(normal) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(helper, n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return rotmat_to_quat(np.stack([u, v, n], axis=1))


def _pixel_colors(points, ds: Dataset) -> np.ndarray:
    """Color of the nearest input pixel from the closest training camera that sees each point."""
    out = np.full((len(points), 3), 0.5)
    best = np.full(len(points), np.inf)
    for i in ds.train:
        cam, img = ds.cameras[i], ds.images[i]
        proj = cam.project(points)
        x, y, z = proj.T
        ok = (z > 1e-6) & (x >= 0) & (x < cam.width) & (y >= 0) & (y < cam.height)
        d = np.where(ok, z, np.inf)
        upd = d < best
        if upd.any():
            xi = np.clip(x[upd].astype(int), 0, cam.width - 1)
            yi = np.clip(y[upd].astype(int), 0, cam.height - 1)
            out[upd] = img[yi, xi]
            best[upd] = d[upd]
    return out


def farthest_points(points, m: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``m`` well spread points: greedy farthest-point order from a random start.

    Prefixes are nested, so a smaller subset is contained in a larger one.
    """
    points = np.asarray(points, dtype=float)
    pick = [int(rng.integers(len(points)))]
    d = np.linalg.norm(points - points[pick[0]], axis=1)
    for _ in range(m - 1):
        j = int(np.argmax(d))
        pick.append(j)
        d = np.minimum(d, np.linalg.norm(points - points[j], axis=1))
    return np.array(pick, dtype=np.int64)


def initialize(ds: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> Scene:
    """Surfels at the dataset points (or random in its bounding box)."""
    normals = None
    if ds.points is not None and len(ds.points):
        pts = np.asarray(ds.points, dtype=float)
        normals = None if ds.normals is None else np.asarray(ds.normals, dtype=float)
        limit = min(x for x in (cfg.init_points, cfg.point_budget, len(pts)) if x is not None)
        if limit < len(pts):
            pick = np.sort(farthest_points(pts, limit, rng))
            pts = pts[pick]
            normals = None if normals is None else normals[pick]
    else:
        if ds.bbox is None:
            centers = np.array([ds.cameras[i].center for i in ds.train])
            lo, hi = centers.min(axis=0) - 1.0, centers.max(axis=0) + 1.0
        else:
            lo, hi = np.asarray(ds.bbox, dtype=float)
        n_rand = cfg.init_random_points if cfg.point_budget is None else min(cfg.init_random_points, cfg.point_budget)
        pts = rng.uniform(lo, hi, (n_rand, 3))
    n = len(pts)
    if n == 0:
        raise TrainingError("no initial points")
    if n > 1:
        dist, _ = cKDTree(pts).query(pts, k=2)
        scale = float(np.mean(dist[:, 1]))
    else:
        scale = 0.1
    scale = max(scale, 1e-4)
    cams = [ds.cameras[i] for i in ds.train]
    quats = np.zeros((n, 4))
    for j in range(n):
        if normals is not None:
            nrm = normals[j]
        else:
            c = min(cams, key=lambda cam: np.linalg.norm(cam.center - pts[j]))
            nrm = c.center - pts[j]
        quats[j] = _rotation_facing(nrm)
    sh = np.zeros((n, 3, 16))
    sh[:, :, 0] = _pixel_colors(pts, ds) / SH_C0
    scene = Scene(pts, np.full((n, 2), np.log(scale)), quats, np.zeros(n), sh)
    scene.quantize()
    return scene


def start_textures(scene: Scene, cams, texels: int = 8, floor: int = 1) -> Scene:
    """Fix ``k_min`` and the initial exponent, and allocate zero textures."""
    out = scene.copy()
    k_min = min_texel_sizes(out.means, cams).astype(np.float32).astype(float)
    e = initial_t2p_exponent(out.scales, k_min, texels, floor)
    out.k_min = k_min
    out.t2p = e
    ks = k_min * np.exp2(e)
    out.textures = TexturePool.from_grids(
        [TextureGrid.zeros(required_resolution(s, k), k) for s, k in zip(out.scales, ks)])
    return out


# loop -------------------------------------------------------------------------

def scene_extent(cams) -> float:
    centers = np.array([c.center for c in cams])
    return 1.1 * float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)) or 1.0)


def _remap(opt: Adam, res: AdaptResult) -> None:
    for name in PRIM_PARAMS:
        opt.remap(name, res.source)
    opt.remap("texels", res.texel_source)


def evaluate(scene: Scene, ds: Dataset, views) -> dict:
    """Mean PSNR and SSIM over ``views`` (None when empty)."""
    if not views:
        return {"psnr": None, "ssim": None, "psnr_views": []}
    ps, ss = [], []
    for i in views:
        img = render(scene, ds.cameras[i]).image
        ps.append(losses.psnr(img, ds.images[i]))
        ss.append(losses.ssim(img, ds.images[i]))
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)), "psnr_views": [float(p) for p in ps]}


def view_errors(scene: Scene, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-primitive contribution-weighted error over all training views, and total contribution."""
    num = np.zeros(len(scene))
    den = np.zeros(len(scene))
    for i in ds.train:
        out = rasterize(scene, ds.cameras[i], keep_state=True)
        e, w = error_accumulate(out, ds.images[i])
        num += e
        den += w
    err = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return err, den


def _metrics_row(it, window, scene, ds):
    n, nt, npar = scene.parameter_count()
    ev = evaluate(scene, ds, ds.test)
    return {
        "iter": it,
        "l1": float(np.mean([w[0] for w in window])) if window else None,
        "ssim": float(np.mean([w[1] for w in window])) if window else None,
        "loss": float(np.mean([w[2] for w in window])) if window else None,
        "psnr_test": ev["psnr"],
        "psnr_views": ev["psnr_views"],
        "n_prims": n,
        "n_texels": nt,
        "n_params": npar,
        "mean_t2p": float(scene.t2p.mean()) if n else None,
    }


def _lr_scales(cfg: TrainConfig, it: int, extent: float) -> dict:
    frac = it / max(cfg.iters, 1)
    sh = np.ones((1, 1, 16))
    sh[..., 1:] = cfg.sh_rest_lr_factor
    return {"means": extent * cfg.means_lr_final ** frac, "sh": sh}


def train(ds: Dataset, cfg: TrainConfig | None = None, *, scene: Scene | None = None, callback=None) -> TrainResult:
    """Fit a textured surfel scene to the training views of ``ds``.

    Returns the final scene, optimizer state, the metrics rows emitted at
    every adaptation boundary (and at the end) and the adaptation events.
    """
    cfg = cfg or TrainConfig()
    if not ds.train:
        raise TrainingError("dataset has no training views")
    rng = np.random.default_rng(cfg.seed)
    scene = initialize(ds, cfg, rng) if scene is None else scene.copy()
    cams = ds.train_cameras()
    extent = scene_extent(cams)
    weights = LossWeights(cfg.lambda_ssim, cfg.lambda_texture, cfg.lambda_opacity)
    opt = Adam(cfg.lrs)
    state = TrainState(0, opt, cfg.seed, rng, textured=scene.textures.total_texels > 0)
    metrics, events, window = [], [], []

    for it in range(cfg.iters):
        if it == cfg.texture_start_iter and not state.textured:
            scene = start_textures(scene, cams, cfg.init_smallest_axis_texels, cfg.adaptation.t2p_floor_exponent)
            state.textured = True
        if not state.order:
            state.order = list(rng.permutation(ds.train))
        view = int(state.order.pop())
        try:
            loss, grads, out = backward(ds.cameras[view], scene, ds.images[view], weights, view=view,
                                        train_texels=state.textured)
        except NonFiniteLoss as exc:
            raise TrainingError(f"iteration {it}: {exc}") from exc
        if not grads.all_finite():
            raise TrainingError(f"iteration {it}: non-finite gradient on view {view}")
        window.append((out.stats["l1"], out.stats["ssim"], loss))
        opt.step(scene.param_arrays(), grads.as_dict(), _lr_scales(cfg, it, extent))
        scene.normalize_rotations()
        scene.quantize()
        state.iteration = done = it + 1

        if state.textured and done % cfg.realloc_every == 0:
            res = reallocate_scene(scene)
            scene = res.scene
            _remap(opt, res)
        if done % cfg.adapt_every == 0:
            if done <= cfg.adapt_until:
                scene = _adapt(scene, ds, cfg, opt, done, events, state.textured)
            metrics.append(_metrics_row(done, window, scene, ds))
            window = []
            if callback is not None:
                callback(done, scene, metrics[-1])
    if not metrics or metrics[-1]["iter"] != state.iteration:
        metrics.append(_metrics_row(state.iteration, window, scene, ds))
    return TrainResult(scene, state, metrics, events)


def _adapt(scene, ds, cfg, opt, it, events, textured):
    if cfg.adapt and textured:
        err, contrib = view_errors(scene, ds)
        eligible = (contrib > 0) & (scene.textures.counts > 0)
        # split/upscale only pay off after further fitting; the last pass just compresses
        res = adapt_step(scene, err, cfg.adaptation, it, eligible=eligible, point_budget=cfg.point_budget,
                         refine=it < cfg.iters)
        events.extend(res.log)
        scene = res.scene
        _remap(opt, res)
    if cfg.prune_opacity > 0:
        keep = scene.opacities >= cfg.prune_opacity
        if not keep.all():
            for i in np.nonzero(~keep)[0]:
                events.append({"iter": it, "prim_id": int(i), "action": "prune",
                               "detail": {"opacity": float(scene.opacities[i])}})
            res = prune(scene, keep)
            scene = res.scene
            _remap(opt, res)
    if len(scene) == 0:
        raise TrainingError(f"iteration {it}: scene is empty after pruning")
    scene.quantize()
    return scene
