"""Datasets on disk, image files and SPTX checkpoints.

Dataset layout::

    root/cameras.json
    root/images/<file>        PNG (8 bit) or PFM (float32)
    root/points.npz           optional: positions (N, 3), normals (N, 3)

Checkpoint layout (little-endian)::

    b"SPTX" | u32 version | u64 iteration | u32 n_prims | u32 json_len | json
    per primitive: 58 f32 (mean 3, log_scale 2, quat 4, opacity 1, sh 48)
                   f32 k_min | i32 t2p
    per primitive texture record: u32 res_u | u32 res_v | f32 texel_size |
                   2 f32 offset | res_u*res_v*3 f32 pre-activation texels
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera
from .scene import Scene
from .texture import TexturePool

MAGIC = b"SPTX"
VERSION = 1
SUPPORTED_VERSIONS = (1,)
_HEAD = struct.Struct("<4sIQII")
_PRIM_FLOATS = 58
_PRIM = struct.Struct("<" + "f" * (_PRIM_FLOATS + 1) + "i")
_TEX = struct.Struct("<IIfff")


class CheckpointError(ValueError):
    pass


@dataclass
class Dataset:
    cameras: list
    images: list
    train: list
    test: list
    points: np.ndarray | None = None
    normals: np.ndarray | None = None
    bbox: np.ndarray | None = None  # (2, 3) lower and upper corner
    name: str = ""

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise ValueError("camera/image count mismatch")
        self.train = [int(i) for i in self.train]
        self.test = [int(i) for i in self.test]
        if set(self.train) & set(self.test):
            raise ValueError("train and test splits overlap")
        if sorted(self.train + self.test) != list(range(len(self.cameras))):
            raise ValueError("train/test split must cover every view exactly once")

    def __len__(self):
        return len(self.cameras)

    def train_cameras(self):
        return [self.cameras[i] for i in self.train]


# images ---------------------------------------------------------------------

def write_png(path, img) -> None:
    arr = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


def write_pfm(path, img) -> None:
    arr = np.asarray(img, dtype="<f4")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(b"PF\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        # PFM stores rows bottom to top
        f.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if kind == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * ch:
        raise ValueError(f"{path}: truncated PFM data")
    img = data.reshape(h, w, ch)[::-1].astype(float)
    return img if ch == 3 else np.repeat(img, 3, axis=2)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    return read_png(path)


def write_image(path, img) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, img)
    else:
        write_png(path, img)


# datasets -------------------------------------------------------------------

def _camera_from_json(entry: dict, where: str) -> Camera:
    try:
        return Camera.from_quaternion(
            entry["rotation"], entry["translation"], entry["fx"], entry["fy"], entry["cx"], entry["cy"],
            entry["width"], entry["height"],
        )
    except KeyError as exc:
        raise ValueError(f"{where}: missing camera field {exc.args[0]!r}") from None


def camera_to_json(cam: Camera, image: str) -> dict:
    return {
        "image": image,
        "rotation": [float(v) for v in cam.quaternion],
        "translation": [float(v) for v in cam.translation],
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
    }


def load_dataset(path) -> Dataset:
    root = Path(path)
    meta_path = root / "cameras.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"{meta_path}: cameras.json not found")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{meta_path}: invalid JSON ({exc})") from None
    entries = meta.get("cameras")
    if not isinstance(entries, list):
        raise ValueError(f"{meta_path}: expected a 'cameras' list")
    img_dir = root / "images"
    files = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in (".png", ".pfm")) if img_dir.is_dir() else []
    if len(files) != len(entries):
        raise ValueError(f"{meta_path}: camera/image count mismatch ({len(entries)} cameras, {len(files)} images)")
    cams, imgs = [], []
    for i, entry in enumerate(entries):
        cam = _camera_from_json(entry, f"{meta_path} camera {i}")
        if not (0 <= cam.cx <= cam.width and 0 <= cam.cy <= cam.height):
            warnings.warn(f"{meta_path} camera {i}: principal point outside the image", stacklevel=2)
        name = entry.get("image", files[i].name)
        img_path = img_dir / name
        if not img_path.is_file():
            raise FileNotFoundError(f"{img_path}: image not found")
        img = read_image(img_path)
        if img.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"{img_path}: size {img.shape[1]}x{img.shape[0]} does not match camera {i}")
        cams.append(cam)
        imgs.append(img)
    n = len(cams)
    test = meta.get("test", [])
    train = meta.get("train", [i for i in range(n) if i not in set(test)])
    points = normals = None
    pts_path = root / "points.npz"
    if pts_path.is_file():
        with np.load(pts_path) as z:
            points = z["positions"].astype(float)
            normals = z["normals"].astype(float) if "normals" in z.files else None
    bbox = np.asarray(meta["bbox"], dtype=float) if "bbox" in meta else None
    return Dataset(cams, imgs, train, test, points, normals, bbox, meta.get("name", root.name))


def save_dataset(ds: Dataset, path, fmt: str = "pfm") -> Path:
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (cam, img) in enumerate(zip(ds.cameras, ds.images)):
        name = f"{i:03d}.{fmt}"
        write_image(root / "images" / name, img)
        entries.append(camera_to_json(cam, name))
    meta = {"name": ds.name, "cameras": entries, "train": ds.train, "test": ds.test}
    if ds.bbox is not None:
        meta["bbox"] = np.asarray(ds.bbox).tolist()
    (root / "cameras.json").write_text(json.dumps(meta, indent=1))
    if ds.points is not None:
        extra = {"normals": ds.normals} if ds.normals is not None else {}
        np.savez(root / "points.npz", positions=ds.points, **extra)
    return root


# checkpoints ----------------------------------------------------------------

def checkpoint_size(scene: Scene, config_bytes: int = 0) -> int:
    """Bytes of a checkpoint holding ``scene``: 4 per parameter plus fixed overhead."""
    n, n_texels, n_params = scene.parameter_count()
    # 58 of the 59 counted reals are the f32 block; the 59th (t2p) is the i32
    overhead = _HEAD.size + config_bytes + n * (_PRIM.size - 4 * 59) + n * _TEX.size
    return overhead + 4 * n_params


def save_checkpoint(scene: Scene, path, *, iteration: int = 0, config: dict | None = None) -> int:
    """Write ``scene``; returns the number of bytes written."""
    cfg = json.dumps(config or {}, sort_keys=True).encode()
    n = len(scene)
    pool = scene.textures
    parts = [_HEAD.pack(MAGIC, VERSION, int(iteration), n, len(cfg)), cfg]
    flat = np.concatenate([
        scene.means, scene.log_scales, scene.quats, scene.opacity_logit[:, None], scene.sh.reshape(n, 48),
    ], axis=1).astype("<f4") if n else np.zeros((0, _PRIM_FLOATS), dtype="<f4")
    for i in range(n):
        parts.append(flat[i].tobytes())
        parts.append(struct.pack("<fi", np.float32(scene.k_min[i]), int(scene.t2p[i])))
    for i in range(n):
        ru, rv = (int(v) for v in pool.res[i])
        parts.append(_TEX.pack(ru, rv, np.float32(pool.texel_size[i]), *np.float32(pool.offset[i])))
        c = ru * rv
        parts.append(pool.data[pool.start[i]:pool.start[i] + c].astype("<f4").tobytes())
    blob = b"".join(parts)
    Path(path).write_bytes(blob)
    return len(blob)


def load_checkpoint(path):
    """Returns ``(scene, iteration, config)``."""
    path = Path(path)
    blob = path.read_bytes()

    def need(pos, size):
        if pos + size > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")

    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a SPTX checkpoint")
    need(0, _HEAD.size)
    _, version, iteration, n, cfg_len = _HEAD.unpack_from(blob, 0)
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (supported: "
                              f"{', '.join(str(v) for v in SUPPORTED_VERSIONS)})")
    pos = _HEAD.size
    need(pos, cfg_len)
    config = json.loads(blob[pos:pos + cfg_len].decode()) if cfg_len else {}
    pos += cfg_len
    need(pos, n * _PRIM.size)
    rows = np.zeros((n, _PRIM_FLOATS))
    k_min = np.zeros(n)
    t2p = np.zeros(n, dtype=np.int64)
    for i in range(n):
        vals = _PRIM.unpack_from(blob, pos)
        rows[i] = vals[:_PRIM_FLOATS]
        k_min[i] = vals[_PRIM_FLOATS]
        t2p[i] = vals[-1]
        pos += _PRIM.size
    res = np.zeros((n, 2), dtype=np.int64)
    ksize = np.zeros(n)
    offset = np.zeros((n, 2))
    chunks = []
    for i in range(n):
        need(pos, _TEX.size)
        ru, rv, ks, ou, ov = _TEX.unpack_from(blob, pos)
        pos += _TEX.size
        c = ru * rv * 3
        need(pos, 4 * c)
        chunks.append(np.frombuffer(blob, dtype="<f4", count=c, offset=pos).reshape(-1, 3))
        pos += 4 * c
        res[i] = ru, rv
        ksize[i] = ks
        offset[i] = ou, ov
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    counts = res[:, 0] * res[:, 1]
    start = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64) if n else np.zeros(0, dtype=np.int64)
    data = np.concatenate(chunks).astype(float) if chunks else np.zeros((0, 3))
    pool = TexturePool(data, start, res, ksize, offset)
    scene = Scene(rows[:, 0:3], rows[:, 3:5], rows[:, 5:9], rows[:, 9], rows[:, 10:58].reshape(n, 3, 16),
                  t2p, k_min, pool)
    return scene, int(iteration), config
