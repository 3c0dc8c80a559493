from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Ray, quat_to_rotmat, rotmat_to_quat


@dataclass
class Camera:
    """Pinhole camera; ``rotation``/``translation`` map world to camera.

    Camera looks down +z with +x right and +y down in the image.
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @classmethod
    def look_at(cls, eye, target, up=(0, 0, 1), *, fov_deg=60.0, width=64, height=64) -> "Camera":
        eye = np.asarray(eye, dtype=float)
        fwd = np.asarray(target, dtype=float) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=float))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(rot, -rot @ eye, f, f, width / 2, height / 2, width, height)

    @classmethod
    def from_quaternion(cls, q, translation, fx, fy, cx, cy, width, height) -> "Camera":
        return cls(quat_to_rotmat(np.asarray(q, dtype=float)), translation, fx, fy, cx, cy, int(width), int(height))

    @property
    def quaternion(self) -> np.ndarray:
        return rotmat_to_quat(self.rotation)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def camera_dirs(self) -> np.ndarray:
        """Unit ray directions in camera space, ``(height * width, 3)`` row-major."""
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        d = np.stack([
            (xs.ravel() + 0.5 - self.cx) / self.fx,
            (ys.ravel() + 0.5 - self.cy) / self.fy,
            np.ones(xs.size),
        ], axis=1)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def world_to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def project(self, points) -> np.ndarray:
        """Pixel coordinates (x, y) and depth for world points, ``(N, 3)``."""
        pc = self.world_to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        return np.stack([self.fx * pc[:, 0] / z + self.cx, self.fy * pc[:, 1] / z + self.cy, z], axis=1)


def pixel_ray(cam: Camera, px) -> Ray:
    """World-space ray through the center of pixel ``px = (x, y)``."""
    x, y = px
    if not (0 <= x < cam.width and 0 <= y < cam.height):
        raise IndexError(f"pixel {px} outside {cam.width}x{cam.height} image")
    d_cam = np.array([(x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0])
    return Ray(cam.center, cam.rotation.T @ d_cam)
