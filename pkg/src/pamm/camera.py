"""Pinhole camera model and the world <-> image mapping.

Conventions
-----------
World frame: right-handed, metres, ground plane is ``Z = 0``.
Camera frame: x right, y down, z forward along the optical axis.
``position`` is the camera centre in world coordinates, so a world point
``X`` maps to camera coordinates ``R @ (X - position)``; the extrinsic
translation of ``[R | t]`` is therefore ``-R @ position``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationInvalid, DepthNonPositive, InputParseError, RayParallelToGround

_ORTHO_TOL = 1e-6
# |ray_z| / |ray| below this is treated as parallel to the ground.
_PARALLEL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CameraModel:
    intrinsics: np.ndarray
    rotation: np.ndarray
    position: np.ndarray
    camera_id: str = "cam0"
    _k_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=float)
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.position, dtype=float).reshape(-1)
        if K.shape != (3, 3) or R.shape != (3, 3) or t.shape != (3,):
            raise CalibrationInvalid(
                f"camera {self.camera_id}: expected K 3x3, R 3x3, t 3-vector; "
                f"got {K.shape}, {R.shape}, {t.shape}"
            )
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise CalibrationInvalid(f"camera {self.camera_id}: non-finite calibration entries")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL:
            raise CalibrationInvalid(f"camera {self.camera_id}: rotation is not orthonormal")
        if np.abs(np.tril(K, -1)).max() > 0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise CalibrationInvalid(
                f"camera {self.camera_id}: K must be upper-triangular with positive focal lengths"
            )
        for name, arr in (("intrinsics", K), ("rotation", R), ("position", t)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k_inv = np.linalg.inv(K)
        k_inv.setflags(write=False)
        object.__setattr__(self, "_k_inv", k_inv)

    @property
    def translation(self) -> np.ndarray:
        """Extrinsic translation ``-R @ position``."""
        return -self.rotation @ self.position

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix ``K [R | -R position]``."""
        return self.intrinsics @ np.hstack([self.rotation, self.translation[:, None]])

    @property
    def ground_position(self) -> np.ndarray:
        return self.position[:2].copy()

    @classmethod
    def look_at(cls, position, target, intrinsics, camera_id="cam0", up=(0.0, 0.0, 1.0)):
        """Build a camera at ``position`` whose optical axis passes through ``target``."""
        position = np.asarray(position, dtype=float)
        forward = np.asarray(target, dtype=float) - position
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=float))
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise CalibrationInvalid("look_at: viewing direction is parallel to the up vector")
        right /= norm
        down = np.cross(forward, right)
        return cls(np.asarray(intrinsics, dtype=float), np.vstack([right, down, forward]), position, camera_id)

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "K": self.intrinsics.tolist(),
            "R": self.rotation.tolist(),
            "t": self.position.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        try:
            return cls(
                np.asarray(data["K"], dtype=float),
                np.asarray(data["R"], dtype=float),
                np.asarray(data["t"], dtype=float),
                str(data["camera_id"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CalibrationInvalid):
                raise
            raise InputParseError(f"malformed calibration record: {exc}") from exc


def project(camera: CameraModel, point) -> np.ndarray:
    """Project a world point to pixel coordinates ``(u, v)``.

    Raises
    ------
    DepthNonPositive
        If the point is on or behind the camera's image plane.
    """
    p_cam = camera.rotation @ (np.asarray(point, dtype=float) - camera.position)
    if not p_cam[2] > 0:
        raise DepthNonPositive(f"camera-frame depth {p_cam[2]:.6g} <= 0")
    uvw = camera.intrinsics @ p_cam
    return uvw[:2] / uvw[2]


def project_homogeneous(camera: CameraModel, point_h) -> np.ndarray:
    """Project a homogeneous world point ``[X, Y, Z, W]`` (any non-zero scale)."""
    point_h = np.asarray(point_h, dtype=float)
    uvw = camera.projection_matrix @ point_h
    # depth sign must be judged on the de-homogenised point
    if not uvw[2] * np.sign(point_h[3]) > 0:
        raise DepthNonPositive("camera-frame depth <= 0")
    return uvw[:2] / uvw[2]


def back_project_to_ground(camera: CameraModel, pixel) -> np.ndarray:
    """Intersect the viewing ray of ``pixel`` with the ground plane ``Z = 0``.

    Returns the world point ``[X, Y, 0]``.
    """
    u, v = np.asarray(pixel, dtype=float)
    ray = camera.rotation.T @ (camera._k_inv @ np.array([u, v, 1.0]))
    if abs(ray[2]) <= _PARALLEL_TOL * np.linalg.norm(ray):
        raise RayParallelToGround(f"pixel ({u:.3f}, {v:.3f}) lies on the horizon")
    s = -camera.position[2] / ray[2]
    if s <= 0:
        raise RayParallelToGround(f"pixel ({u:.3f}, {v:.3f}) meets the ground behind the camera")
    point = camera.position + s * ray
    point[2] = 0.0
    return point


def horizon_pixel(camera: CameraModel, u: float) -> np.ndarray:
    """Pixel on the image horizon line at column ``u``."""
    # line l with l^T x = 0 for every pixel whose ray has zero world-Z component
    line = (camera.rotation.T @ camera._k_inv)[2]
    if abs(line[1]) < 1e-15:
        raise RayParallelToGround("horizon is vertical in this image")
    return np.array([u, -(line[0] * u + line[2]) / line[1]])


def load_calibration(path) -> dict[str, CameraModel]:
    """Load cameras from a JSON file (one record or a list) or a directory of them."""
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    if not files:
        raise InputParseError(f"no calibration files found in {path}", path=str(path))
    cameras: dict[str, CameraModel] = {}
    for f in files:
        try:
            data = json.loads(f.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputParseError(f"cannot read calibration {f}: {exc}", path=str(f)) from exc
        records = data if isinstance(data, list) else [data]
        for rec in records:
            try:
                cam = CameraModel.from_dict(rec)
            except InputParseError as exc:
                exc.path = str(f)
                raise
            cameras[cam.camera_id] = cam
    return cameras


def save_calibration(camera: CameraModel, path) -> None:
    Path(path).write_text(json.dumps(camera.to_dict(), indent=2) + "\n")
