"""Trajectory-based pose angles and their circular smoothing.

A person's pose angle is measured on the ground plane between the vector
pointing from the person to the camera and the person's walking
direction: 0 deg means walking straight at the camera (front view), 180
deg straight away from it (back view).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .camera import CameraModel
from .errors import ObjectAtCamera, TrackTooShort, ZeroVelocity

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 10
_ZERO_RESULTANT = 1e-12

FLAG_ZERO_VELOCITY = "zero_velocity"
FLAG_ZERO_RESULTANT = "zero_resultant"


def wrap_degrees(angle):
    """Map angles to ``[0, 360)``; works on scalars and arrays."""
    a = np.mod(angle, 360.0)
    # fmod of a tiny negative number rounds up to exactly 360
    a = np.where(a >= 360.0, 0.0, a)
    return float(a) if np.ndim(a) == 0 else a


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"bounding box needs positive size, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def intersection_area(self, other: "BoundingBox") -> float:
        iw = min(self.x + self.w, other.x + other.w) - max(self.x, other.x)
        ih = min(self.y + self.h, other.y + other.h) - max(self.y, other.y)
        if iw <= 0 or ih <= 0:
            return 0.0
        return iw * ih


@dataclass(frozen=True)
class TrackSample:
    object_id: str
    camera_id: str
    frame: int
    world_pos: tuple[float, float]
    bbox: BoundingBox
    velocity: Optional[tuple[float, float]] = None
    raw_angle: Optional[float] = None
    smooth_angle: Optional[float] = None
    confidence: Optional[float] = None
    flags: frozenset = field(default_factory=frozenset)

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.camera_id, self.object_id, self.frame)

    @property
    def speed(self) -> float:
        if self.velocity is None:
            raise ValueError(f"sample {self.key} has no velocity")
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class Track:
    object_id: str
    camera_id: str
    samples: tuple[TrackSample, ...]

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        frames = [s.frame for s in samples]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"track {self.object_id}@{self.camera_id}: frames must strictly increase")
        for s in samples:
            if s.object_id != self.object_id or s.camera_id != self.camera_id:
                raise ValueError(f"sample {s.key} does not belong to track {self.object_id}@{self.camera_id}")

    def __len__(self):
        return len(self.samples)

    @property
    def t_start(self) -> int:
        return self.samples[0].frame

    @property
    def t_end(self) -> int:
        return self.samples[-1].frame

    def positions(self) -> np.ndarray:
        return np.array([s.world_pos for s in self.samples], dtype=float).reshape(-1, 2)

    def with_samples(self, samples: Sequence[TrackSample]) -> "Track":
        return Track(self.object_id, self.camera_id, tuple(samples))


def compute_velocity(track: Track, frame_rate: float) -> Track:
    """Forward-difference ground velocity in m/s for every sample.

    The last sample copies its predecessor's velocity. Frame gaps are
    honoured: the displacement is divided by the elapsed time.
    """
    if len(track) < 2:
        raise TrackTooShort(f"track {track.object_id}@{track.camera_id} has {len(track)} sample(s)")
    if not frame_rate > 0:
        raise ValueError("frame_rate must be positive")
    pos = track.positions()
    frames = np.array([s.frame for s in track.samples], dtype=float)
    vel = np.diff(pos, axis=0) * (frame_rate / np.diff(frames))[:, None]
    vel = np.vstack([vel, vel[-1:]])
    samples = [replace(s, velocity=(float(v[0]), float(v[1]))) for s, v in zip(track.samples, vel)]
    return track.with_samples(samples)


def signed_pose_angle(camera_vec, velocity) -> float:
    """Angle from ``camera_vec`` to ``velocity`` in ``[0, 360)`` degrees.

    Counter-clockwise rotation (positive cross product) gives (0, 180).
    """
    cx, cy = camera_vec
    vx, vy = velocity
    if vx == 0.0 and vy == 0.0:
        raise ZeroVelocity("velocity is zero; pose angle undefined")
    if cx == 0.0 and cy == 0.0:
        raise ObjectAtCamera("object stands at the camera's ground position")
    return wrap_degrees(math.degrees(math.atan2(cx * vy - cy * vx, cx * vx + cy * vy)))


def estimate_pose_angle(sample: TrackSample, camera: CameraModel) -> float:
    """Pose angle of one sample relative to ``camera``, degrees in ``[0, 360)``."""
    if sample.velocity is None:
        raise ValueError(f"sample {sample.key} has no velocity; run compute_velocity first")
    c = camera.position[:2] - np.asarray(sample.world_pos, dtype=float)
    return signed_pose_angle((float(c[0]), float(c[1])), sample.velocity)


def estimate_track_poses(track: Track, camera: CameraModel) -> Track:
    """Attach ``raw_angle`` to every sample of a velocity-annotated track.

    Samples whose angle is undefined (zero velocity, person at the camera)
    inherit the nearest earlier defined angle, or the nearest later one at
    the head of the track, and are flagged. Their zero speed drives their
    confidence to 0 so they are rejected downstream.
    """
    angles: list[Optional[float]] = []
    for s in track.samples:
        try:
            angles.append(estimate_pose_angle(s, camera))
        except (ZeroVelocity, ObjectAtCamera):
            angles.append(None)
    defined = [a for a in angles if a is not None]
    fill = defined[0] if defined else 0.0
    out = []
    for s, a in zip(track.samples, angles):
        if a is None:
            out.append(replace(s, raw_angle=fill, flags=s.flags | {FLAG_ZERO_VELOCITY}))
        else:
            fill = a
            out.append(replace(s, raw_angle=a))
    return track.with_samples(out)


def smooth_angle_sequence(angles, window_half_width: int = DEFAULT_WINDOW):
    """Moving average of angles in polar form.

    Returns ``(smoothed, zero_resultant_mask)``. The window is truncated at
    both ends of the sequence. Where the sine and cosine sums both vanish
    the raw angle is kept and the mask is set.
    """
    if window_half_width < 0:
        raise ValueError("window half width must be >= 0")
    theta = np.radians(np.asarray(angles, dtype=float))
    n = theta.size
    if n == 0:
        return np.empty(0), np.zeros(0, dtype=bool)
    csin = np.concatenate([[0.0], np.cumsum(np.sin(theta))])
    ccos = np.concatenate([[0.0], np.cumsum(np.cos(theta))])
    idx = np.arange(n)
    lo = np.clip(idx - window_half_width, 0, n)
    hi = np.clip(idx + window_half_width + 1, 0, n)
    s = csin[hi] - csin[lo]
    c = ccos[hi] - ccos[lo]
    degenerate = (np.abs(s) < _ZERO_RESULTANT) & (np.abs(c) < _ZERO_RESULTANT)
    smoothed = wrap_degrees(np.degrees(np.arctan2(s, c)))
    smoothed = np.where(degenerate, wrap_degrees(np.degrees(theta)), smoothed)
    return np.atleast_1d(smoothed), degenerate


def smooth_angles(track: Track, window_half_width: int = DEFAULT_WINDOW) -> Track:
    """Attach ``smooth_angle`` computed from ``raw_angle`` over ``t-m .. t+m``."""
    if any(s.raw_angle is None for s in track.samples):
        raise ValueError(f"track {track.object_id}@{track.camera_id}: raw angles missing")
    smoothed, degenerate = smooth_angle_sequence([s.raw_angle for s in track.samples], window_half_width)
    out = []
    for s, a, bad in zip(track.samples, smoothed, degenerate):
        flags = s.flags | {FLAG_ZERO_RESULTANT} if bad else s.flags
        out.append(replace(s, smooth_angle=float(a), flags=flags))
    if degenerate.any():
        logger.debug("track %s@%s: %d zero-resultant windows", track.object_id, track.camera_id, degenerate.sum())
    return track.with_samples(out)


def estimate_poses(track: Track, camera: CameraModel, frame_rate: float, window_half_width: int = DEFAULT_WINDOW) -> Track:
    """Velocity, raw pose angle and smoothed pose angle in one pass."""
    return smooth_angles(estimate_track_poses(compute_velocity(track, frame_rate), camera), window_half_width)
