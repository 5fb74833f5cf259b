"""Synthetic multi-camera scenes with ground truth.

Every identity walks through the field of view of each camera along its
own path. Emitted per sample: ground position (optionally jittered),
bounding box from the projected body, and an appearance feature

    identity_vector + strength * pose_direction[identity, bin] + noise

where ``bin`` is the true pose group. Identity vectors have expected norm
``identity_scale`` and noise has expected norm ``noise_sigma``; the four pose directions
of an identity are orthonormal. Short-lived occluder agents cross the
line of sight to create partial occlusions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import CameraModel, project, save_calibration
from .errors import ConfigInvalid
from .io import write_features, write_tracks
from .multipose import FeatureVector, pose_indices
from .pose import BoundingBox, Track, TrackSample, signed_pose_angle, wrap_degrees

PERSON_HEIGHT = 1.75  # m
PERSON_ASPECT = 0.4  # bbox width / height
BBOX_MARGIN = 1.02
PATH_KINDS = ("waypoint", "linear", "circular")
DESCRIPTOR_ID = "synthetic"


def default_intrinsics(focal: float = 700.0, width: int = 704, height: int = 576) -> np.ndarray:
    return np.array([[focal, 0.0, width / 2], [0.0, focal, height / 2], [0.0, 0.0, 1.0]])


def default_cameras(count: int = 2, height: float = 6.0, standoff: float = 12.0, spacing: float = 100.0) -> list[CameraModel]:
    """Cameras far apart (non-overlapping), each looking at its own ground area."""
    cams = []
    for i in range(count):
        x0 = i * spacing
        # alternate the viewing direction so the cameras do not share a layout
        direction = 1.0 if i % 2 == 0 else -1.0
        pos = (x0, 0.0, height)
        target = (x0 + 2.0 * direction, direction * standoff, 0.0)
        cams.append(CameraModel.look_at(pos, target, default_intrinsics(), camera_id=f"cam{i}"))
    return cams


def camera_region_center(camera: CameraModel) -> np.ndarray:
    """Ground point on the optical axis."""
    axis = camera.rotation[2]
    s = -camera.position[2] / axis[2]
    return (camera.position + s * axis)[:2]


@dataclass
class SceneConfig:
    identity_count: int = 100
    cameras: Sequence[CameraModel] = field(default_factory=default_cameras)
    frame_rate: float = 15.0
    duration: int = 90
    walk_speed_range: tuple[float, float] = (1.3, 1.9)
    appearance_dim: int = 64
    pose_appearance_strength: float = 0.8
    occlusion_probability: float = 0.01
    noise_sigma: float = 1.0
    identity_scale: float = 0.5
    seed: int = 0
    path_kind: str = "waypoint"
    position_noise: float = 0.01
    pause_probability: float = 0.2
    region_size: float = 8.0
    arrival_spacing: int = 25
    shared_pose_directions: bool = False

    def validate(self) -> None:
        if self.identity_count < 1 or self.duration < 2 or self.appearance_dim < 4:
            raise ConfigInvalid("identity_count >= 1, duration >= 2 and appearance_dim >= 4 are required")
        if not self.cameras:
            raise ConfigInvalid("at least one camera is required")
        if not self.frame_rate > 0:
            raise ConfigInvalid("frame_rate must be positive")
        lo, hi = self.walk_speed_range
        if not 0 < lo <= hi:
            raise ConfigInvalid("walk_speed_range must satisfy 0 < low <= high")
        for name in ("pose_appearance_strength", "occlusion_probability", "pause_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"{name} must lie in [0, 1], got {v}")
        if self.noise_sigma < 0 or self.position_noise < 0 or self.identity_scale < 0:
            raise ConfigInvalid("noise scales must be non-negative")
        if self.path_kind not in PATH_KINDS:
            raise ConfigInvalid(f"path_kind must be one of {PATH_KINDS}")


@dataclass(frozen=True)
class SampleTruth:
    camera_id: str
    object_id: str
    frame: int
    identity: str
    true_angle: float
    true_speed: float
    occluded: bool


@dataclass
class Scene:
    config: SceneConfig
    tracks: list[Track]
    features: dict[tuple[str, str, int], FeatureVector]
    truth: dict[tuple[str, str, int], SampleTruth]
    cameras: dict[str, CameraModel]

    @property
    def identities(self) -> list[str]:
        return sorted({t.identity for t in self.truth.values() if not t.identity.startswith("occ")})

    def ground_truth_dict(self) -> dict:
        return {
            "samples": [
                {
                    "camera_id": t.camera_id,
                    "object_id": t.object_id,
                    "frame": t.frame,
                    "identity": t.identity,
                    "true_angle": t.true_angle,
                    "true_speed": t.true_speed,
                    "occluded": t.occluded,
                }
                for t in self.truth.values()
            ]
        }

    def write(self, directory) -> None:
        """Emit ``tracks.csv``, ``features.csv``, ``calibration/<cam>.json`` and ``ground_truth.json``."""
        out = Path(directory)
        (out / "calibration").mkdir(parents=True, exist_ok=True)
        write_tracks(self.tracks, out / "tracks.csv")
        write_features(self.features, out / "features.csv")
        for cam in self.cameras.values():
            save_calibration(cam, out / "calibration" / f"{cam.camera_id}.json")
        (out / "ground_truth.json").write_text(json.dumps(self.ground_truth_dict()) + "\n")


# --------------------------------------------------------------------------
# paths: positions (n, 2) and unit tangents (n, 2) sampled once per frame


def _chaikin(points: np.ndarray, iterations: int = 3) -> np.ndarray:
    for _ in range(iterations):
        p, q = points[:-1], points[1:]
        cut = np.empty((2 * len(p), 2))
        cut[0::2] = 0.75 * p + 0.25 * q
        cut[1::2] = 0.25 * p + 0.75 * q
        points = np.vstack([points[:1], cut, points[-1:]])
    return points


def _resample_polyline(points: np.ndarray, step: float, count: int):
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 1e-12
    points = np.vstack([points[:1], points[1:][keep]])
    seg, seg_len = seg[keep], seg_len[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.arange(count) * step
    s = s[s <= cum[-1]]
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    pos = points[idx] + frac[:, None] * seg[idx]
    tangent = seg[idx] / seg_len[idx][:, None]
    return pos, tangent


def _boundary_point(rng, center, half):
    side = rng.integers(4)
    t = rng.uniform(-half, half)
    offsets = [(t, -half), (half, t), (t, half), (-half, t)]
    return center + np.array(offsets[side])


def waypoint_path(rng, center, size, speed, frame_rate, count):
    half = size / 2
    start = _boundary_point(rng, center, half)
    end = _boundary_point(rng, center, half)
    while np.linalg.norm(end - start) < half:
        end = _boundary_point(rng, center, half)
    inner = center + rng.uniform(-0.7 * half, 0.7 * half, size=(2, 2))
    pts = _chaikin(np.vstack([start, inner, end]))
    return _resample_polyline(pts, speed / frame_rate, count)


def linear_path(rng, center, size, speed, frame_rate, count):
    heading = rng.uniform(0, 2 * math.pi)
    direction = np.array([math.cos(heading), math.sin(heading)])
    offset = rng.uniform(-size / 4, size / 4) * np.array([-direction[1], direction[0]])
    t = (np.arange(count) - (count - 1) / 2) * (speed / frame_rate)
    pos = center + offset + t[:, None] * direction
    return pos, np.tile(direction, (count, 1))


def circular_path(rng, center, size, speed, frame_rate, count):
    radius = rng.uniform(size / 4, size / 2.5)
    sense = 1.0 if rng.random() < 0.5 else -1.0
    phi = rng.uniform(0, 2 * math.pi) + sense * (speed / radius / frame_rate) * np.arange(count)
    pos = center + radius * np.column_stack([np.cos(phi), np.sin(phi)])
    tangent = sense * np.column_stack([-np.sin(phi), np.cos(phi)])
    return pos, tangent


_PATHS = {"waypoint": waypoint_path, "linear": linear_path, "circular": circular_path}


def _insert_pause(rng, pos, tangent, max_len):
    n = len(pos)
    if n < 10:
        return pos, tangent, np.ones(n, dtype=bool)
    at = int(rng.integers(n // 4, 3 * n // 4))
    length = int(rng.integers(8, 20))
    moving = np.ones(n + length, dtype=bool)
    moving[at + 1 : at + 1 + length] = False
    pos = np.vstack([pos[: at + 1], np.repeat(pos[at : at + 1], length, axis=0), pos[at + 1 :]])
    tangent = np.vstack([tangent[: at + 1], np.repeat(tangent[at : at + 1], length, axis=0), tangent[at + 1 :]])
    return pos[:max_len], tangent[:max_len], moving[:max_len]


def body_bbox(camera: CameraModel, ground_xy) -> BoundingBox:
    """Box around a standing person whose feet are at ``ground_xy``."""
    x, y = float(ground_xy[0]), float(ground_xy[1])
    u_foot, v_foot = project(camera, (x, y, 0.0))
    _, v_head = project(camera, (x, y, PERSON_HEIGHT))
    h = (v_foot - v_head) * BBOX_MARGIN
    w = PERSON_ASPECT * h
    return BoundingBox(u_foot - w / 2, v_head, w, h)


def _pose_frames(rng, count, d, shared):
    if shared is not None:
        return shared
    q, _ = np.linalg.qr(rng.standard_normal((d, count)))
    return q.T


def generate_scene(config: SceneConfig) -> Scene:
    """Build tracks, features and ground truth; deterministic under ``config.seed``."""
    config.validate()
    root = np.random.default_rng(config.seed)
    d = config.appearance_dim
    cams = {c.camera_id: c for c in config.cameras}
    ids = [f"p{k:04d}" for k in range(config.identity_count)]
    shared = _pose_frames(root, 4, d, None) if config.shared_pose_directions else None
    identity_vec = {k: root.standard_normal(d) * (config.identity_scale / math.sqrt(d)) for k in ids}
    pose_dirs = {k: _pose_frames(root, 4, d, shared) for k in ids}

    # raw per-object records before samples are assembled: (cam, obj, identity, frames, pos, tangent, moving)
    records = []
    for cam_index, cam in enumerate(config.cameras):
        rng = np.random.default_rng([config.seed, cam_index])
        center = camera_region_center(cam)
        order = rng.permutation(len(ids))
        for slot, k_idx in enumerate(order):
            k = ids[k_idx]
            speed = rng.uniform(*config.walk_speed_range)
            pos, tangent = _PATHS[config.path_kind](rng, center, config.region_size, speed, config.frame_rate, config.duration)
            moving = np.ones(len(pos), dtype=bool)
            if config.pause_probability > 0 and rng.random() < config.pause_probability:
                pos, tangent, moving = _insert_pause(rng, pos, tangent, config.duration)
            start = slot * config.arrival_spacing + int(rng.integers(0, max(1, config.arrival_spacing // 2)))
            frames = start + np.arange(len(pos))
            records.append([cam.camera_id, k, k, frames, pos, tangent, moving * speed])

        # occluders crossing the line of sight of identities in this camera
        occ_count = 0
        for rec in list(records):
            if rec[0] != cam.camera_id or config.occlusion_probability == 0:
                continue
            _, _, _, frames, pos, _, _ = rec
            starts = np.nonzero(rng.random(len(frames)) < config.occlusion_probability)[0]
            for s in starts:
                length = int(rng.integers(8, 16))
                mid = min(s + length // 2, len(frames) - 1)
                target = pos[mid]
                to_cam = cam.position[:2] - target
                dist = np.linalg.norm(to_cam)
                cross_pt = target + to_cam * rng.uniform(0.15, 0.35)
                across = np.array([-to_cam[1], to_cam[0]]) / dist
                if rng.random() < 0.5:
                    across = -across
                occ_speed = rng.uniform(*config.walk_speed_range)
                t = (np.arange(length) - length // 2) / config.frame_rate
                occ_pos = cross_pt + t[:, None] * occ_speed * across
                occ_frames = frames[mid] - length // 2 + np.arange(length)
                if occ_frames[0] < 0:
                    continue
                occ_id = f"occ{cam_index}_{occ_count:04d}"
                occ_count += 1
                identity_vec[occ_id] = root.standard_normal(d) * (config.identity_scale / math.sqrt(d))
                pose_dirs[occ_id] = _pose_frames(root, 4, d, shared)
                records.append([cam.camera_id, occ_id, occ_id, occ_frames, occ_pos, np.tile(across, (length, 1)), np.full(length, occ_speed)])

    tracks: list[Track] = []
    features: dict[tuple[str, str, int], FeatureVector] = {}
    truth: dict[tuple[str, str, int], SampleTruth] = {}
    per_frame: dict[tuple[str, int], list[tuple[str, np.ndarray, BoundingBox]]] = {}

    noise_rng = np.random.default_rng([config.seed, 10_000])
    pending = []
    for cam_id, obj, identity, frames, pos, tangent, speeds in records:
        cam = cams[cam_id]
        emitted = pos + noise_rng.normal(0.0, config.position_noise, size=pos.shape) if config.position_noise > 0 else pos.copy()
        true_angles = np.array(
            [signed_pose_angle(tuple(cam.position[:2] - p), tuple(tg)) for p, tg in zip(pos, tangent)]
        )
        bins = pose_indices(true_angles)
        noise = noise_rng.standard_normal((len(pos), d)) * (config.noise_sigma / math.sqrt(d))
        feats = identity_vec[identity] + config.pose_appearance_strength * pose_dirs[identity][bins] + noise
        samples = []
        for i, f in enumerate(frames):
            box = body_bbox(cam, emitted[i])
            s = TrackSample(obj, cam_id, int(f), (float(emitted[i, 0]), float(emitted[i, 1])), box)
            samples.append(s)
            features[s.key] = FeatureVector(feats[i], DESCRIPTOR_ID)
            per_frame.setdefault((cam_id, int(f)), []).append((obj, pos[i], box))
            pending.append((s.key, identity, float(wrap_degrees(true_angles[i])), float(speeds[i]), pos[i]))
        tracks.append(Track(obj, cam_id, tuple(samples)))

    for key, identity, angle, speed, true_pos in pending:
        cam_id, obj, frame = key
        cam = cams[cam_id]
        own = math.dist(true_pos, cam.position[:2])
        own_box = next(b for o, _, b in per_frame[(cam_id, frame)] if o == obj)
        occluded = any(
            o != obj and math.dist(p, cam.position[:2]) < own and own_box.intersection_area(b) > 0
            for o, p, b in per_frame[(cam_id, frame)]
        )
        truth[key] = SampleTruth(cam_id, obj, frame, identity, angle, speed, occluded)

    tracks.sort(key=lambda t: (t.camera_id, t.object_id))
    return Scene(config, tracks, features, truth, cams)
