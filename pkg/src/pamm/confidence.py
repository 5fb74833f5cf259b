"""Per-sample reliability: angle stability, walking speed and occlusion."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .camera import CameraModel
from .errors import AllSamplesRejected
from .pose import Track, TrackSample

DEFAULT_THRESHOLD = 0.8
DEFAULT_SPEED_REF = 1.0  # m/s


@dataclass(frozen=True)
class ConfidenceReport:
    delta: float
    speed: float
    occlusion: float
    confidence: float


def angle_variation(prev_angle: float, cur_angle: float) -> float:
    """Wrap-aware absolute change between two angles, in ``[0, 180]``."""
    d = abs(prev_angle - cur_angle)
    return min(d, abs(d - 360.0))


def sample_confidence(delta: float, speed: float, occlusion: float, speed_ref: float = DEFAULT_SPEED_REF) -> float:
    """``exp(-delta_rad) * tanh(speed / speed_ref) * (1 - occlusion)``."""
    if speed_ref <= 0:
        raise ValueError("speed_ref must be positive")
    return math.exp(-math.radians(delta)) * math.tanh(speed / speed_ref) * (1.0 - occlusion)


def _ground_distance(sample: TrackSample, camera: CameraModel) -> float:
    return math.hypot(sample.world_pos[0] - camera.position[0], sample.world_pos[1] - camera.position[1])


def occlusion_rate(sample: TrackSample, same_frame_samples: Iterable[TrackSample], camera: CameraModel) -> float:
    """Largest fraction of ``sample``'s box covered by a person nearer the camera.

    Depth order is the ground-plane distance to the camera centre; a person
    at equal or larger distance never counts as an occluder.
    """
    own_dist = _ground_distance(sample, camera)
    area = sample.bbox.area
    worst = 0.0
    for other in same_frame_samples:
        if other.object_id == sample.object_id:
            continue
        if not _ground_distance(other, camera) < own_dist:
            continue
        inter = sample.bbox.intersection_area(other.bbox)
        if inter > 0:
            worst = max(worst, inter / area)
    return min(worst, 1.0)


def score_tracks(
    tracks: Sequence[Track],
    cameras: Mapping[str, CameraModel],
    speed_ref: float = DEFAULT_SPEED_REF,
) -> tuple[list[Track], dict[tuple, ConfidenceReport]]:
    """Attach confidences to every sample of every track.

    Tracks must already carry velocity and smoothed angles. Occlusion is
    evaluated against all samples sharing the sample's camera and frame.
    The first sample of a track has no predecessor and gets zero angle
    variation.
    """
    by_frame: dict[tuple[str, int], list[TrackSample]] = defaultdict(list)
    for tr in tracks:
        for s in tr.samples:
            by_frame[(s.camera_id, s.frame)].append(s)

    reports: dict[tuple, ConfidenceReport] = {}
    scored = []
    for tr in tracks:
        cam = cameras[tr.camera_id]
        out = []
        prev = None
        for s in tr.samples:
            if s.smooth_angle is None or s.velocity is None:
                raise ValueError(f"sample {s.key}: run pose estimation before scoring")
            delta = 0.0 if prev is None else angle_variation(prev, s.smooth_angle)
            prev = s.smooth_angle
            speed = s.speed
            occ = occlusion_rate(s, by_frame[(s.camera_id, s.frame)], cam)
            conf = sample_confidence(delta, speed, occ, speed_ref)
            reports[s.key] = ConfidenceReport(delta, speed, occ, conf)
            out.append(replace(s, confidence=conf))
        scored.append(tr.with_samples(out))
    return scored, reports


def filter_samples(track: Track, threshold: float = DEFAULT_THRESHOLD) -> Track:
    """Keep the samples whose confidence is strictly above ``threshold``."""
    if any(s.confidence is None for s in track.samples):
        raise ValueError(f"track {track.object_id}@{track.camera_id}: confidences missing")
    kept = [s for s in track.samples if s.confidence > threshold]
    if not kept:
        raise AllSamplesRejected(
            f"track {track.object_id}@{track.camera_id}: every sample has confidence <= {threshold}",
            object_id=track.object_id,
            camera_id=track.camera_id,
        )
    return track.with_samples(kept)


def confidence_grid(delta, speed, occlusion, speed_ref: float = DEFAULT_SPEED_REF) -> np.ndarray:
    """Vectorised ``sample_confidence`` with numpy broadcasting."""
    delta, speed, occlusion = np.broadcast_arrays(
        np.asarray(delta, float), np.asarray(speed, float), np.asarray(occlusion, float)
    )
    return np.exp(-np.radians(delta)) * np.tanh(speed / speed_ref) * (1.0 - occlusion)
