"""Per-track processing chain: poses, confidences, filtering, model building."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .camera import CameraModel
from .confidence import DEFAULT_SPEED_REF, DEFAULT_THRESHOLD, ConfidenceReport, filter_samples, score_tracks
from .errors import AllSamplesRejected, TrackTooShort
from .evaluation import ReidDataset
from .multipose import FeatureVector, MultiPoseModel, build_multipose_model
from .pose import DEFAULT_WINDOW, Track, estimate_poses

logger = logging.getLogger(__name__)


@dataclass
class ProcessedTracks:
    scored: list[Track]
    reports: dict[tuple, ConfidenceReport]
    kept: list[Track]
    rejected: list[tuple[str, str, str]] = field(default_factory=list)


def pose_tracks(
    tracks: Sequence[Track],
    cameras: Mapping[str, CameraModel],
    frame_rate: float,
    window_half_width: int = DEFAULT_WINDOW,
) -> tuple[list[Track], list[tuple[str, str, str]]]:
    """Velocity + raw + smoothed angles; single-sample tracks are skipped."""
    out, skipped = [], []
    for tr in tracks:
        try:
            out.append(estimate_poses(tr, cameras[tr.camera_id], frame_rate, window_half_width))
        except TrackTooShort as exc:
            skipped.append((tr.camera_id, tr.object_id, str(exc)))
    return out, skipped


def process_tracks(
    tracks: Sequence[Track],
    cameras: Mapping[str, CameraModel],
    frame_rate: float,
    window_half_width: int = DEFAULT_WINDOW,
    threshold: float = DEFAULT_THRESHOLD,
    speed_ref: float = DEFAULT_SPEED_REF,
) -> ProcessedTracks:
    posed, skipped = pose_tracks(tracks, cameras, frame_rate, window_half_width)
    scored, reports = score_tracks(posed, cameras, speed_ref)
    kept, rejected = filter_tracks(scored, threshold)
    return ProcessedTracks(scored, reports, kept, skipped + rejected)


def filter_tracks(scored: Sequence[Track], threshold: float = DEFAULT_THRESHOLD):
    kept, rejected = [], []
    for tr in scored:
        try:
            kept.append(filter_samples(tr, threshold))
        except AllSamplesRejected as exc:
            rejected.append((tr.camera_id, tr.object_id, str(exc)))
    if rejected:
        logger.info("%d track(s) had every sample rejected", len(rejected))
    return kept, rejected


def build_models(kept: Sequence[Track], features: Mapping[tuple, FeatureVector]) -> list[MultiPoseModel]:
    return [build_multipose_model(tr, features) for tr in kept]


def dataset_from_models(models: Sequence[MultiPoseModel], query_camera: str, gallery_camera: str) -> ReidDataset:
    query = {m.object_id: m for m in models if m.camera_id == query_camera}
    gallery = {m.object_id: m for m in models if m.camera_id == gallery_camera}
    return ReidDataset(query, gallery)
