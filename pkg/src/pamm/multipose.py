"""Pose groups and multi-pose appearance models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import EmptyTrack, MissingFeature
from .pose import Track

POSES = ("front", "right", "back", "left")
POSE_CODES = ("f", "r", "b", "l")
POSE_INDEX = {p: i for i, p in enumerate(POSES)}
_CODE_TO_POSE = dict(zip(POSE_CODES, POSES))


def pose_label(name: str) -> str:
    """Normalise ``'f'``/``'front'`` style names to the full label."""
    name = name.lower()
    if name in _CODE_TO_POSE:
        return _CODE_TO_POSE[name]
    if name in POSE_INDEX:
        return name
    raise ValueError(f"unknown pose {name!r}")


def assign_pose_group(angle: float) -> str:
    """Front [0,45)+[315,360), right [45,135), back [135,225), left [225,315)."""
    if not 0.0 <= angle < 360.0:
        raise ValueError(f"angle {angle} outside [0, 360)")
    if angle < 45.0 or angle >= 315.0:
        return "front"
    if angle < 135.0:
        return "right"
    if angle < 225.0:
        return "back"
    return "left"


def pose_indices(angles) -> np.ndarray:
    """Vectorised ``assign_pose_group`` returning indices into ``POSES``."""
    a = np.asarray(angles, dtype=float)
    if np.any((a < 0.0) | (a >= 360.0)):
        raise ValueError("angles must lie in [0, 360)")
    return np.select([a < 45.0, a < 135.0, a < 225.0, a < 315.0], [0, 1, 2, 3], default=0)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    descriptor_id: str = "precomputed"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class PoseGroup:
    label: str
    frames: tuple[int, ...]
    features: np.ndarray  # (N_p, d)

    @property
    def count(self) -> int:
        return len(self.frames)


@dataclass(frozen=True, eq=False)
class MultiPoseModel:
    object_id: str
    camera_id: str
    groups: tuple[PoseGroup, PoseGroup, PoseGroup, PoseGroup]

    def __post_init__(self):
        if tuple(g.label for g in self.groups) != POSES:
            raise ValueError("a multi-pose model needs exactly the groups front, right, back, left")
        if sum(g.count for g in self.groups) == 0:
            raise EmptyTrack(f"model {self.object_id}@{self.camera_id} has no samples")

    def group(self, label: str) -> PoseGroup:
        return self.groups[POSE_INDEX[pose_label(label)]]

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return tuple(g.count for g in self.groups)

    @property
    def dim(self) -> int:
        for g in self.groups:
            if g.count:
                return g.features.shape[1]
        raise EmptyTrack("empty model")

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All features as one ``(N, d)`` array plus their pose indices."""
        feats = np.vstack([g.features for g in self.groups if g.count])
        labels = np.concatenate([np.full(g.count, i) for i, g in enumerate(self.groups)])
        return feats, labels

    @classmethod
    def from_arrays(cls, object_id, camera_id, features, angles, frames=None) -> "MultiPoseModel":
        features = np.asarray(features, dtype=float)
        idx = pose_indices(angles)
        frames = np.arange(len(idx)) if frames is None else np.asarray(frames)
        groups = tuple(
            PoseGroup(p, tuple(int(f) for f in frames[idx == i]), features[idx == i].reshape(-1, features.shape[1]))
            for i, p in enumerate(POSES)
        )
        return cls(str(object_id), str(camera_id), groups)


def build_multipose_model(track: Track, features: Mapping[tuple, FeatureVector]) -> MultiPoseModel:
    """Group a filtered track's features by smoothed pose angle.

    ``features`` is keyed by ``(camera_id, object_id, frame)``. Temporal
    order is kept inside each group.
    """
    if len(track) == 0:
        raise EmptyTrack(f"track {track.object_id}@{track.camera_id} is empty")
    rows, angles, frames = [], [], []
    for s in track.samples:
        if s.smooth_angle is None:
            raise ValueError(f"sample {s.key} has no smoothed angle")
        try:
            fv = features[s.key]
        except KeyError:
            raise MissingFeature(f"no feature for sample {s.key}") from None
        rows.append(fv.values)
        angles.append(s.smooth_angle)
        frames.append(s.frame)
    dims = {r.size for r in rows}
    if len(dims) != 1:
        raise ValueError(f"track {track.object_id}@{track.camera_id}: mixed feature dimensions {sorted(dims)}")
    return MultiPoseModel.from_arrays(track.object_id, track.camera_id, np.vstack(rows), angles, frames)
