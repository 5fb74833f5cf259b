"""Track CSV, feature file and multi-pose model file formats."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .confidence import ConfidenceReport
from .errors import InputParseError
from .multipose import POSES, FeatureVector, MultiPoseModel, PoseGroup
from .pose import BoundingBox, Track, TrackSample

TRACK_COLUMNS = ("camera_id", "object_id", "frame", "world_x", "world_y", "bbox_x", "bbox_y", "bbox_w", "bbox_h")
POSE_COLUMNS = ("vx", "vy", "raw_angle", "smooth_angle")
CONFIDENCE_COLUMNS = ("delta", "speed", "occlusion", "confidence")
FEATURE_HEADER = ("object_id", "camera_id", "frame", "d")


def _fmt(x: float) -> str:
    return repr(float(x))


def _open_csv(path):
    try:
        return open(path, newline="")
    except OSError as exc:
        raise InputParseError(f"cannot open {path}: {exc}", path=str(path)) from exc


def read_tracks(path) -> list[Track]:
    """Read a track CSV; optional pose and confidence columns are picked up."""
    samples: dict[tuple[str, str], list[TrackSample]] = defaultdict(list)
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACK_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise InputParseError(f"{path}: missing columns {missing}", path=str(path))
        has_pose = all(c in reader.fieldnames for c in POSE_COLUMNS)
        has_conf = "confidence" in reader.fieldnames
        for lineno, row in enumerate(reader, start=2):
            try:
                s = TrackSample(
                    object_id=row["object_id"],
                    camera_id=row["camera_id"],
                    frame=int(row["frame"]),
                    world_pos=(float(row["world_x"]), float(row["world_y"])),
                    bbox=BoundingBox(float(row["bbox_x"]), float(row["bbox_y"]), float(row["bbox_w"]), float(row["bbox_h"])),
                    velocity=(float(row["vx"]), float(row["vy"])) if has_pose else None,
                    raw_angle=float(row["raw_angle"]) if has_pose else None,
                    smooth_angle=float(row["smooth_angle"]) if has_pose else None,
                    confidence=float(row["confidence"]) if has_conf else None,
                )
            except (TypeError, ValueError) as exc:
                raise InputParseError(f"{path}:{lineno}: {exc}", path=str(path)) from exc
            samples[(s.camera_id, s.object_id)].append(s)
    tracks = []
    for (cam, obj), ss in sorted(samples.items()):
        ss.sort(key=lambda s: s.frame)
        try:
            tracks.append(Track(obj, cam, tuple(ss)))
        except ValueError as exc:
            raise InputParseError(f"{path}: {exc}", path=str(path)) from exc
    return tracks


def write_tracks(
    tracks: Iterable[Track],
    path,
    with_pose: bool = False,
    reports: Optional[Mapping[tuple, ConfidenceReport]] = None,
) -> None:
    header = list(TRACK_COLUMNS)
    if with_pose:
        header += POSE_COLUMNS
    if reports is not None:
        header += CONFIDENCE_COLUMNS
    rows = []
    for tr in tracks:
        for s in tr.samples:
            b = s.bbox
            row = [s.camera_id, s.object_id, str(s.frame)] + [
                _fmt(v) for v in (s.world_pos[0], s.world_pos[1], b.x, b.y, b.w, b.h)
            ]
            if with_pose:
                row += [_fmt(s.velocity[0]), _fmt(s.velocity[1]), _fmt(s.raw_angle), _fmt(s.smooth_angle)]
            if reports is not None:
                r = reports[s.key]
                row += [_fmt(r.delta), _fmt(r.speed), _fmt(r.occlusion), _fmt(r.confidence)]
            rows.append(row)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_features(path) -> dict[tuple[str, str, int], FeatureVector]:
    """Feature file: header ``object_id,camera_id,frame,d``; rows ``obj,cam,frame,d,v1..vd``."""
    out: dict[tuple[str, str, int], FeatureVector] = {}
    dim = None
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header[:4]) != FEATURE_HEADER:
            raise InputParseError(f"{path}: feature file must start with header {','.join(FEATURE_HEADER)}", path=str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                obj, cam, frame, d = row[0], row[1], int(row[2]), int(row[3])
                values = np.array([float(v) for v in row[4:]])
            except (IndexError, ValueError) as exc:
                raise InputParseError(f"{path}:{lineno}: {exc}", path=str(path)) from exc
            if values.size != d:
                raise InputParseError(f"{path}:{lineno}: declared d={d} but {values.size} values", path=str(path))
            if dim is None:
                dim = d
            elif d != dim:
                raise InputParseError(f"{path}:{lineno}: dimension {d} differs from {dim}", path=str(path))
            try:
                out[(cam, obj, frame)] = FeatureVector(values)
            except ValueError as exc:
                raise InputParseError(f"{path}:{lineno}: {exc}", path=str(path)) from exc
    return out


def write_features(features: Mapping[tuple[str, str, int], FeatureVector], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_HEADER)
        for (cam, obj, frame), fv in features.items():
            w.writerow([obj, cam, frame, fv.dim] + [_fmt(v) for v in fv.values])


def models_to_dict(models: Sequence[MultiPoseModel]) -> dict:
    return {
        "models": [
            {
                "object_id": m.object_id,
                "camera_id": m.camera_id,
                "groups": {
                    g.label: {"frames": list(g.frames), "features": g.features.tolist()} for g in m.groups
                },
            }
            for m in models
        ]
    }


def models_from_dict(data: dict) -> list[MultiPoseModel]:
    models = []
    for rec in data["models"]:
        raw = [(label, rec["groups"][label]) for label in POSES]
        dims = {len(g["features"][0]) for _, g in raw if g["features"]}
        if len(dims) > 1:
            raise ValueError(f"model {rec['object_id']} mixes feature dimensions {sorted(dims)}")
        d = dims.pop() if dims else 0
        groups = []
        for label, g in raw:
            frames = tuple(int(f) for f in g["frames"])
            feats = np.asarray(g["features"], dtype=float).reshape(len(frames), d)
            groups.append(PoseGroup(label, frames, feats))
        models.append(MultiPoseModel(str(rec["object_id"]), str(rec["camera_id"]), tuple(groups)))
    return models


def write_models(models: Sequence[MultiPoseModel], path) -> None:
    Path(path).write_text(json.dumps(models_to_dict(models)) + "\n")


def read_models(path) -> list[MultiPoseModel]:
    try:
        data = json.loads(Path(path).read_text())
        return models_from_dict(data)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputParseError(f"cannot read models {path}: {exc}", path=str(path)) from exc
