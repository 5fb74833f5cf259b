"""Pose-weighted matching of multi-pose models and the baseline strategies."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import DimensionMismatch, InputParseError, NoExistingPairs, ZeroWeightMass
from .metric import LearnedMetric, distance_matrix
from .multipose import POSE_CODES, MultiPoseModel

# unordered pose pairs; this is also the coordinate order of training vectors
PAIR_KEYS = ("ff", "fr", "fb", "fl", "rr", "rb", "rl", "bb", "bl", "ll")
SAME_POSE_KEYS = ("ff", "rr", "bb", "ll")
CROSS_POSE_KEYS = ("fr", "fb", "fl", "rb", "rl", "bl")

STRATEGIES = ("SingleMatch", "MultiQ-max", "MultiQ-avg", "FullMatch-min", "FullMatch-avg", "PaMM")
BASELINES = STRATEGIES[:-1]


def pair_key(p, q) -> str:
    """Canonical key of an unordered pose pair, e.g. ``('b', 'f') -> 'fb'``."""
    i = p if isinstance(p, int) else POSE_CODES.index(p[0].lower())
    j = q if isinstance(q, int) else POSE_CODES.index(q[0].lower())
    i, j = min(i, j), max(i, j)
    return POSE_CODES[i] + POSE_CODES[j]


@dataclass(frozen=True)
class MatchWeights:
    """Ten symmetric pose-pair weights ``w_pq = w_qp``."""

    ff: float = 1.0
    fr: float = 1.0
    fb: float = 1.0
    fl: float = 1.0
    rr: float = 1.0
    rb: float = 1.0
    rl: float = 1.0
    bb: float = 1.0
    bl: float = 1.0
    ll: float = 1.0

    def __post_init__(self):
        vals = self.as_vector()
        if not np.all(np.isfinite(vals)) or vals.min() < 0:
            raise ValueError("match weights must be finite and non-negative")
        if vals.max() <= 0:
            raise ValueError("at least one match weight must be positive")

    def lookup(self, p, q) -> float:
        return getattr(self, pair_key(p, q))

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PAIR_KEYS], dtype=float)

    def matrix(self) -> np.ndarray:
        """Symmetric 4x4 weight matrix indexed by pose (f, r, b, l)."""
        W = np.empty((4, 4))
        for i in range(4):
            for j in range(4):
                W[i, j] = self.lookup(i, j)
        return W

    @classmethod
    def from_vector(cls, values) -> "MatchWeights":
        return cls(**{k: float(v) for k, v in zip(PAIR_KEYS, values, strict=True)})

    @classmethod
    def uniform(cls) -> "MatchWeights":
        return cls()

    def to_dict(self) -> dict:
        # JSON key order follows the same-pose-first convention of the file format
        order = SAME_POSE_KEYS + CROSS_POSE_KEYS
        return {k: getattr(self, k) for k in order}

    @classmethod
    def from_dict(cls, data: Mapping) -> "MatchWeights":
        normalised = {}
        for key, value in data.items():
            if len(key) != 2 or any(c not in POSE_CODES for c in key):
                raise InputParseError(f"unknown weight key {key!r}")
            k = pair_key(key[0], key[1])
            if k in normalised and normalised[k] != float(value):
                raise InputParseError(f"asymmetric weights given for {key!r}")
            normalised[k] = float(value)
        missing = [k for k in PAIR_KEYS if k not in normalised]
        if missing:
            raise InputParseError(f"weights file lacks {missing}")
        return cls(**normalised)


def save_weights(weights: MatchWeights, path) -> None:
    Path(path).write_text(json.dumps(weights.to_dict(), indent=2) + "\n")


def load_weights(path) -> MatchWeights:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputParseError(f"cannot read weights {path}: {exc}", path=str(path)) from exc
    try:
        return MatchWeights.from_dict(data.get("weights", data))
    except (InputParseError, ValueError, TypeError) as exc:
        raise InputParseError(f"{path}: {exc}", path=str(path)) from exc


@dataclass(frozen=True, eq=False)
class PairwiseDistances:
    """Every feature distance between two models.

    ``values[i, j]`` is the distance between sample ``i`` of model A
    (pose ``labels_a[i]``) and sample ``j`` of model B.
    """

    values: np.ndarray
    labels_a: np.ndarray
    labels_b: np.ndarray

    @property
    def count(self) -> int:
        return self.values.size

    def block(self, p, q) -> np.ndarray:
        i = p if isinstance(p, int) else POSE_CODES.index(p[0])
        j = q if isinstance(q, int) else POSE_CODES.index(q[0])
        return self.values[np.ix_(self.labels_a == i, self.labels_b == j)]

    def by_pose_pair(self) -> dict[tuple[str, str], np.ndarray]:
        """Non-empty distance blocks keyed by ordered pose pair ``(p, q)``."""
        out = {}
        for i, p in enumerate(POSE_CODES):
            for j, q in enumerate(POSE_CODES):
                blk = self.block(i, j)
                if blk.size:
                    out[(p, q)] = blk
        return out

    def pose_pair_sums(self) -> tuple[np.ndarray, np.ndarray]:
        """4x4 arrays of distance sums and term counts per ordered pose pair."""
        cell = (self.labels_a[:, None] * 4 + self.labels_b[None, :]).ravel()
        sums = np.bincount(cell, weights=self.values.ravel(), minlength=16).reshape(4, 4)
        counts = np.bincount(cell, minlength=16).reshape(4, 4)
        return sums, counts

    def transpose(self) -> "PairwiseDistances":
        return PairwiseDistances(self.values.T, self.labels_b, self.labels_a)


@dataclass(frozen=True, eq=False)
class MatchCost:
    cost: float
    pair_count: int
    existence: np.ndarray  # 4x4 bool


def _check_models(model_a: MultiPoseModel, model_b: MultiPoseModel, metric: LearnedMetric):
    for m in (model_a, model_b):
        if m.dim != metric.d:
            raise DimensionMismatch(f"model {m.object_id}@{m.camera_id} has d={m.dim}, metric expects {metric.d}")


def pairwise_distances(model_a: MultiPoseModel, model_b: MultiPoseModel, metric: LearnedMetric) -> PairwiseDistances:
    _check_models(model_a, model_b, metric)
    Xa, la = model_a.stacked()
    Xb, lb = model_b.stacked()
    return PairwiseDistances(distance_matrix(metric, Xa, Xb), la, lb)


def pamm_cost_from_sums(sums: np.ndarray, counts: np.ndarray, W: np.ndarray) -> float:
    """Weighted mean of distances given per-pose-pair sums and counts."""
    exists = counts > 0
    if not exists.any():
        raise NoExistingPairs("no pose pair has any distance")
    mass = float(np.sum(W * counts))
    if not mass > 0:
        raise ZeroWeightMass("every existing pose pair has zero weight")
    return float(np.sum(W * sums)) / mass


def pamm_cost(distances: PairwiseDistances, weights: MatchWeights) -> MatchCost:
    """Weighted mean of all pairwise distances, weight ``w_pq`` per term.

    Each pose pair that exists contributes ``w_pq`` times each of its
    distances to the numerator and ``w_pq`` times its term count to the
    normaliser, so uniform weights give the plain mean of all distances.
    """
    sums, counts = distances.pose_pair_sums()
    cost = pamm_cost_from_sums(sums, counts, weights.matrix())
    return MatchCost(cost, int(counts.sum()), counts > 0)


def baseline_cost(
    model_a: MultiPoseModel,
    model_b: MultiPoseModel,
    metric: LearnedMetric,
    strategy: str,
    rng: Optional[np.random.Generator] = None,
) -> MatchCost:
    """Cost of one of the non-pose-aware strategies.

    ``SingleMatch`` draws one sample per model uniformly at random from
    ``rng`` (seed 0 when omitted).
    """
    _check_models(model_a, model_b, metric)
    Xa, la = model_a.stacked()
    Xb, lb = model_b.stacked()
    exist = np.zeros((4, 4), dtype=bool)
    if strategy == "SingleMatch":
        rng = np.random.default_rng(0) if rng is None else rng
        i = int(rng.integers(len(Xa)))
        j = int(rng.integers(len(Xb)))
        exist[la[i], lb[j]] = True
        return MatchCost(float(distance_matrix(metric, Xa[i : i + 1], Xb[j : j + 1])[0, 0]), 1, exist)
    if strategy in ("MultiQ-max", "MultiQ-avg"):
        pool = np.max if strategy == "MultiQ-max" else np.mean
        d = distance_matrix(metric, pool(Xa, axis=0)[None], pool(Xb, axis=0)[None])[0, 0]
        return MatchCost(float(d), 1, exist)
    if strategy in ("FullMatch-min", "FullMatch-avg"):
        D = distance_matrix(metric, Xa, Xb)
        exist[np.ix_(np.unique(la), np.unique(lb))] = True
        return MatchCost(float(D.min() if strategy == "FullMatch-min" else D.mean()), D.size, exist)
    raise ValueError(f"unknown baseline strategy {strategy!r}; choose from {BASELINES}")
