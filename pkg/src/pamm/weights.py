"""Training the pose-pair matching weights with a bias-free linear SVM.

Training vectors hold one distance per unordered pose pair (ten
coordinates, ``matching.PAIR_KEYS`` order); label +1 for the same person,
-1 for different people. The SVM

    min_w  1/2 |w|^2 + lam * sum_a max(0, 1 - y_a w.x_a)

has no offset term. The primal is minimised directly (the weight vector
has only ten coordinates); the solution is then negated
(same-person pairs have small distances, so informative coordinates get
negative raw weights), clipped at zero and rescaled to a maximum of 2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateTrainingSet, EmptyDistribution, MissingPosePair
from .matching import PAIR_KEYS, MatchWeights, pair_key
from .metric import LearnedMetric
from .multipose import FeatureVector

logger = logging.getLogger(__name__)

WEIGHT_MAX = 2.0
SUBSTITUTE_PAIR = ("rl", "fb")


@dataclass(frozen=True)
class DistanceSample:
    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        if x.shape != (len(PAIR_KEYS),) or not np.all(np.isfinite(x)) or x.min() < 0:
            raise ValueError("a distance sample needs 10 finite non-negative distances")
        if self.y not in (-1, 1):
            raise ValueError("label must be -1 or +1")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class SvmConfig:
    lam: float = 1.0
    max_iterations: int = 500
    tolerance: float = 1e-10

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


@dataclass(frozen=True, eq=False)
class SvmSolution:
    w: np.ndarray
    alpha: np.ndarray
    slack: np.ndarray
    objective: float
    dual_objective: float
    iterations: int
    converged: bool

    @property
    def non_separable(self) -> bool:
        return bool(np.any(self.slack > 1e-9))


@dataclass(frozen=True, eq=False)
class LabeledPosePair:
    feature_a: FeatureVector
    pose_a: str
    feature_b: FeatureVector
    pose_b: str
    same_identity: bool


@dataclass(frozen=True, eq=False)
class DistanceDistributions:
    positive: Mapping[str, np.ndarray]
    negative: Mapping[str, np.ndarray]
    substituted: tuple[str, ...] = field(default=())

    def counts(self) -> dict[str, tuple[int, int]]:
        return {k: (len(self.positive[k]), len(self.negative[k])) for k in PAIR_KEYS}


def distributions_from_values(values: Mapping[str, Sequence[float]], labels: Mapping[str, Sequence[bool]]) -> DistanceDistributions:
    """Split per-pose-pair distances into classes, copying (r,l) from (f,b) where empty."""
    pos, neg = {}, {}
    for k in PAIR_KEYS:
        v = np.asarray(values.get(k, ()), dtype=float)
        lab = np.asarray(labels.get(k, ()), dtype=bool)
        pos[k] = v[lab]
        neg[k] = v[~lab]
    substituted = []
    target, source = SUBSTITUTE_PAIR
    for klass, store in (("positive", pos), ("negative", neg)):
        if len(store[target]) == 0:
            store[target] = store[source].copy()
            substituted.append(klass)
    for k in PAIR_KEYS:
        for klass, store in (("positive", pos), ("negative", neg)):
            if len(store[k]) == 0:
                raise MissingPosePair(k, klass)
    return DistanceDistributions(pos, neg, tuple(substituted))


def build_distance_distributions(pairs: Sequence[LabeledPosePair], metric: LearnedMetric) -> DistanceDistributions:
    """Distances of labelled pairs, grouped by unordered pose pair and class.

    When the (r,l) pair has no data for a class, that class is copied from
    the (f,b) distribution.
    """
    values: dict[str, list[float]] = {k: [] for k in PAIR_KEYS}
    labels: dict[str, list[bool]] = {k: [] for k in PAIR_KEYS}
    if pairs:
        A = np.vstack([p.feature_a.values for p in pairs])
        B = np.vstack([p.feature_b.values for p in pairs])
        d = np.sqrt(np.sum((metric.embed(A) - metric.embed(B)) ** 2, axis=1))
        for p, dist in zip(pairs, d):
            k = pair_key(p.pose_a, p.pose_b)
            values[k].append(float(dist))
            labels[k].append(bool(p.same_identity))
    return distributions_from_values(values, labels)


def sample_training_vectors(
    distributions: DistanceDistributions, count_pos: int, count_neg: int, seed: int = 0
) -> list[DistanceSample]:
    """Draw training vectors coordinate-wise from the per-pair distributions."""
    return [DistanceSample(x, int(y)) for x, y in zip(*sample_training_arrays(distributions, count_pos, count_neg, seed))]


def sample_training_arrays(distributions: DistanceDistributions, count_pos: int, count_neg: int, seed: int = 0):
    """Array form of ``sample_training_vectors``: ``(X, y)``, positives first."""
    if count_pos < 0 or count_neg < 0:
        raise ValueError("sample counts must be non-negative")
    for k in PAIR_KEYS:
        for klass, store in (("positive", distributions.positive), ("negative", distributions.negative)):
            if len(store[k]) == 0:
                raise EmptyDistribution(f"{klass} distribution of {k} is empty")
    rng = np.random.default_rng(seed)
    X = np.empty((count_pos + count_neg, len(PAIR_KEYS)))
    for c, k in enumerate(PAIR_KEYS):
        X[:count_pos, c] = rng.choice(distributions.positive[k], size=count_pos)
        X[count_pos:, c] = rng.choice(distributions.negative[k], size=count_neg)
    y = np.concatenate([np.ones(count_pos, dtype=int), -np.ones(count_neg, dtype=int)])
    return X, y


def _smoothed_newton(X, y, lam, eps, w, max_iter, grad_tol):
    """Newton's method with backtracking on the hinge smoothed over a width ``eps``."""
    yX = y[:, None] * X

    def value(v):
        z = 1.0 - yX @ v
        h = np.where(z >= eps, z - 0.5 * eps, np.where(z > 0.0, 0.5 * z * z / eps, 0.0))
        return 0.5 * float(v @ v) + lam * float(h.sum()), z

    f, z = value(w)
    it = 0
    for it in range(1, max_iter + 1):
        slope = np.clip(z / eps, 0.0, 1.0)
        grad = w - lam * (slope @ yX)
        if np.linalg.norm(grad) <= grad_tol:
            break
        zone = (z > 0.0) & (z < eps)
        H = np.eye(len(w)) + (lam / eps) * (yX[zone].T @ yX[zone])
        step = -np.linalg.solve(H, grad)
        decrease = float(grad @ step)
        t = 1.0
        while True:
            f_new, z_new = value(w + t * step)
            if f_new <= f + 1e-4 * t * decrease or t < 1e-12:
                break
            t *= 0.5
        if f - f_new <= 1e-16 * max(1.0, abs(f)):
            w, f, z = w + t * step, f_new, z_new
            break
        w, f, z = w + t * step, f_new, z_new
    return w, it


def _dual_certificate(X, y, lam, w, eps):
    """Dual point implied by ``w``; its objective lower-bounds the primal optimum."""
    z = 1.0 - y * (X @ w)
    alpha = lam * np.clip(z / eps, 0.0, 1.0)
    v = (alpha * y) @ X
    return alpha, float(alpha.sum()) - 0.5 * float(v @ v)


def solve_svm(X, y, config: SvmConfig = SvmConfig()) -> SvmSolution:
    """Bias-free soft-margin linear SVM.

    The weight vector is low-dimensional, so the primal is minimised directly:
    the hinge is replaced by a quadratically smoothed version whose width is
    shrunk geometrically, each stage solved by Newton's method from the
    previous solution. Iteration stops once the duality gap falls below
    ``tolerance`` (relative to the objective).
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(X) == 0:
        raise ValueError("X must be (n, d) with n labels")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateTrainingSet("both classes are required")
    if np.all(X == X[0]):
        raise DegenerateTrainingSet("all training vectors are identical")
    lam = float(config.lam)
    w = np.zeros(X.shape[1])
    eps = 1.0
    iters = 0
    converged = False
    primal = dual = np.inf
    alpha = np.zeros(len(X))
    while iters < config.max_iterations:
        w, k = _smoothed_newton(X, y, lam, eps, w, config.max_iterations - iters, 1e-12 * max(1.0, lam * len(X)))
        iters += k
        primal = svm_objective(w, X, y, lam)
        alpha, dual = _dual_certificate(X, y, lam, w, eps)
        if primal - dual <= config.tolerance * max(1.0, abs(primal)):
            converged = True
            break
        if eps < 1e-14:
            break
        eps *= 0.1
    margins = y * (X @ w)
    slack = np.maximum(0.0, 1.0 - margins)
    if not converged:
        logger.warning("SVM stopped after %d Newton steps with duality gap %.3g", iters, primal - dual)
    return SvmSolution(w, alpha, slack, primal, dual, int(iters), bool(converged))


def svm_objective(w, X, y, lam: float) -> float:
    w = np.asarray(w, dtype=float)
    return 0.5 * float(w @ w) + lam * float(np.maximum(0.0, 1.0 - y * (X @ w)).sum())


def equalize_weights(raw_w: np.ndarray) -> np.ndarray:
    """Negate, clip at zero and rescale so the largest weight is 2."""
    u = np.clip(-np.asarray(raw_w, dtype=float), 0.0, None)
    if not u.max() > 0:
        raise DegenerateTrainingSet("no pose pair received a positive weight")
    return WEIGHT_MAX * u / u.max()


@dataclass(frozen=True, eq=False)
class TrainedWeights:
    weights: MatchWeights
    solution: SvmSolution

    @property
    def non_separable(self) -> bool:
        return self.solution.non_separable

    def metadata(self) -> dict:
        s = self.solution
        return {
            "raw_w": dict(zip(PAIR_KEYS, (float(v) for v in s.w))),
            "objective": s.objective,
            "dual_objective": s.dual_objective,
            "iterations": s.iterations,
            "converged": s.converged,
            "non_separable": s.non_separable,
        }


def train_weights(samples, config: SvmConfig = SvmConfig()) -> TrainedWeights:
    """Fit the matching weights from distance samples.

    ``samples`` is a sequence of ``DistanceSample`` or an ``(X, y)`` tuple.
    """
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        X, y = samples
    else:
        if not samples:
            raise DegenerateTrainingSet("no training samples")
        X = np.vstack([s.x for s in samples])
        y = np.array([s.y for s in samples], dtype=float)
    solution = solve_svm(X, y, config)
    return TrainedWeights(MatchWeights.from_vector(equalize_weights(solution.w)), solution)


def pose_pair_training_set(
    models_a: Mapping[str, "object"],
    models_b: Mapping[str, "object"],
    ids: Sequence[str],
    max_pos_per_identity: int = 40,
    neg_per_pos: int = 10,
    seed: int = 0,
) -> list[LabeledPosePair]:
    """Pose-labelled cross-camera sample pairs from two sets of multi-pose models.

    Positives pair samples of the same identity, negatives pair samples of
    different identities; both are drawn uniformly over samples.
    """
    from .multipose import POSE_CODES

    rng = np.random.default_rng(seed)
    ids = list(ids)
    stacks_a = {k: models_a[k].stacked() for k in ids}
    stacks_b = {k: models_b[k].stacked() for k in ids}
    pairs: list[LabeledPosePair] = []

    def _pick(stack):
        X, lab = stack
        i = int(rng.integers(len(X)))
        return FeatureVector(X[i]), POSE_CODES[lab[i]]

    n_pos = 0
    for k in ids:
        for _ in range(max_pos_per_identity):
            fa, pa = _pick(stacks_a[k])
            fb, pb = _pick(stacks_b[k])
            pairs.append(LabeledPosePair(fa, pa, fb, pb, True))
            n_pos += 1
    if len(ids) > 1:
        for _ in range(n_pos * neg_per_pos):
            i, j = rng.choice(len(ids), size=2, replace=False)
            fa, pa = _pick(stacks_a[ids[i]])
            fb, pb = _pick(stacks_b[ids[j]])
            pairs.append(LabeledPosePair(fa, pa, fb, pb, False))
    return pairs
