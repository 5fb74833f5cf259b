"""PCA pre-projection and Mahalanobis-type metric learning.

A ``LearnedMetric`` measures

    d(a, b) = sqrt((P(a) - P(b))^T M (P(a) - P(b))),   P(x) = B^T (x - mean)

where ``B`` holds the leading principal directions and ``M`` is PSD.
Three learners are provided: ``euclidean`` (M = I), ``mahalanobis``
(inverse covariance of same-identity differences) and ``kissme``
(difference of inverse covariances of same- and different-identity
differences, clipped to the PSD cone).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InputParseError, InsufficientPairs, RankDeficientWarning, SingularCovariance
from .multipose import FeatureVector

LEARNERS = ("euclidean", "mahalanobis", "kissme")
DEFAULT_PCA_DIM = 64
DEFAULT_REGULARIZATION = 1e-3
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class PairLabel:
    feature_a: FeatureVector
    feature_b: FeatureVector
    same_identity: bool

    def __post_init__(self):
        if self.feature_a.dim != self.feature_b.dim:
            raise DimensionMismatch(f"pair dimensions differ: {self.feature_a.dim} vs {self.feature_b.dim}")


def nearest_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetrise and clip negative eigenvalues to zero."""
    sym = 0.5 * (matrix + matrix.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() >= 0:
        return sym
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


@dataclass(frozen=True, eq=False)
class LearnedMetric:
    pca_mean: np.ndarray
    pca_basis: np.ndarray
    M: np.ndarray
    learner_id: str = "euclidean"
    _factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.array(self.pca_mean, dtype=float).reshape(-1)
        basis = np.array(self.pca_basis, dtype=float)
        M = np.array(self.M, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != mean.size:
            raise DimensionMismatch(f"PCA basis {basis.shape} does not match mean of size {mean.size}")
        if M.shape != (basis.shape[1], basis.shape[1]):
            raise DimensionMismatch(f"M {M.shape} does not match reduced dimension {basis.shape[1]}")
        if self.learner_id not in LEARNERS:
            raise ValueError(f"unknown learner {self.learner_id!r}")
        M = 0.5 * (M + M.T)
        vals, vecs = np.linalg.eigh(M)
        if vals.min() < -1e-8 * max(1.0, abs(vals).max()):
            raise ValueError("metric matrix is not positive semi-definite")
        # M = F^T F, used to embed vectors so that d(a, b) = |F P(a) - F P(b)|
        factor = (vecs * np.sqrt(np.clip(vals, 0.0, None))).T
        for name, arr in (("pca_mean", mean), ("pca_basis", basis), ("M", M), ("_factor", factor)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.pca_basis.shape[0]

    @property
    def r(self) -> int:
        return self.pca_basis.shape[1]

    @classmethod
    def identity(cls, d: int) -> "LearnedMetric":
        """Plain Euclidean distance on the raw features."""
        return cls(np.zeros(d), np.eye(d), np.eye(d), "euclidean")

    def full_matrix(self) -> np.ndarray:
        """``B M B^T``: the metric expressed on the original coordinates."""
        return self.pca_basis @ self.M @ self.pca_basis.T

    def project(self, X) -> np.ndarray:
        """PCA coordinates of the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise DimensionMismatch(f"feature dimension {X.shape[-1]} != metric dimension {self.d}")
        return (X - self.pca_mean) @ self.pca_basis

    def embed(self, X) -> np.ndarray:
        """Map rows of ``X`` into a space where the metric is Euclidean."""
        return self.project(X) @ self._factor.T

    def to_dict(self) -> dict:
        return {
            "learner_id": self.learner_id,
            "d": self.d,
            "r": self.r,
            "pca_mean": self.pca_mean.tolist(),
            "pca_basis": self.pca_basis.tolist(),
            "M": self.M.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LearnedMetric":
        try:
            metric = cls(np.asarray(data["pca_mean"]), np.asarray(data["pca_basis"]), np.asarray(data["M"]), data["learner_id"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DimensionMismatch):
                raise InputParseError(f"inconsistent metric file: {exc}") from exc
            raise InputParseError(f"malformed metric file: {exc}") from exc
        if metric.d != data.get("d", metric.d) or metric.r != data.get("r", metric.r):
            raise InputParseError("metric file: declared d/r disagree with the arrays")
        return metric


def save_metric(metric: LearnedMetric, path) -> None:
    Path(path).write_text(json.dumps(metric.to_dict()) + "\n")


def load_metric(path) -> LearnedMetric:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputParseError(f"cannot read metric {path}: {exc}", path=str(path)) from exc
    try:
        return LearnedMetric.from_dict(data)
    except InputParseError as exc:
        exc.path = str(path)
        raise


def _as_matrix(features) -> np.ndarray:
    if len(features) and isinstance(features[0], FeatureVector):
        return np.vstack([f.values for f in features])
    return np.asarray(features, dtype=float)


def fit_pca(features, target_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and top-``target_dim`` principal directions of ``features``.

    Columns are orthonormal, ordered by decreasing variance, and signed so
    that each column's largest-magnitude entry is positive. If the data
    has fewer than ``target_dim`` non-zero variance directions, the basis
    is truncated and a ``RankDeficientWarning`` is issued.
    """
    X = _as_matrix(features)
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    if not 1 <= target_dim <= min(d, n):
        raise ValueError(f"target dimension {target_dim} must lie in [1, min(d={d}, n={n})]")
    mean = X.mean(axis=0)
    Xc = X - mean
    # SVD of the centred data: right singular vectors are covariance eigenvectors
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    eig = s**2 / (n - 1)
    nonzero = int(np.sum(eig > _RANK_TOL * max(eig[0], 1e-300)))
    r = target_dim
    if nonzero < target_dim:
        warnings.warn(
            f"only {nonzero} non-zero principal directions; basis truncated from {target_dim}",
            RankDeficientWarning,
            stacklevel=2,
        )
        r = max(nonzero, 1)
    basis = vt[:r].T.copy()
    pivots = np.abs(basis).argmax(axis=0)
    signs = np.sign(basis[pivots, np.arange(r)])
    basis *= np.where(signs == 0, 1.0, signs)
    return mean, basis


def _difference_covariance(diffs: np.ndarray, regularization: float) -> np.ndarray:
    cov = diffs.T @ diffs / len(diffs)
    r = cov.shape[0]
    trace = np.trace(cov)
    cov = cov + regularization * trace / r * np.eye(r)
    if not trace > 0 or not np.isfinite(cov).all():
        raise SingularCovariance("difference covariance is zero; nothing to learn from")
    if np.linalg.eigvalsh(cov).min() <= 1e-12 * trace / r:
        raise SingularCovariance("difference covariance stays singular after ridge regularisation")
    return cov


def learn_metric_from_differences(
    pos_diffs: np.ndarray,
    neg_diffs: Optional[np.ndarray],
    learner_id: str,
    regularization: float = DEFAULT_REGULARIZATION,
) -> np.ndarray:
    """``M`` from pair differences already expressed in PCA coordinates."""
    pos_diffs = np.asarray(pos_diffs, dtype=float)
    r = pos_diffs.shape[1]
    if learner_id == "euclidean":
        return np.eye(r)
    if len(pos_diffs) < r + 1:
        raise InsufficientPairs(f"{learner_id} needs at least {r + 1} same-identity pairs, got {len(pos_diffs)}")
    inv_pos = np.linalg.inv(_difference_covariance(pos_diffs, regularization))
    if learner_id == "mahalanobis":
        return nearest_psd(inv_pos)
    if learner_id == "kissme":
        if neg_diffs is None or len(neg_diffs) < 1:
            raise InsufficientPairs("kissme needs at least one different-identity pair")
        inv_neg = np.linalg.inv(_difference_covariance(np.asarray(neg_diffs, dtype=float), regularization))
        return nearest_psd(inv_pos - inv_neg)
    raise ValueError(f"unknown learner {learner_id!r}; choose from {LEARNERS}")


def learn_metric(
    pairs: Sequence[PairLabel],
    learner_id: str = "kissme",
    regularization: float = DEFAULT_REGULARIZATION,
    pca_dim: int = DEFAULT_PCA_DIM,
    pca_features=None,
) -> LearnedMetric:
    """Fit PCA and learn ``M`` from labelled feature pairs.

    PCA is fitted on ``pca_features`` when given, otherwise on every pair
    endpoint. ``pca_dim`` is capped at what the data supports.
    """
    if learner_id not in LEARNERS:
        raise ValueError(f"unknown learner {learner_id!r}; choose from {LEARNERS}")
    if not pairs:
        raise InsufficientPairs("no training pairs")
    A = np.vstack([p.feature_a.values for p in pairs])
    B = np.vstack([p.feature_b.values for p in pairs])
    same = np.array([p.same_identity for p in pairs], dtype=bool)
    basis_data = np.vstack([A, B]) if pca_features is None else _as_matrix(pca_features)
    return learn_metric_arrays(A, B, same, learner_id, regularization, pca_dim, basis_data)


def learn_metric_arrays(
    A: np.ndarray,
    B: np.ndarray,
    same: np.ndarray,
    learner_id: str = "kissme",
    regularization: float = DEFAULT_REGULARIZATION,
    pca_dim: int = DEFAULT_PCA_DIM,
    pca_data: Optional[np.ndarray] = None,
) -> LearnedMetric:
    """Array form of ``learn_metric``: row ``i`` of ``A`` and ``B`` is a pair."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    same = np.asarray(same, dtype=bool)
    if A.shape != B.shape:
        raise DimensionMismatch(f"pair arrays differ in shape: {A.shape} vs {B.shape}")
    pca_data = np.vstack([A, B]) if pca_data is None else np.asarray(pca_data, dtype=float)
    if pca_data.shape[1] != A.shape[1]:
        raise DimensionMismatch("PCA data and pairs differ in feature dimension")
    r = min(pca_dim, pca_data.shape[1], len(pca_data))
    mean, basis = fit_pca(pca_data, r)
    diffs = (A - B) @ basis
    M = learn_metric_from_differences(diffs[same], diffs[~same], learner_id, regularization)
    return LearnedMetric(mean, basis, M, learner_id)


def metric_distance(metric: LearnedMetric, a, b) -> float:
    """Distance between two feature vectors under ``metric``."""
    va = a.values if isinstance(a, FeatureVector) else np.asarray(a, dtype=float)
    vb = b.values if isinstance(b, FeatureVector) else np.asarray(b, dtype=float)
    if va.shape != (metric.d,) or vb.shape != (metric.d,):
        raise DimensionMismatch(f"expected {metric.d}-vectors, got {va.shape} and {vb.shape}")
    diff = (va - vb) @ metric.pca_basis
    return float(np.sqrt(max(diff @ metric.M @ diff, 0.0)))


def distance_matrix(metric: LearnedMetric, X, Y) -> np.ndarray:
    """All distances between rows of ``X`` and rows of ``Y``."""
    from scipy.spatial.distance import cdist

    return cdist(metric.embed(X), metric.embed(Y))
