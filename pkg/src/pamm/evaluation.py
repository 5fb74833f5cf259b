"""Re-identification evaluation: identity splits, CMC curves, repeated trials."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import TooFewIdentities, TruthMissing, ZeroWeightMass
from .matching import STRATEGIES, MatchWeights, pamm_cost_from_sums
from .metric import DEFAULT_PCA_DIM, DEFAULT_REGULARIZATION, LearnedMetric, learn_metric_arrays
from .multipose import MultiPoseModel
from .weights import (
    SvmConfig,
    build_distance_distributions,
    pose_pair_training_set,
    sample_training_arrays,
    train_weights,
)

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = 10
SINGLE_MATCH_REPEATS = 10


def split_identities(ids: Sequence, seed: int) -> tuple[list, list]:
    """Random split into a training half of ``ceil(n/2)`` and a test half."""
    ids = list(ids)
    if len(ids) < 2:
        raise TooFewIdentities(f"need at least 2 identities, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("identity list has duplicates")
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train = math.ceil(len(ids) / 2)
    train = [ids[i] for i in sorted(perm[:n_train])]
    test = [ids[i] for i in sorted(perm[n_train:])]
    return train, test


@dataclass(frozen=True, eq=False)
class CmcCurve:
    accuracy_at_rank: np.ndarray
    ranks_of_truth: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def auc(self) -> float:
        return float(np.mean(self.accuracy_at_rank))

    @property
    def gallery_size(self) -> int:
        return len(self.accuracy_at_rank)

    def rank(self, n: int) -> float:
        """Accuracy within the first ``n`` ranks."""
        return float(self.accuracy_at_rank[n - 1])


def match_ranks(cost_matrix, truth) -> np.ndarray:
    """1-based rank of each query's true gallery entry.

    Entries with strictly lower cost rank ahead; equal costs are ordered
    by gallery index.
    """
    C = np.asarray(cost_matrix, dtype=float)
    truth = np.asarray(truth)
    if C.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if truth.shape != (C.shape[0],):
        raise TruthMissing("need exactly one true gallery index per query")
    if np.any(truth < 0) or np.any(truth >= C.shape[1]):
        raise TruthMissing("true gallery index out of range")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    q = np.arange(C.shape[0])
    true_cost = C[q, truth][:, None]
    cols = np.arange(C.shape[1])[None, :]
    ahead = (C < true_cost) | ((C == true_cost) & (cols < truth[:, None]))
    return 1 + ahead.sum(axis=1)


def compute_cmc(cost_matrix, truth) -> CmcCurve:
    """Cumulative match curve over ranks ``1..G``."""
    ranks = match_ranks(cost_matrix, truth)
    G = np.asarray(cost_matrix).shape[1]
    hist = np.bincount(ranks, minlength=G + 1)[1:]
    return CmcCurve(np.cumsum(hist) / len(ranks), ranks)


# --------------------------------------------------------------------------
# repeated-trial protocol


@dataclass(frozen=True, eq=False)
class ReidDataset:
    """Multi-pose models of the identities seen by a query and a gallery camera."""

    query: Mapping[str, MultiPoseModel]
    gallery: Mapping[str, MultiPoseModel]

    @property
    def identities(self) -> list[str]:
        return sorted(set(self.query) & set(self.gallery))


@dataclass
class EvaluationConfig:
    trial_seeds: Sequence[int] = tuple(range(DEFAULT_TRIALS))
    strategies: Sequence[str] = STRATEGIES
    learner: str = "kissme"
    pca_dim: int = DEFAULT_PCA_DIM
    regularization: float = DEFAULT_REGULARIZATION
    max_pos_per_identity: int = 200
    neg_per_pos: int = 10
    # weights: fixed weights win, then per-split retraining, else uniform
    weights: Optional[MatchWeights] = None
    retrain_weights: bool = True
    svm_lambda: float = 1.0
    weight_pos: int = 3520
    weight_neg: int = 35200
    weight_pairs_per_identity: int = 40
    single_match_repeats: int = SINGLE_MATCH_REPEATS
    jobs: int = 1

    def __post_init__(self):
        unknown = [s for s in self.strategies if s not in STRATEGIES]
        if unknown:
            raise ValueError(f"unknown strategies {unknown}; choose from {STRATEGIES}")


@dataclass(frozen=True, eq=False)
class StrategyResult:
    strategy: str
    curves: list[CmcCurve]
    seeds: list[int]

    @property
    def mean_accuracy(self) -> np.ndarray:
        return np.mean([c.accuracy_at_rank for c in self.curves], axis=0)

    @property
    def std(self) -> np.ndarray:
        return np.std([c.accuracy_at_rank for c in self.curves], axis=0)

    @property
    def auc(self) -> float:
        return float(np.mean(self.mean_accuracy))

    def to_dict(self) -> dict:
        mean = self.mean_accuracy
        return {
            "strategy": self.strategy,
            "ranks": list(range(1, len(mean) + 1)),
            "mean_accuracy": [float(v) for v in mean],
            "std": [float(v) for v in self.std],
            "auc": self.auc,
            "trials": len(self.curves),
            "seeds": [int(s) for s in self.seeds],
        }


def training_pairs(dataset: ReidDataset, ids: Sequence[str], max_pos_per_identity: int, neg_per_pos: int, seed: int):
    """Cross-camera feature pairs of the training identities as arrays ``(A, B, same)``.

    Positives pair every query-camera sample of an identity with every
    gallery-camera sample (subsampled to ``max_pos_per_identity``);
    negatives pair random samples of random different identities.
    """
    rng = np.random.default_rng(seed)
    stacks_q = [dataset.query[k].stacked()[0] for k in ids]
    stacks_g = [dataset.gallery[k].stacked()[0] for k in ids]
    A, B = [], []
    for Xq, Xg in zip(stacks_q, stacks_g):
        n = len(Xq) * len(Xg)
        flat = np.arange(n) if n <= max_pos_per_identity else rng.choice(n, size=max_pos_per_identity, replace=False)
        A.append(Xq[flat // len(Xg)])
        B.append(Xg[flat % len(Xg)])
    n_pos = sum(len(a) for a in A)
    n_neg = n_pos * neg_per_pos
    qi = rng.integers(len(ids), size=n_neg)
    gi = (qi + rng.integers(1, len(ids), size=n_neg)) % len(ids)
    for i, j in zip(qi, gi):
        A.append(stacks_q[i][rng.integers(len(stacks_q[i]))][None])
        B.append(stacks_g[j][rng.integers(len(stacks_g[j]))][None])
    same = np.zeros(n_pos + n_neg, dtype=bool)
    same[:n_pos] = True
    return np.vstack(A), np.vstack(B), same


def learn_trial_metric(dataset: ReidDataset, ids: Sequence[str], config: EvaluationConfig, seed: int) -> LearnedMetric:
    A, B, same = training_pairs(dataset, ids, config.max_pos_per_identity, config.neg_per_pos, seed)
    pca_data = np.vstack([dataset.query[k].stacked()[0] for k in ids] + [dataset.gallery[k].stacked()[0] for k in ids])
    return learn_metric_arrays(A, B, same, config.learner, config.regularization, config.pca_dim, pca_data)


def train_dataset_weights(
    dataset: ReidDataset,
    ids: Sequence[str],
    metric: LearnedMetric,
    config: EvaluationConfig,
    seed: int,
):
    """Matching weights from the pose-labelled pairs of ``ids`` under ``metric``."""
    pairs = pose_pair_training_set(
        dataset.query, dataset.gallery, ids, config.weight_pairs_per_identity, config.neg_per_pos, seed
    )
    dists = build_distance_distributions(pairs, metric)
    X, y = sample_training_arrays(dists, config.weight_pos, config.weight_neg, seed)
    return train_weights((X, y), SvmConfig(lam=config.svm_lambda))


def cost_matrices(
    dataset: ReidDataset,
    test_ids: Sequence[str],
    metric: LearnedMetric,
    strategies: Sequence[str],
    weights: MatchWeights,
    rng: np.random.Generator,
    single_match_repeats: int = SINGLE_MATCH_REPEATS,
    gallery_ids: Optional[Sequence[str]] = None,
) -> dict[str, list[np.ndarray]]:
    """Query x gallery cost matrices per strategy (several for SingleMatch).

    Rows follow ``test_ids`` in the query camera; columns follow
    ``gallery_ids`` (default: ``test_ids``) in the gallery camera.
    """
    gallery_ids = list(test_ids) if gallery_ids is None else list(gallery_ids)
    emb_q = [metric.embed(dataset.query[k].stacked()[0]) for k in test_ids]
    emb_g = [metric.embed(dataset.gallery[k].stacked()[0]) for k in gallery_ids]
    lab_q = [dataset.query[k].stacked()[1] for k in test_ids]
    lab_g = [dataset.gallery[k].stacked()[1] for k in gallery_ids]
    nq, ng = len(emb_q), len(emb_g)
    out: dict[str, list[np.ndarray]] = {}
    need_full = any(s in strategies for s in ("FullMatch-min", "FullMatch-avg", "PaMM"))
    if need_full:
        W = weights.matrix()
        fmin = np.empty((nq, ng))
        favg = np.empty((nq, ng))
        pamm = np.empty((nq, ng))
        for i in range(nq):
            for j in range(ng):
                diff = emb_q[i][:, None, :] - emb_g[j][None, :, :]
                D = np.sqrt(np.einsum("abk,abk->ab", diff, diff))
                fmin[i, j] = D.min()
                favg[i, j] = D.mean()
                cell = (lab_q[i][:, None] * 4 + lab_g[j][None, :]).ravel()
                sums = np.bincount(cell, weights=D.ravel(), minlength=16).reshape(4, 4)
                counts = np.bincount(cell, minlength=16).reshape(4, 4)
                try:
                    pamm[i, j] = pamm_cost_from_sums(sums, counts, W)
                except ZeroWeightMass:
                    # only zero-weight pose pairs exist: the unweighted mean stands in
                    pamm[i, j] = favg[i, j]
        out["FullMatch-min"] = [fmin]
        out["FullMatch-avg"] = [favg]
        out["PaMM"] = [pamm]
    for name, pool in (("MultiQ-max", np.max), ("MultiQ-avg", np.mean)):
        if name in strategies:
            pq = metric.embed(np.vstack([pool(dataset.query[k].stacked()[0], axis=0) for k in test_ids]))
            pg = metric.embed(np.vstack([pool(dataset.gallery[k].stacked()[0], axis=0) for k in gallery_ids]))
            out[name] = [np.sqrt(((pq[:, None, :] - pg[None, :, :]) ** 2).sum(-1))]
    if "SingleMatch" in strategies:
        mats = []
        for _ in range(single_match_repeats):
            sq = np.vstack([e[rng.integers(len(e))] for e in emb_q])
            sg = np.vstack([e[rng.integers(len(e))] for e in emb_g])
            mats.append(np.sqrt(((sq[:, None, :] - sg[None, :, :]) ** 2).sum(-1)))
        out["SingleMatch"] = mats
    return {s: out[s] for s in strategies}


def run_trial(dataset: ReidDataset, config: EvaluationConfig, seed: int) -> dict[str, CmcCurve]:
    """One split: learn the metric (and weights) on the training half, rank the test half."""
    train, test = split_identities(dataset.identities, seed)
    metric = learn_trial_metric(dataset, train, config, seed)
    if config.weights is not None:
        weights = config.weights
    elif config.retrain_weights and "PaMM" in config.strategies:
        weights = train_dataset_weights(dataset, train, metric, config, seed).weights
    else:
        weights = MatchWeights.uniform()
    rng = np.random.default_rng([seed, 1])
    mats = cost_matrices(dataset, test, metric, config.strategies, weights, rng, config.single_match_repeats)
    truth = np.arange(len(test))
    curves = {}
    for name, ms in mats.items():
        cs = [compute_cmc(m, truth) for m in ms]
        curves[name] = CmcCurve(np.mean([c.accuracy_at_rank for c in cs], axis=0))
    return curves


def _run_trial_star(args):
    return run_trial(*args)


def run_evaluation(dataset: ReidDataset, config: EvaluationConfig) -> dict[str, StrategyResult]:
    """All trials; the per-strategy result keeps every trial's curve."""
    if len(dataset.identities) < 2:
        raise TooFewIdentities("query and gallery share fewer than 2 identities")
    seeds = [int(s) for s in config.trial_seeds]
    args = [(dataset, config, s) for s in seeds]
    if config.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            per_trial = list(pool.map(_run_trial_star, args))
    else:
        per_trial = [run_trial(*a) for a in args]
    return {s: StrategyResult(s, [t[s] for t in per_trial], seeds) for s in config.strategies}


def results_document(results: Mapping[str, StrategyResult], metadata: Optional[dict] = None) -> dict:
    meta = {"auc_rank_range": "1..G (full gallery)", "aggregation": "mean of per-trial curves"}
    meta.update(metadata or {})
    return {"metadata": meta, "results": [r.to_dict() for r in results.values()]}


def write_results(results: Mapping[str, StrategyResult], path, metadata: Optional[dict] = None) -> None:
    doc = results_document(results, metadata)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_cmc_csv(results: Mapping[str, StrategyResult], path) -> None:
    lines = ["strategy,rank,accuracy,std"]
    for r in results.values():
        for k, (m, s) in enumerate(zip(r.mean_accuracy, r.std), start=1):
            lines.append(f"{r.strategy},{k},{float(m)!r},{float(s)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
