import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pamm.errors import TooFewIdentities, TruthMissing
from pamm.evaluation import (
    EvaluationConfig,
    ReidDataset,
    compute_cmc,
    cost_matrices,
    match_ranks,
    run_evaluation,
    split_identities,
    write_cmc_csv,
    write_results,
)
from pamm.matching import STRATEGIES, MatchWeights, baseline_cost, pairwise_distances, pamm_cost
from pamm.metric import LearnedMetric
from pamm.multipose import MultiPoseModel


def brute_force_ranks(C, truth):
    """Stable sort of each row; the position of the true column is its rank."""
    ranks = []
    for i, row in enumerate(C):
        order = sorted(range(len(row)), key=lambda j: (row[j], j))
        ranks.append(order.index(truth[i]) + 1)
    return np.array(ranks)


def toy_dataset(n_ids=12, d=6, spread=10.0, noise=0.05, seed=0, samples=8):
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, spread, (n_ids, d))
    query, gallery = {}, {}
    for k, c in enumerate(centres):
        name = f"id{k:03d}"
        for store, cam in ((query, "q"), (gallery, "g")):
            angles = rng.uniform(0, 360, samples)
            store[name] = MultiPoseModel.from_arrays(name, cam, c + rng.normal(0.0, noise, (samples, d)), angles)
    return ReidDataset(query, gallery)


# splits


def test_split_sizes_and_disjointness():
    tr, te = split_identities(["a", "b", "c", "d"], 1)
    assert len(tr) == len(te) == 2 and not set(tr) & set(te)
    tr, te = split_identities(list("abcde"), 1)
    assert (len(tr), len(te)) == (3, 2)
    assert set(tr) | set(te) == set("abcde")


def test_split_seed_sensitivity_and_determinism():
    ids = [f"p{i}" for i in range(1000)]
    assert split_identities(ids, 0) != split_identities(ids, 1)
    assert split_identities(ids, 7) == split_identities(ids, 7)


def test_split_errors():
    with pytest.raises(TooFewIdentities):
        split_identities(["only"], 0)
    with pytest.raises(ValueError):
        split_identities(["a", "a"], 0)


# CMC


def test_perfect_matcher():
    C = np.ones((5, 5)) - np.eye(5)
    cmc = compute_cmc(C, np.arange(5))
    assert np.all(cmc.accuracy_at_rank == 1.0) and cmc.auc == 1.0


def test_hand_case_rank_three_of_five():
    cmc = compute_cmc([[0.1, 0.2, 0.3, 0.4, 0.5]], [2])
    np.testing.assert_array_equal(cmc.accuracy_at_rank, [0, 0, 1, 1, 1])
    assert cmc.auc == pytest.approx(0.6, abs=1e-15)
    assert cmc.rank(3) == 1.0


def test_ties_resolved_by_gallery_order():
    assert list(match_ranks([[1.0, 1.0, 1.0]], [0])) == [1]
    assert list(match_ranks([[1.0, 1.0, 1.0]], [2])) == [3]


def test_random_costs_rank1_within_binomial_band():
    rng = np.random.default_rng(2024)
    G, n = 20, 10_000
    C = rng.random((n, G))
    truth = rng.integers(G, size=n)
    acc = compute_cmc(C, truth).rank(1)
    sigma = np.sqrt((1 / G) * (1 - 1 / G) / n)
    assert abs(acc - 1 / G) < 3 * sigma


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), q=st.integers(1, 50), g=st.integers(1, 50), ties=st.booleans())
def test_ranks_match_sort_oracle(seed, q, g, ties):
    rng = np.random.default_rng(seed)
    C = rng.integers(0, 4, (q, g)).astype(float) if ties else rng.random((q, g))
    truth = rng.integers(g, size=q)
    np.testing.assert_array_equal(match_ranks(C, truth), brute_force_ranks(C, truth))
    cmc = compute_cmc(C, truth)
    assert np.all(np.diff(cmc.accuracy_at_rank) >= 0)
    assert cmc.accuracy_at_rank[-1] == 1.0
    assert abs(cmc.auc - cmc.accuracy_at_rank.mean()) < 1e-12


def test_cmc_errors():
    with pytest.raises(TruthMissing):
        compute_cmc(np.zeros((2, 3)), [0])
    with pytest.raises(TruthMissing):
        compute_cmc(np.zeros((1, 3)), [3])
    with pytest.raises(ValueError):
        compute_cmc([[0.0, np.nan]], [0])


# cost matrices and trials


def test_cost_matrices_agree_with_matching_module():
    ds = toy_dataset(n_ids=5, noise=1.0, seed=3)
    ids = ds.identities
    metric = LearnedMetric.identity(6)
    w = MatchWeights.from_vector(np.linspace(0.1, 2.0, 10))
    mats = cost_matrices(ds, ids, metric, STRATEGIES, w, np.random.default_rng(0), single_match_repeats=2)
    for i, a in enumerate(ids):
        for j, b in enumerate(ids):
            qa, gb = ds.query[a], ds.gallery[b]
            assert abs(mats["PaMM"][0][i, j] - pamm_cost(pairwise_distances(qa, gb, metric), w).cost) < 1e-12
            for s in ("MultiQ-max", "MultiQ-avg", "FullMatch-min", "FullMatch-avg"):
                assert abs(mats[s][0][i, j] - baseline_cost(qa, gb, metric, s).cost) < 1e-10
    assert len(mats["SingleMatch"]) == 2


def test_uniform_pamm_equals_fullmatch_avg_in_trials():
    ds = toy_dataset(n_ids=16, noise=6.0, seed=4)
    cfg = EvaluationConfig(trial_seeds=(0, 1), strategies=("FullMatch-avg", "PaMM"), pca_dim=4, weights=MatchWeights.uniform())
    res = run_evaluation(ds, cfg)
    assert np.abs(res["PaMM"].mean_accuracy - res["FullMatch-avg"].mean_accuracy).max() < 1e-12


def test_separable_dataset_is_perfect_for_every_strategy():
    ds = toy_dataset(n_ids=12)
    cfg = EvaluationConfig(trial_seeds=(5,), pca_dim=4, weights=MatchWeights.uniform(), learner="euclidean")
    res = run_evaluation(ds, cfg)
    for name in STRATEGIES:
        assert res[name].auc == 1.0, name


def test_results_are_deterministic(tmp_path):
    ds = toy_dataset(n_ids=16, noise=6.0, seed=5)
    cfg = EvaluationConfig(trial_seeds=(0, 1), pca_dim=4, weights=MatchWeights.uniform(), learner="mahalanobis")
    write_results(run_evaluation(ds, cfg), tmp_path / "a.json", {"run": 1})
    write_results(run_evaluation(ds, cfg), tmp_path / "b.json", {"run": 1})
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    doc = json.loads((tmp_path / "a.json").read_text())
    entry = doc["results"][0]
    assert set(entry) == {"strategy", "ranks", "mean_accuracy", "std", "auc", "trials", "seeds"}
    assert entry["trials"] == 2 and entry["ranks"] == list(range(1, 9))
    write_cmc_csv(run_evaluation(ds, cfg), tmp_path / "cmc.csv")
    lines = (tmp_path / "cmc.csv").read_text().splitlines()
    assert lines[0] == "strategy,rank,accuracy,std" and len(lines) == 1 + 6 * 8


def test_parallel_trials_match_serial():
    ds = toy_dataset(n_ids=10, noise=6.0, seed=6)
    base = dict(trial_seeds=(0, 1, 2), pca_dim=4, weights=MatchWeights.uniform())
    serial = run_evaluation(ds, EvaluationConfig(**base))
    parallel = run_evaluation(ds, EvaluationConfig(jobs=2, **base))
    for s in STRATEGIES:
        np.testing.assert_array_equal(serial[s].mean_accuracy, parallel[s].mean_accuracy)


def test_too_few_shared_identities():
    ds = toy_dataset(n_ids=3)
    lonely = ReidDataset({"id000": ds.query["id000"]}, ds.gallery)
    with pytest.raises(TooFewIdentities):
        run_evaluation(lonely, EvaluationConfig())
    with pytest.raises(ValueError):
        EvaluationConfig(strategies=("Oracle",))
