"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines
are repeated in the terminal summary.
"""

import json
import time

import numpy as np
import pytest

from pamm.cli import main as cli_main
from pamm.confidence import confidence_grid
from pamm.evaluation import EvaluationConfig, compute_cmc, run_evaluation
from pamm.matching import MatchWeights, baseline_cost, pairwise_distances, pamm_cost
from pamm.metric import LearnedMetric, learn_metric_arrays, metric_distance
from pamm.multipose import POSES, MultiPoseModel, assign_pose_group, pose_indices
from pamm.pose import estimate_poses, smooth_angle_sequence, wrap_degrees
from pamm.synthetic import SceneConfig, generate_scene
from pamm.weights import SvmConfig, solve_svm, svm_objective

from conftest import cluster_rank1, same_vs_cross_weights, scene_dataset


def circular_error(a, b):
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def test_criterion_01_pose_estimation_oracle(criterion):
    start = time.perf_counter()
    worst = {}
    counted = 0
    for kind in ("linear", "circular"):
        scene = generate_scene(
            SceneConfig(identity_count=20, seed=11, path_kind=kind, position_noise=0.0, pause_probability=0.0)
        )
        errs = []
        for tr in scene.tracks:
            posed = estimate_poses(tr, scene.cameras[tr.camera_id], scene.config.frame_rate)
            for s in posed.samples:
                truth = scene.truth[s.key]
                if truth.true_speed > 0.2:
                    errs.append(circular_error(s.raw_angle, truth.true_angle))
        worst[kind] = float(np.max(errs))
        counted += len(errs)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 2.0 and elapsed < 10.0
    criterion(1, ok, f"max pose error linear {worst['linear']:.2e} deg, circular {worst['circular']:.3f} deg "
                     f"over {counted} frames; {elapsed:.1f}s (limit 2 deg, 10 s)")
    assert ok


def test_criterion_02_wraparound_smoothing(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    m, n = 10, 240
    polar_err, naive_err = [], []
    for _ in range(20):
        offset = rng.uniform(-20.0, 20.0)
        true = wrap_degrees(np.linspace(-60.0, 60.0, n) + offset)
        raw = wrap_degrees(true + rng.normal(0.0, 10.0, n))
        smooth, _ = smooth_angle_sequence(raw, m)
        naive = np.array([raw[max(0, t - m) : t + m + 1].mean() for t in range(n)])
        polar_err.append(circular_error(smooth, true).mean())
        # crossing frames: the true angles inside the window straddle 0/360
        window = [true[max(0, t - m) : t + m + 1] for t in range(n)]
        crossing = np.array([(w > 270.0).any() and (w < 90.0).any() for w in window])
        naive_err.append(circular_error(naive, true)[crossing].mean())
    elapsed = time.perf_counter() - start
    polar, control = float(np.mean(polar_err)), float(np.mean(naive_err))
    ok = polar < 5.0 and control > 45.0 and elapsed < 5.0
    criterion(2, ok, f"polar mean error {polar:.2f} deg (< 5), cartesian control {control:.1f} deg on crossing frames "
                     f"(> 45); {elapsed:.2f}s")
    assert ok


def test_criterion_03_confidence_contract(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 100_000
    d, s, o = rng.uniform(0, 180, n), rng.uniform(0, 5, n), rng.uniform(0, 1, n)
    c = confidence_grid(d, s, o)
    in_range = bool(np.all((c >= 0.0) & (c <= 1.0)))
    mono_d = bool(np.all(confidence_grid(np.minimum(d + rng.uniform(0, 30, n), 180), s, o) <= c))
    mono_s = bool(np.all(confidence_grid(d, s + rng.uniform(0, 2, n), o) >= c))
    mono_o = bool(np.all(confidence_grid(d, s, np.minimum(o + rng.uniform(0, 0.5, n), 1.0)) <= c))
    zero_speed = bool(np.all(confidence_grid(d, np.zeros(n), o) == 0.0))
    full_occ = bool(np.all(confidence_grid(d, s, np.ones(n)) == 0.0))
    elapsed = time.perf_counter() - start
    ok = all([in_range, mono_d, mono_s, mono_o, zero_speed, full_occ]) and elapsed < 5.0
    criterion(3, ok, f"1e5 triples: range={in_range} monotone(delta,speed,occ)=({mono_d},{mono_s},{mono_o}) "
                     f"zero at speed 0={zero_speed} zero at occ 1={full_occ}; {elapsed:.2f}s")
    assert ok


def test_criterion_04_bin_partition(criterion):
    start = time.perf_counter()
    grid = np.arange(0.0, 360.0, 0.5)
    table = [(0.0, 45.0, "front"), (45.0, 135.0, "right"), (135.0, 225.0, "back"), (225.0, 315.0, "left"), (315.0, 360.0, "front")]
    exactly_one = all(sum(lo <= a < hi for lo, hi, _ in table) == 1 for a in grid)
    agrees = all(assign_pose_group(a) == next(p for lo, hi, p in table if lo <= a < hi) for a in grid)
    vectorised = [POSES[i] for i in pose_indices(grid)] == [assign_pose_group(a) for a in grid]
    edges = assign_pose_group(45.0) == "right" and assign_pose_group(315.0) == "front"
    elapsed = time.perf_counter() - start
    ok = exactly_one and agrees and vectorised and edges and elapsed < 1.0
    criterion(4, ok, f"{grid.size} grid angles, partition={exactly_one} table={agrees} "
                     f"45->right,315->front={edges}; {elapsed:.3f}s")
    assert ok


def test_criterion_05_uniform_weight_equivalence(criterion):
    rng = np.random.default_rng(5)
    metric = LearnedMetric.identity(6)
    worst = 0.0
    for _ in range(1000):
        models = []
        for name in ("a", "b"):
            sizes = rng.integers(0, 6, 4)
            if sizes.sum() == 0:
                sizes[rng.integers(4)] = 1
            angles = np.concatenate([rng.uniform(lo, lo + 90.0, k) % 360.0 for lo, k in zip((315.0, 45.0, 135.0, 225.0), sizes)])
            models.append(MultiPoseModel.from_arrays(name, "c", rng.normal(size=(len(angles), 6)), angles))
        a, b = models
        pamm = pamm_cost(pairwise_distances(a, b, metric), MatchWeights.uniform()).cost
        worst = max(worst, abs(pamm - baseline_cost(a, b, metric, "FullMatch-avg").cost))
    ok = worst <= 1e-12
    criterion(5, ok, f"1000 random model pairs, max |PaMM(w=1) - FullMatch-avg| = {worst:.2e} (limit 1e-12)")
    assert ok


def test_criterion_06_metric_correctness(criterion):
    rng = np.random.default_rng(6)
    worst_quad = 0.0
    for _ in range(200):
        G = rng.normal(size=(5, int(rng.integers(1, 6))))
        M = G @ G.T
        metric = LearnedMetric(np.zeros(5), np.eye(5), M, "kissme")
        a, b = rng.normal(size=5), rng.normal(size=5)
        x = a - b
        oracle = np.sqrt(max(sum(x[i] * M[i, j] * x[j] for i in range(5) for j in range(5)), 0.0))
        worst_quad = max(worst_quad, abs(metric_distance(metric, a, b) - oracle))
    min_eig = np.inf
    A = rng.normal(size=(400, 12))
    B = A + rng.normal(scale=0.3, size=A.shape) * np.linspace(0.1, 3.0, 12)
    B[200:] = rng.normal(size=(200, 12))
    same = np.arange(400) < 200
    for learner in ("mahalanobis", "kissme"):
        m = learn_metric_arrays(A, B, same, learner, pca_dim=10)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(m.M).min()))
    rank1 = {learner: cluster_rank1(learner, seed=0) for learner in ("euclidean", "mahalanobis", "kissme")}
    ok = (
        worst_quad < 1e-10
        and min_eig >= -1e-8
        and rank1["kissme"] > rank1["euclidean"]
        and rank1["mahalanobis"] > rank1["euclidean"]
    )
    criterion(6, ok, f"quadratic-form error {worst_quad:.1e}, min eigenvalue {min_eig:.2e}, rank-1 "
                     f"euclidean {rank1['euclidean']:.2f} / mahalanobis {rank1['mahalanobis']:.2f} / kissme {rank1['kissme']:.2f}")
    assert ok


def _grid_minimum(X, y, lam, free, span=4.0, points=41, rounds=12):
    centre = np.zeros(len(free))
    best = np.inf
    for _ in range(rounds):
        axes = [np.linspace(c - span, c + span, points) for c in centre]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(free))
        values = 0.5 * np.sum(grid**2, axis=1) + lam * np.maximum(0.0, 1.0 - y * (grid @ X[:, free].T)).sum(axis=1)
        k = int(values.argmin())
        if values[k] < best:
            best, centre = float(values[k]), grid[k]
        span /= 5.0
    return best


def test_criterion_07_svm_oracle_agreement(criterion):
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(7)
    worst_gap, worst_feas = 0.0, 0.0
    cases = 0
    for free_count in (1, 2, 3):
        for _ in range(4):
            free = sorted(rng.choice(10, size=free_count, replace=False))
            X = np.zeros((60, 10))
            X[:20, free] = rng.gamma(2.0, 0.3, (20, free_count))
            X[20:, free] = rng.gamma(2.0, 0.3, (40, free_count)) + rng.uniform(0.0, 1.0, free_count)
            y = np.r_[np.ones(20), -np.ones(40)]
            lam = float(rng.choice([0.1, 1.0, 10.0]))
            sol = solve_svm(X, y, SvmConfig(lam=lam))
            grid = _grid_minimum(X, y, lam, free)
            w = cp.Variable(10)
            xi = cp.Variable(60)
            prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(w) + lam * cp.sum(xi)), [cp.multiply(y, X @ w) >= 1 - xi, xi >= 0])
            prob.solve(solver=cp.CLARABEL)
            oracle = min(grid, prob.value)
            worst_gap = max(worst_gap, abs(sol.objective - oracle), abs(svm_objective(sol.w, X, y, lam) - oracle))
            violation = np.maximum(0.0, (1.0 - sol.slack) - y * (X @ sol.w))
            worst_feas = max(worst_feas, float(violation.max()), float(np.maximum(0.0, -sol.slack).max()))
            cases += 1
    ok = worst_gap < 1e-4 and worst_feas <= 1e-6
    criterion(7, ok, f"{cases} problems with 1-3 free coordinates: max objective gap {worst_gap:.1e} (< 1e-4), "
                     f"max constraint violation {worst_feas:.1e} (<= 1e-6)")
    assert ok


def test_criterion_08_same_pose_weights_dominate(criterion):
    start = time.perf_counter()
    dataset = scene_dataset(identity_count=40, seed=3)
    means = {learner: same_vs_cross_weights(dataset, learner) for learner in ("euclidean", "mahalanobis", "kissme")}
    elapsed = time.perf_counter() - start
    ok = all(s > c for s, c in means.values()) and elapsed < 30.0
    detail = ", ".join(f"{k} same {s:.2f} vs cross {c:.2f}" for k, (s, c) in means.items())
    criterion(8, ok, f"{detail}; {elapsed:.1f}s (limit 30 s)")
    assert ok


def test_criterion_09_end_to_end_ordering(criterion):
    start = time.perf_counter()
    strength = 0.8
    dataset = scene_dataset(identity_count=100, seed=0, pose_appearance_strength=strength)
    results = run_evaluation(dataset, EvaluationConfig(trial_seeds=tuple(range(10))))
    elapsed = time.perf_counter() - start
    r1 = {k: float(v.mean_accuracy[0]) for k, v in results.items()}
    pamm, favg, single = r1["PaMM"], r1["FullMatch-avg"], r1["SingleMatch"]
    ok = pamm >= favg >= single and pamm - single >= 0.10 and elapsed < 300.0
    criterion(9, ok, f"100 identities, strength {strength}, 10 trials: rank-1 PaMM {pamm:.3f} >= FullMatch-avg {favg:.3f} "
                     f">= SingleMatch {single:.3f}, gap {100 * (pamm - single):.1f} pp; {elapsed:.0f}s (limit 300 s)")
    assert ok


def test_criterion_10_cmc_statistics(criterion):
    rng = np.random.default_rng(10)
    G, n = 20, 10_000
    cmc = compute_cmc(rng.random((n, G)), rng.integers(G, size=n))
    sigma = np.sqrt((1 / G) * (1 - 1 / G) / n)
    within = abs(cmc.rank(1) - 1 / G) < 3 * sigma
    monotone = bool(np.all(np.diff(cmc.accuracy_at_rank) >= 0)) and cmc.accuracy_at_rank[-1] == 1.0
    auc_gap = abs(cmc.auc - float(np.mean(cmc.accuracy_at_rank)))
    ok = within and monotone and auc_gap <= 1e-12
    criterion(10, ok, f"rank-1 {cmc.rank(1):.4f} vs 1/G = {1 / G:.4f} (3 sigma = {3 * sigma:.4f}), monotone={monotone}, "
                      f"|auc - mean| = {auc_gap:.1e}")
    assert ok


def test_criterion_11_reproducible_evaluate(criterion, tmp_path, capsys):
    scene = tmp_path / "scene"
    assert cli_main(["synth-gen", "--out", str(scene), "--identities", "30", "--seed", "5"]) == 0
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        "\n".join([
            "[data]",
            f'tracks = "{scene / "tracks.csv"}"',
            f'features = "{scene / "features.csv"}"',
            f'calibration = "{scene / "calibration"}"',
            "[metric]",
            "pca_dim = 32",
            "[evaluation]",
            "trials = 3",
        ]) + "\n"
    )
    codes = [cli_main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / f"run{i}.json")]) for i in (1, 2)]
    capsys.readouterr()
    a, b = (tmp_path / "run1.json").read_bytes(), (tmp_path / "run2.json").read_bytes()
    strategies = [r["strategy"] for r in json.loads(a)["results"]]
    ok = codes == [0, 0] and a == b and len(strategies) == 6
    criterion(11, ok, f"two evaluate runs exit {codes}, results byte-identical={a == b} ({len(a)} bytes, "
                      f"{len(strategies)} strategies)")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
