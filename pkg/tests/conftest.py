import numpy as np
import pytest

from pamm.camera import CameraModel
from pamm.synthetic import default_intrinsics


def rotation_from_euler(rx, ry, rz):
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rx @ Ry @ Rz


@pytest.fixture
def street_camera():
    """Camera 6 m up, looking down at the ground 12 m ahead."""
    return CameraModel.look_at((0.0, 0.0, 6.0), (0.0, 12.0, 0.0), default_intrinsics(), camera_id="street")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def anisotropic_clusters(n_ids, seed, d=8, noisy_dims=3, noisy_sigma=3.0, quiet_sigma=0.15):
    """Two views per identity; the within-identity spread is large on a few axes."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, 1.0, (n_ids, d))
    scale = np.full(d, quiet_sigma)
    scale[:noisy_dims] = noisy_sigma
    view_a = centres + rng.normal(0.0, 1.0, (n_ids, d)) * scale
    view_b = centres + rng.normal(0.0, 1.0, (n_ids, d)) * scale
    return view_a, view_b


def cluster_rank1(learner, seed, n_train=300, n_test=100):
    """Rank-1 accuracy of a learned metric on held-out anisotropic clusters."""
    from pamm.metric import distance_matrix, learn_metric_arrays

    a, b = anisotropic_clusters(n_train + n_test, seed)
    rng = np.random.default_rng(seed + 1)
    ta, tb = a[:n_train], b[:n_train]
    shuffled = rng.permutation(n_train)
    shuffled = np.where(shuffled == np.arange(n_train), (shuffled + 1) % n_train, shuffled)
    A = np.vstack([ta, ta])
    B = np.vstack([tb, tb[shuffled]])
    same = np.r_[np.ones(n_train, bool), np.zeros(n_train, bool)]
    metric = learn_metric_arrays(A, B, same, learner, pca_dim=a.shape[1])
    D = distance_matrix(metric, a[n_train:], b[n_train:])
    return float(np.mean(D.argmin(axis=1) == np.arange(n_test)))


def scene_dataset(identity_count=40, seed=3, **scene_options):
    """Synthetic scene run through pose, confidence and model building."""
    from pamm.pipeline import build_models, dataset_from_models, process_tracks
    from pamm.synthetic import SceneConfig, generate_scene

    scene = generate_scene(SceneConfig(identity_count=identity_count, seed=seed, **scene_options))
    cams = sorted(scene.cameras)
    processed = process_tracks(scene.tracks, scene.cameras, scene.config.frame_rate)
    return dataset_from_models(build_models(processed.kept, scene.features), cams[0], cams[1])


def same_vs_cross_weights(dataset, learner, seed=0):
    """Train metric and weights on every identity; mean same-pose and cross-pose weight."""
    from pamm.evaluation import EvaluationConfig, learn_trial_metric, train_dataset_weights
    from pamm.matching import CROSS_POSE_KEYS, SAME_POSE_KEYS

    cfg = EvaluationConfig(learner=learner, pca_dim=32)
    ids = dataset.identities
    trained = train_dataset_weights(dataset, ids, learn_trial_metric(dataset, ids, cfg, seed), cfg, seed)
    w = trained.weights
    return float(np.mean([getattr(w, k) for k in SAME_POSE_KEYS])), float(np.mean([getattr(w, k) for k in CROSS_POSE_KEYS]))


_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion's verdict and detail line."""

    def record(number: int, passed: bool, detail: str) -> None:
        _CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
