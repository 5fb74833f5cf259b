"""Pose-aware multi-shot matching for person re-identification."""

from .camera import CameraModel, back_project_to_ground, project
from .confidence import angle_variation, filter_samples, occlusion_rate, sample_confidence
from .evaluation import compute_cmc, run_evaluation, split_identities
from .matching import MatchWeights, baseline_cost, pairwise_distances, pamm_cost
from .metric import LearnedMetric, fit_pca, learn_metric, metric_distance
from .multipose import FeatureVector, MultiPoseModel, assign_pose_group, build_multipose_model
from .pose import BoundingBox, Track, TrackSample, compute_velocity, estimate_pose_angle, smooth_angles
from .synthetic import SceneConfig, generate_scene
from .weights import build_distance_distributions, sample_training_vectors, train_weights

__version__ = "0.1.0"
