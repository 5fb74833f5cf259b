"""Command-line entry point.

Subcommands mirror the processing chain::

    synth-gen       write a synthetic scene (tracks, features, calibration, truth)
    estimate-poses  append vx,vy,raw_angle,smooth_angle to a track CSV
    filter          append delta,speed,occlusion,confidence and drop weak samples
    build-models    group filtered samples and their features into multi-pose models
    train-metric    learn PCA + metric from the models of two cameras
    train-weights   train the ten pose-pair matching weights
    match           cost matrices between the models of two cameras
    evaluate        the whole chain with repeated random identity splits

Every subcommand accepts ``--config run.toml``; command-line flags win over
the file. Failures print one JSON line on stderr and exit with 1 (usage),
2 (unreadable input) or 3 (a processing stage failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .camera import load_calibration
from .confidence import DEFAULT_SPEED_REF, DEFAULT_THRESHOLD
from .descriptor import extract_builtin_descriptor, load_patch, patch_path
from .errors import CalibrationInvalid, ConfigInvalid, InputParseError, MissingFeature, PammError
from .evaluation import (
    DEFAULT_TRIALS,
    SINGLE_MATCH_REPEATS,
    EvaluationConfig,
    ReidDataset,
    compute_cmc,
    cost_matrices,
    run_evaluation,
    training_pairs,
    write_cmc_csv,
    write_results,
)
from .io import read_features, read_models, read_tracks, write_models, write_tracks
from .matching import STRATEGIES, MatchWeights, load_weights, save_weights
from .metric import DEFAULT_PCA_DIM, DEFAULT_REGULARIZATION, LEARNERS, learn_metric_arrays, load_metric, save_metric
from .multipose import FeatureVector
from .pipeline import build_models, dataset_from_models, filter_tracks, pose_tracks
from .confidence import score_tracks
from .pose import DEFAULT_WINDOW
from .synthetic import PATH_KINDS, SceneConfig, default_cameras, generate_scene
from .weights import (
    LabeledPosePair,
    SvmConfig,
    build_distance_distributions,
    pose_pair_training_set,
    sample_training_arrays,
    train_weights,
)

logger = logging.getLogger("pamm")

EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_STAGE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# options shared between the command line and the config file


def _csv_list(text):
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _int_list(text):
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}") from None


def _float_pair(text):
    vals = [float(t) for t in _csv_list(text)]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers")
    return tuple(vals)


def _bool(value):
    if isinstance(value, bool):
        return value
    if str(value).lower() in ("1", "true", "yes", "on"):
        return True
    if str(value).lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    flag: str
    type: Callable
    default: Any
    help: str
    choices: Optional[tuple] = None

    @property
    def dest(self) -> str:
        return f"{self.section}__{self.key}"


_OPTIONS = [
    Option("data", "tracks", "--tracks", str, None, "track CSV"),
    Option("data", "features", "--features", str, None, "precomputed feature file"),
    Option("data", "patches", "--patches", str, None, "directory of <camera>_<object>_<frame>.png/.ppm patches (builtin descriptor)"),
    Option("data", "calibration", "--calibration", str, None, "calibration JSON file or directory of them"),
    Option("data", "models", "--models", str, None, "multi-pose model file (JSON)"),
    Option("data", "frame_rate", "--frame-rate", float, 15.0, "frames per second of the tracks"),
    Option("data", "query_camera", "--query-camera", str, None, "query camera id (default: first camera id in sorted order)"),
    Option("data", "gallery_camera", "--gallery-camera", str, None, "gallery camera id (default: second camera id in sorted order)"),
    Option("pose", "m", "--m", int, DEFAULT_WINDOW, "half-width of the polar smoothing window"),
    Option("confidence", "threshold", "--conf-threshold", float, DEFAULT_THRESHOLD, "samples with confidence <= this are dropped"),
    Option("confidence", "speed_ref", "--speed-ref", float, DEFAULT_SPEED_REF, "speed scale (m/s) of the confidence speed term"),
    Option("metric", "file", "--metric", str, None, "metric file (JSON)"),
    Option("metric", "learner", "--learner", str, "kissme", "metric learner", LEARNERS),
    Option("metric", "pca_dim", "--pca-dim", int, DEFAULT_PCA_DIM, "PCA dimension before metric learning"),
    Option("metric", "regularization", "--regularization", float, DEFAULT_REGULARIZATION, "relative ridge added to the covariances"),
    Option("metric", "max_pos_per_identity", "--max-pos-per-identity", int, 200, "cap on positive metric pairs per identity"),
    Option("metric", "neg_per_pos", "--neg-per-pos", int, 10, "negative pairs per positive pair"),
    Option("weights", "file", "--weights", str, None, "weights file (JSON); fixed weights for match/evaluate"),
    Option("weights", "pairs", "--pairs", str, None, "training pairs: a model file or a pairs JSON"),
    Option("weights", "lambda", "--lambda", float, 1.0, "SVM margin trade-off"),
    Option("weights", "pos", "--pos", int, 3520, "positive training vectors drawn"),
    Option("weights", "neg", "--neg", int, 35200, "negative training vectors drawn"),
    Option("weights", "pairs_per_identity", "--pairs-per-identity", int, 40, "positive pose-labelled pairs per identity"),
    Option("weights", "retrain", "--retrain-weights", _bool, True, "retrain weights on each split's training half (else uniform) when no weights file is given"),
    Option("evaluation", "trials", "--trials", int, DEFAULT_TRIALS, "number of random splits (seeds 0..trials-1)"),
    Option("evaluation", "seeds", "--seeds", _int_list, None, "explicit comma-separated trial seeds (overrides --trials)"),
    Option("evaluation", "strategies", "--strategies", _csv_list, list(STRATEGIES), "comma-separated strategies"),
    Option("evaluation", "single_match_repeats", "--single-match-repeats", int, SINGLE_MATCH_REPEATS, "random single-sample draws averaged for SingleMatch"),
    Option("evaluation", "emit_cmc_csv", "--emit-cmc-csv", str, None, "also write the CMC curves as CSV"),
    Option("evaluation", "jobs", "--jobs", int, None, "parallel worker processes (default: available cores)"),
    Option("general", "seed", "--seed", int, 0, "random seed"),
    Option("synthetic", "identities", "--identities", int, SceneConfig.identity_count, "number of identities"),
    Option("synthetic", "cameras", "--cameras", int, 2, "number of cameras"),
    Option("synthetic", "duration", "--duration", int, SceneConfig.duration, "frames per path"),
    Option("synthetic", "walk_speed", "--walk-speed", _float_pair, SceneConfig.walk_speed_range, "walking speed range 'low,high' in m/s"),
    Option("synthetic", "dim", "--dim", int, SceneConfig.appearance_dim, "appearance feature dimension"),
    Option("synthetic", "strength", "--strength", float, SceneConfig.pose_appearance_strength, "pose appearance strength in [0, 1]"),
    Option("synthetic", "noise_sigma", "--noise-sigma", float, SceneConfig.noise_sigma, "feature noise scale"),
    Option("synthetic", "identity_scale", "--identity-scale", float, SceneConfig.identity_scale, "expected norm of identity vectors"),
    Option("synthetic", "occlusion_prob", "--occlusion-prob", float, SceneConfig.occlusion_probability, "per-frame probability of an occluder crossing"),
    Option("synthetic", "pause_prob", "--pause-prob", float, SceneConfig.pause_probability, "probability that a path contains a standstill"),
    Option("synthetic", "position_noise", "--position-noise", float, SceneConfig.position_noise, "std of emitted ground position jitter (m)"),
    Option("synthetic", "path_kind", "--path-kind", str, SceneConfig.path_kind, "path generator", PATH_KINDS),
]
_BY_FLAG = {o.flag: o for o in _OPTIONS}
_BY_KEY = {(o.section, o.key): o for o in _OPTIONS}

_COMMAND_FLAGS = {
    "synth-gen": ["--seed", "--identities", "--cameras", "--frame-rate", "--duration", "--walk-speed", "--dim", "--strength",
                  "--noise-sigma", "--identity-scale", "--occlusion-prob", "--pause-prob", "--position-noise", "--path-kind"],
    "estimate-poses": ["--tracks", "--calibration", "--frame-rate", "--m"],
    "filter": ["--tracks", "--calibration", "--conf-threshold", "--speed-ref"],
    "build-models": ["--tracks", "--features", "--patches"],
    "train-metric": ["--models", "--query-camera", "--gallery-camera", "--learner", "--pca-dim", "--regularization",
                     "--max-pos-per-identity", "--neg-per-pos", "--seed"],
    "train-weights": ["--pairs", "--metric", "--pos", "--neg", "--lambda", "--seed", "--query-camera", "--gallery-camera",
                      "--pairs-per-identity", "--neg-per-pos"],
    "match": ["--models", "--metric", "--weights", "--strategies", "--query-camera", "--gallery-camera", "--seed",
              "--emit-cmc-csv"],
    "evaluate": ["--tracks", "--features", "--patches", "--calibration", "--frame-rate", "--query-camera", "--gallery-camera",
                 "--m", "--conf-threshold", "--speed-ref", "--learner", "--pca-dim", "--regularization",
                 "--max-pos-per-identity", "--neg-per-pos", "--weights", "--lambda", "--pos", "--neg",
                 "--pairs-per-identity", "--retrain-weights", "--trials", "--seeds", "--strategies",
                 "--single-match-repeats", "--jobs", "--emit-cmc-csv"],
}

_DESCRIPTIONS = {
    "synth-gen": "Write a synthetic scene: tracks.csv, features.csv, calibration/<camera>.json, ground_truth.json.",
    "estimate-poses": "Estimate velocities and raw/smoothed pose angles; appends vx,vy,raw_angle,smooth_angle.",
    "filter": "Score sample confidence (appends delta,speed,occlusion,confidence) and keep samples above the threshold.",
    "build-models": "Group filtered samples and their features into four-pose models.",
    "train-metric": "Learn a PCA projection and metric from cross-camera pairs of model samples.",
    "train-weights": "Train the ten pose-pair matching weights with a bias-free linear SVM.",
    "match": "Cost matrices between the query-camera and gallery-camera models (CSV: strategy,query_id,gallery_id,cost).",
    "evaluate": "Run the whole chain with repeated random identity splits and write per-strategy CMC results.",
}

_OUT_HELP = {
    "synth-gen": "output directory",
    "estimate-poses": "output track CSV",
    "filter": "output CSV of kept samples",
    "build-models": "output model file (JSON)",
    "train-metric": "output metric file (JSON)",
    "train-weights": "output weights file (JSON)",
    "match": "output cost CSV",
    "evaluate": "output results JSON",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pamm", description="Pose-aware multi-shot matching for person re-identification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, flags in _COMMAND_FLAGS.items():
        p = sub.add_parser(name, help=_DESCRIPTIONS[name], description=_DESCRIPTIONS[name])
        p.add_argument("--config", help="TOML run configuration; flags override its values")
        p.add_argument("--out", help=_OUT_HELP[name] + (" (required unless set in the config)" if name == "evaluate" else ""),
                       required=name != "evaluate")
        if name == "filter":
            p.add_argument("--scored-out", help="also write every scored sample (kept or not)")
        if name == "train-weights":
            p.add_argument("--meta-out", help="write solver metadata (objective, convergence, separability) as JSON")
        for flag in flags:
            o = _BY_FLAG[flag]
            shown = "available cores" if o.flag == "--jobs" else o.default
            if isinstance(shown, (list, tuple)):
                shown = ",".join(str(v) for v in shown)
            extra = f"; one of {', '.join(o.choices)}" if o.choices else ""
            p.add_argument(flag, dest=o.dest, type=o.type, default=None, choices=o.choices,
                           metavar=o.key.upper(), help=f"{o.help} (config [{o.section}] {o.key}; default: {shown}{extra})")
    return parser


class Settings:
    """Resolved settings: flag, else config value, else documented default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = vars(args)
        self._config = config

    def __getitem__(self, flag: str):
        o = _BY_FLAG[flag]
        v = self._args.get(o.dest)
        if v is None:
            v = self._config.get(o.dest)
        if v is None:
            v = o.default
        return v

    def require(self, flag: str):
        v = self[flag]
        if v is None:
            raise UsageError(f"{flag} is required (or set [{_BY_FLAG[flag].section}] {_BY_FLAG[flag].key} in the config)")
        return v

    def resolved(self, flags) -> dict:
        out = {}
        for f in flags:
            o = _BY_FLAG[f]
            out.setdefault(o.section, {})[o.key] = self[f]
        return out


def load_config(path) -> tuple[dict, Optional[str]]:
    """Flat option values of a TOML run file plus its optional ``[evaluation] out``."""
    if path is None:
        return {}, None
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise InputParseError(f"cannot read config {path}: {exc}", path=str(path)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise InputParseError(f"invalid TOML in {path}: {exc}", path=str(path)) from exc
    out = None
    flat = {}
    for section, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigInvalid(f"{path}: top-level key {section!r} must be a [section]")
        for key, value in table.items():
            if (section, key) == ("evaluation", "out"):
                out = str(value)
                continue
            o = _BY_KEY.get((section, key))
            if o is None:
                raise ConfigInvalid(f"{path}: unknown setting [{section}] {key}")
            try:
                flat[o.dest] = str(value) if o.type is str else o.type(value)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigInvalid(f"{path}: [{section}] {key}: {exc}") from exc
            if o.choices and flat[o.dest] not in o.choices:
                raise ConfigInvalid(f"{path}: [{section}] {key} must be one of {o.choices}")
    return flat, out


# ---------------------------------------------------------------------------
# stages


class StageContext:
    """Tracks the stage currently running so failures can name it."""

    def __init__(self, name: str):
        self.name = name

    def enter(self, name: str) -> None:
        logger.info("stage %s", name)
        self.name = name


def _camera_pair(st: Settings, camera_ids) -> tuple[str, str]:
    ids = sorted(set(camera_ids))
    q = st["--query-camera"] or (ids[0] if ids else None)
    rest = [c for c in ids if c != q]
    g = st["--gallery-camera"] or (rest[0] if rest else None)
    if q is None or g is None or q == g:
        raise ConfigInvalid(f"need two distinct cameras, have {ids}")
    for c in (q, g):
        if c not in ids:
            raise ConfigInvalid(f"camera {c!r} not present; have {ids}")
    return q, g


def _check_cameras(tracks, cameras, calibration_path) -> None:
    missing = sorted({t.camera_id for t in tracks} - set(cameras))
    if missing:
        raise CalibrationInvalid(f"no calibration for camera(s) {missing} in {calibration_path}")


def _features_for(st: Settings, tracks) -> dict:
    features_path, patches = st["--features"], st["--patches"]
    if features_path:
        return read_features(features_path)
    if patches:
        out = {}
        for tr in tracks:
            for s in tr.samples:
                p = patch_path(patches, s.camera_id, s.object_id, s.frame)
                if p is None:
                    raise MissingFeature(f"no image patch for {s.key} in {patches}")
                out[s.key] = extract_builtin_descriptor(load_patch(p))
        return out
    raise UsageError("--features or --patches is required")


def cmd_synth_gen(args, st: Settings, ctx: StageContext) -> dict:
    cfg = SceneConfig(
        identity_count=st["--identities"],
        cameras=default_cameras(st["--cameras"]),
        frame_rate=st["--frame-rate"],
        duration=st["--duration"],
        walk_speed_range=tuple(st["--walk-speed"]),
        appearance_dim=st["--dim"],
        pose_appearance_strength=st["--strength"],
        occlusion_probability=st["--occlusion-prob"],
        noise_sigma=st["--noise-sigma"],
        identity_scale=st["--identity-scale"],
        seed=st["--seed"],
        path_kind=st["--path-kind"],
        position_noise=st["--position-noise"],
        pause_probability=st["--pause-prob"],
    )
    scene = generate_scene(cfg)
    scene.write(args.out)
    return {"out": args.out, "tracks": len(scene.tracks), "samples": len(scene.features), "identities": len(scene.identities)}


def cmd_estimate_poses(args, st: Settings, ctx: StageContext) -> dict:
    tracks = read_tracks(st.require("--tracks"))
    cameras = load_calibration(st.require("--calibration"))
    _check_cameras(tracks, cameras, st["--calibration"])
    posed, skipped = pose_tracks(tracks, cameras, st["--frame-rate"], st["--m"])
    write_tracks(posed, args.out, with_pose=True)
    return {"out": args.out, "tracks": len(posed), "skipped": len(skipped)}


def cmd_filter(args, st: Settings, ctx: StageContext) -> dict:
    path = st.require("--tracks")
    tracks = read_tracks(path)
    if any(s.smooth_angle is None for t in tracks for s in t.samples):
        raise InputParseError(f"{path}: pose columns missing; run estimate-poses first", path=str(path))
    cameras = load_calibration(st.require("--calibration"))
    _check_cameras(tracks, cameras, st["--calibration"])
    scored, reports = score_tracks(tracks, cameras, st["--speed-ref"])
    kept, rejected = filter_tracks(scored, st["--conf-threshold"])
    write_tracks(kept, args.out, with_pose=True, reports=reports)
    if args.scored_out:
        write_tracks(scored, args.scored_out, with_pose=True, reports=reports)
    return {
        "out": args.out,
        "samples_in": sum(len(t) for t in scored),
        "samples_kept": sum(len(t) for t in kept),
        "tracks_rejected": len(rejected),
    }


def cmd_build_models(args, st: Settings, ctx: StageContext) -> dict:
    tracks = read_tracks(st.require("--tracks"))
    features = _features_for(st, tracks)
    models = build_models(tracks, features)
    write_models(models, args.out)
    return {"out": args.out, "models": len(models)}


def _dataset(st: Settings, models) -> tuple[ReidDataset, str, str]:
    q, g = _camera_pair(st, [m.camera_id for m in models])
    return dataset_from_models(models, q, g), q, g


def cmd_train_metric(args, st: Settings, ctx: StageContext) -> dict:
    models = read_models(st.require("--models"))
    ds, q, g = _dataset(st, models)
    ids = ds.identities
    A, B, same = training_pairs(ds, ids, st["--max-pos-per-identity"], st["--neg-per-pos"], st["--seed"])
    pca_data = np.vstack([ds.query[k].stacked()[0] for k in ids] + [ds.gallery[k].stacked()[0] for k in ids])
    metric = learn_metric_arrays(A, B, same, st["--learner"], st["--regularization"], st["--pca-dim"], pca_data)
    save_metric(metric, args.out)
    return {"out": args.out, "learner": metric.learner_id, "d": metric.d, "r": metric.r, "pairs": int(len(A)),
            "query_camera": q, "gallery_camera": g}


def _read_pairs_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputParseError(f"cannot read pairs {path}: {exc}", path=str(path)) from exc
    if not isinstance(data, dict) or not ({"models", "pairs"} & set(data)):
        raise InputParseError(f"{path}: expected a model file or an object with a 'pairs' list", path=str(path))
    return data


def _labeled_pairs(records, path) -> list[LabeledPosePair]:
    out = []
    try:
        for rec in records:
            out.append(
                LabeledPosePair(
                    FeatureVector(np.asarray(rec["feature_a"], dtype=float)),
                    str(rec["pose_a"]),
                    FeatureVector(np.asarray(rec["feature_b"], dtype=float)),
                    str(rec["pose_b"]),
                    bool(rec["same"]),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputParseError(f"{path}: bad pair record: {exc}", path=str(path)) from exc
    return out


def cmd_train_weights(args, st: Settings, ctx: StageContext) -> dict:
    path = st.require("--pairs")
    data = _read_pairs_file(path)
    metric = load_metric(st.require("--metric"))
    if "models" in data:
        from .io import models_from_dict

        try:
            models = models_from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputParseError(f"cannot read models {path}: {exc}", path=str(path)) from exc
        ds, _, _ = _dataset(st, models)
        pairs = pose_pair_training_set(
            ds.query, ds.gallery, ds.identities, st["--pairs-per-identity"], st["--neg-per-pos"], st["--seed"]
        )
    else:
        pairs = _labeled_pairs(data["pairs"], path)
    dists = build_distance_distributions(pairs, metric)
    X, y = sample_training_arrays(dists, st["--pos"], st["--neg"], st["--seed"])
    trained = train_weights((X, y), SvmConfig(lam=st["--lambda"]))
    save_weights(trained.weights, args.out)
    meta = trained.metadata()
    meta["substituted"] = list(dists.substituted)
    if args.meta_out:
        Path(args.meta_out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return {"out": args.out, "weights": trained.weights.to_dict(), "non_separable": meta["non_separable"],
            "converged": meta["converged"]}


def _strategies(st: Settings) -> list[str]:
    names = list(st["--strategies"])
    unknown = [s for s in names if s not in STRATEGIES]
    if unknown or not names:
        raise ConfigInvalid(f"unknown strategies {unknown}; choose from {list(STRATEGIES)}")
    return names


def cmd_match(args, st: Settings, ctx: StageContext) -> dict:
    models = read_models(st.require("--models"))
    metric = load_metric(st.require("--metric"))
    weights = load_weights(st["--weights"]) if st["--weights"] else MatchWeights.uniform()
    strategies = _strategies(st)
    ds, q, g = _dataset(st, models)
    qids, gids = sorted(ds.query), sorted(ds.gallery)
    rng = np.random.default_rng(st["--seed"])
    mats = cost_matrices(ds, qids, metric, strategies, weights, rng, 1, gallery_ids=gids)
    lines = ["strategy,query_id,gallery_id,cost"]
    for name in strategies:
        C = mats[name][0]
        for i, a in enumerate(qids):
            for j, b in enumerate(gids):
                lines.append(f"{name},{a},{b},{float(C[i, j])!r}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    summary = {"out": args.out, "queries": len(qids), "gallery": len(gids), "query_camera": q, "gallery_camera": g}
    if st["--emit-cmc-csv"]:
        shared = [k for k in qids if k in ds.gallery]
        if not shared:
            raise ConfigInvalid("no identity appears in both cameras; a CMC curve needs ground truth")
        rows = [qids.index(k) for k in shared]
        truth = np.array([gids.index(k) for k in shared])
        out = ["strategy,rank,accuracy"]
        for name in strategies:
            curve = compute_cmc(mats[name][0][rows], truth)
            out += [f"{name},{r},{float(a)!r}" for r, a in enumerate(curve.accuracy_at_rank, start=1)]
        Path(st["--emit-cmc-csv"]).write_text("\n".join(out) + "\n")
        summary["cmc_csv"] = st["--emit-cmc-csv"]
    return summary


def cmd_evaluate(args, st: Settings, ctx: StageContext) -> dict:
    out = args.out or args.config_out
    if not out:
        raise UsageError("--out is required (or set [evaluation] out in the config)")
    ctx.enter("load")
    tracks = read_tracks(st.require("--tracks"))
    cameras = load_calibration(st.require("--calibration"))
    _check_cameras(tracks, cameras, st["--calibration"])
    features = _features_for(st, tracks)
    weights = load_weights(st["--weights"]) if st["--weights"] else None
    strategies = _strategies(st)
    seeds = st["--seeds"] if st["--seeds"] is not None else list(range(st["--trials"]))
    if not seeds:
        raise ConfigInvalid("at least one trial is required")

    ctx.enter("estimate-poses")
    posed, skipped = pose_tracks(tracks, cameras, st["--frame-rate"], st["--m"])
    ctx.enter("filter")
    scored, _ = score_tracks(posed, cameras, st["--speed-ref"])
    kept, rejected = filter_tracks(scored, st["--conf-threshold"])
    ctx.enter("build-models")
    models = build_models(kept, features)
    ds, q, g = _dataset(st, models)

    ctx.enter("evaluate")
    jobs = st["--jobs"] or os.cpu_count() or 1
    config = EvaluationConfig(
        trial_seeds=seeds,
        strategies=strategies,
        learner=st["--learner"],
        pca_dim=st["--pca-dim"],
        regularization=st["--regularization"],
        max_pos_per_identity=st["--max-pos-per-identity"],
        neg_per_pos=st["--neg-per-pos"],
        weights=weights,
        retrain_weights=st["--retrain-weights"],
        svm_lambda=st["--lambda"],
        weight_pos=st["--pos"],
        weight_neg=st["--neg"],
        weight_pairs_per_identity=st["--pairs-per-identity"],
        single_match_repeats=st["--single-match-repeats"],
        jobs=jobs,
    )
    results = run_evaluation(ds, config)
    settings = st.resolved(_COMMAND_FLAGS["evaluate"])
    # parallelism and output locations do not change results
    settings["evaluation"].pop("jobs")
    settings["evaluation"].pop("emit_cmc_csv")
    metadata = {
        "query_camera": q,
        "gallery_camera": g,
        "identities": len(ds.identities),
        "tracks_skipped": len(skipped),
        "tracks_rejected": len(rejected),
        "weights_source": "file" if weights is not None else ("retrained per split" if config.retrain_weights else "uniform"),
        "settings": settings,
    }
    write_results(results, out, metadata)
    if st["--emit-cmc-csv"]:
        write_cmc_csv(results, st["--emit-cmc-csv"])
    return {"out": out, "rank1": {k: float(r.mean_accuracy[0]) for k, r in results.items()}}


_COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "estimate-poses": cmd_estimate_poses,
    "filter": cmd_filter,
    "build-models": cmd_build_models,
    "train-metric": cmd_train_metric,
    "train-weights": cmd_train_weights,
    "match": cmd_match,
    "evaluate": cmd_evaluate,
}


def _error_line(kind: str, stage: Optional[str], message: str, path=None) -> str:
    rec = {"error": kind, "stage": stage, "message": message}
    if path is not None:
        rec["path"] = str(path)
    return json.dumps(rec)


def main(argv=None) -> int:
    parser = build_parser()
    stage = None
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required; see pamm --help")
        stage = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        config, args.config_out = load_config(args.config)
        ctx = StageContext(stage)
        try:
            summary = _COMMANDS[args.command](args, Settings(args, config), ctx)
        finally:
            stage = ctx.name
    except UsageError as exc:
        print(_error_line("usage", stage, str(exc)), file=sys.stderr)
        return EXIT_USAGE
    except ConfigInvalid as exc:
        print(_error_line("ConfigInvalid", stage, str(exc)), file=sys.stderr)
        return EXIT_USAGE
    except (InputParseError, CalibrationInvalid) as exc:
        print(_error_line(type(exc).__name__, stage, str(exc), getattr(exc, "path", None)), file=sys.stderr)
        return EXIT_PARSE
    except (PammError, ValueError) as exc:
        print(_error_line(type(exc).__name__, stage, str(exc)), file=sys.stderr)
        return EXIT_STAGE
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
