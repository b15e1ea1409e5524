"""End-to-end orchestration: training bundles, detection runs, reports.

A trained bundle holds, per scale, the clustering model, the static
region map voted over the training frames, and the per-region RBMs
(or the DBM for the pure DBM mode). Bundles are persisted as a
directory of model records plus a JSON manifest carrying the
configuration hash used for compatibility checks.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import dbm as dbm_mod
from . import rbm as rbm_mod
from . import serialize
from .config import build_config, config_hash
from .detector import (
    DbmScorer,
    RegionRbmScorer,
    chunks_of,
    detect_chunk,
    stream_update,
)
from .errors import BundleMismatchError, DataError
from .evaluate import (
    GroundTruth,
    dual_pixel_level,
    frame_level,
    load_ground_truth,
    pixel_level,
    write_report,
)
from .images import read_gray, write_indexed_png, write_pgm
from .ingest import Frame, load_frames, rescale, stack_patches
from .regions import (
    bits_to_label,
    emit_cluster_map,
    load_region_map,
    merge_small_regions,
    patch_labels,
    save_region_map,
    vote_region_map,
)
from .utils import as_rng

BUNDLE_FORMAT = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class TrainedScale:
    scale: float
    region_map: object
    clustering_rbm: object = None   # RbmParams for the RBM modes
    dbm: object = None              # CrDbmParams for the DBM modes
    region_rbms: dict = None        # label -> RbmParams, None for ead-dbm


@dataclass
class ModelBundle:
    mode: str
    seed: int
    config_hash: str
    scales: list


def _rng_for(cfg, *key):
    return as_rng(np.random.SeedSequence((cfg.seed,) + tuple(int(k) for k in key)))


def _region_buckets(stacked, region_map):
    """Patch rows of all frames grouped by the region of their cell."""
    t, n, area = stacked.shape
    cell_labels = region_map.labels.reshape(-1)
    buckets = {}
    for value in region_map.label_values:
        rows = stacked[:, cell_labels == value, :]
        buckets[int(value)] = rows.reshape(-1, area)
    return buckets


def _train_scale(frames, scale_index, scale, cfg):
    spec = cfg.patch_spec(scale)
    arrays = [rescale(f, scale).pixels for f in frames]
    stacked, grid0 = stack_patches(arrays, spec)
    t, n, area = stacked.shape
    all_patches = stacked.reshape(t * n, area)
    grid_shape = grid0.grid_shape
    rbm_modes = cfg.mode in ("ead-rbm", "s-rbm")

    if rbm_modes:
        cluster_cfg = cfg.rbm_train_config()
        cluster = rbm_mod.train_rbm(
            all_patches, cfg.cluster_hidden, cluster_cfg,
            rng=_rng_for(cfg, scale_index, 0),
        )
        labels = patch_labels(all_patches, cluster)
        cluster_model = cluster
    else:
        dims = (area, cfg.dbm_clustering, cfg.dbm_reconstruction)
        trained_dbm = dbm_mod.train_dbm(
            all_patches, dims, cfg.dbm_train_config(),
            rng=_rng_for(cfg, scale_index, 0),
        )
        labels = patch_labels(all_patches, trained_dbm)
        cluster_model = trained_dbm

    label_tensor = labels.reshape(t, grid_shape[0], grid_shape[1])
    region_map = vote_region_map(label_tensor, scale)

    region_rbms = None
    if cfg.mode != "ead-dbm":
        buckets = _region_buckets(stacked, region_map)
        region_map, buckets = merge_small_regions(
            region_map, buckets, cfg.resolved_min_region_patches()
        )
        region_rbms = {}
        if rbm_modes:
            for label in sorted(buckets):
                region_rbms[label] = rbm_mod.train_rbm(
                    buckets[label], cfg.region_hidden, cfg.rbm_train_config(),
                    rng=_rng_for(cfg, scale_index, 1, label),
                )
        else:
            # s-dbm: distill the reconstruction end into per-region RBMs.
            ordered = sorted(buckets)
            reduced = []
            for label in ordered:
                params, _ = dbm_mod.reduce_to_rbm(
                    trained_dbm, buckets[label], cfg.reduce_hidden
                )
                reduced.append(params)
            tuned, _ = dbm_mod.finetune_region_rbms(
                reduced, [buckets[l] for l in ordered], cfg.rbm_train_config(),
                rng=_rng_for(cfg, scale_index, 1),
            )
            region_rbms = dict(zip(ordered, tuned))

    return TrainedScale(
        scale=scale,
        region_map=region_map,
        clustering_rbm=cluster_model if rbm_modes else None,
        dbm=None if rbm_modes else cluster_model,
        region_rbms=region_rbms,
    )


def train_bundle(frames, cfg):
    """Train one TrainedScale per configured scale."""
    if not frames:
        raise DataError("no training frames")
    scales = []
    for si, scale in enumerate(cfg.detector_config().scales):
        scales.append(_train_scale(frames, si, scale, cfg))
    return ModelBundle(
        mode=cfg.mode, seed=cfg.seed, config_hash=config_hash(cfg), scales=scales
    )


def save_bundle(bundle, directory):
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format": BUNDLE_FORMAT,
        "mode": bundle.mode,
        "seed": bundle.seed,
        "config_hash": bundle.config_hash,
        "scales": [],
    }
    for si, ts in enumerate(bundle.scales):
        entry = {"scale": ts.scale}
        map_name = f"regionmap_s{si}.csv"
        save_region_map(ts.region_map, os.path.join(directory, map_name))
        entry["region_map"] = map_name
        if ts.clustering_rbm is not None:
            name = f"clustering_s{si}.ebad"
            serialize.save_model(ts.clustering_rbm, os.path.join(directory, name))
            entry["clustering"] = name
        if ts.dbm is not None:
            name = f"dbm_s{si}.ebad"
            serialize.save_model(ts.dbm, os.path.join(directory, name))
            entry["dbm"] = name
        if ts.region_rbms is not None:
            entry["regions"] = {}
            for label in sorted(ts.region_rbms):
                name = f"region_s{si}_r{label}.ebad"
                serialize.save_model(ts.region_rbms[label], os.path.join(directory, name))
                entry["regions"][str(label)] = name
        manifest["scales"].append(entry)
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise DataError(f"no bundle manifest at {path}")
    with open(path, "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != BUNDLE_FORMAT:
        raise DataError(f"unsupported bundle format in {path}")
    scales = []
    for entry in manifest["scales"]:
        ts = TrainedScale(
            scale=float(entry["scale"]),
            region_map=load_region_map(os.path.join(directory, entry["region_map"])),
        )
        if "clustering" in entry:
            ts.clustering_rbm = serialize.load_model(os.path.join(directory, entry["clustering"]))
        if "dbm" in entry:
            ts.dbm = serialize.load_model(os.path.join(directory, entry["dbm"]))
        if "regions" in entry:
            ts.region_rbms = {
                int(label): serialize.load_model(os.path.join(directory, name))
                for label, name in entry["regions"].items()
            }
        scales.append(ts)
    return ModelBundle(
        mode=manifest["mode"],
        seed=int(manifest["seed"]),
        config_hash=manifest["config_hash"],
        scales=scales,
    )


def check_bundle(bundle, cfg):
    """Raise BundleMismatchError when the bundle does not fit the config."""
    expected = config_hash(cfg)
    if bundle.config_hash != expected:
        raise BundleMismatchError(
            "bundle was trained under a different configuration "
            f"(hash {bundle.config_hash[:12]}.. != {expected[:12]}..)"
        )
    if bundle.mode != cfg.mode:
        raise BundleMismatchError(f"bundle mode {bundle.mode} != config mode {cfg.mode}")
    scales = tuple(ts.scale for ts in bundle.scales)
    if scales != cfg.detector_config().scales:
        raise BundleMismatchError(f"bundle scales {scales} != config scales {cfg.scales}")


def bundle_scorers(bundle, cfg):
    """(scale -> scorer, scale -> RegionMap) for detection."""
    scorers = {}
    maps = {}
    for ts in bundle.scales:
        if bundle.mode == "ead-dbm":
            if ts.dbm is None:
                raise DataError("bundle is missing its DBM record")
            scorers[ts.scale] = DbmScorer(ts.dbm, cfg.mf_tol, cfg.mf_max_iters)
        else:
            if not ts.region_rbms:
                raise DataError("bundle is missing its region models")
            scorers[ts.scale] = RegionRbmScorer(ts.region_rbms)
        maps[ts.scale] = ts.region_map
    return scorers, maps


@dataclass
class DetectionRun:
    """Concatenated detection output over all chunks of a sequence."""

    frame_scores: np.ndarray   # (T,)
    score_map: np.ndarray      # (T, H, W)
    tensor: np.ndarray         # (T, H, W) uint8
    components: list           # (voxel array, chunk frame offset) pairs


def run_detection(frames, bundle, cfg, stream=False):
    """Detect over a frame sequence chunk by chunk.

    With ``stream=True`` the region models are updated after scoring
    each frame; the (mutated) scorers are returned alongside the run so
    callers can persist the adapted bundle.
    """
    dcfg = cfg.detector_config()
    scorers, maps = bundle_scorers(bundle, cfg)
    spec = cfg.patch_spec()
    all_scores = []
    all_maps = []
    all_tensors = []
    components = []
    offset = 0
    for chunk in chunks_of(frames, dcfg.chunk_len):
        if stream:
            det = stream_update(
                chunk, scorers, maps, spec, dcfg, cfg.update_train_config(),
                update_epochs=cfg.update_epochs, seed=cfg.seed, frame_offset=offset,
            )
        else:
            det = detect_chunk(chunk, scorers, maps, spec, dcfg)
        all_scores.append(det.frame_scores)
        all_maps.append(det.score_map)
        all_tensors.append(det.tensor)
        components.extend((comp, offset) for comp in det.components)
        offset += len(chunk)
    run = DetectionRun(
        frame_scores=np.concatenate(all_scores),
        score_map=np.concatenate(all_maps, axis=0),
        tensor=np.concatenate(all_tensors, axis=0),
        components=components,
    )
    return run, scorers


def write_detection_artifacts(run, cfg, out_dir):
    """Persist masks, score maps and CSV summaries of one run."""
    masks_dir = os.path.join(out_dir, "masks")
    scores_dir = os.path.join(out_dir, "scores")
    os.makedirs(masks_dir, exist_ok=True)
    os.makedirs(scores_dir, exist_ok=True)

    max_score = float(run.score_map.max())
    factor = 65535.0 / max_score if max_score > 0 else 1.0
    for t in range(run.tensor.shape[0]):
        write_pgm(os.path.join(masks_dir, f"mask_{t:05d}.pgm"),
                  run.tensor[t] * np.uint8(255), maxval=255)
        scaled = np.rint(run.score_map[t] * factor).astype(np.int64)
        write_pgm(os.path.join(scores_dir, f"score_{t:05d}.pgm"),
                  np.clip(scaled, 0, 65535), maxval=65535)

    with open(os.path.join(out_dir, "frame_scores.csv"), "w", encoding="ascii") as fh:
        fh.write("frame,score\n")
        for t, score in enumerate(run.frame_scores):
            fh.write(f"{t},{float(score)!r}\n")

    with open(os.path.join(out_dir, "components.csv"), "w", encoding="ascii") as fh:
        fh.write("id,voxels,frame_span,t0,t1,y0,y1,x0,x1\n")
        for cid, (comp, offset) in enumerate(run.components):
            t = comp[:, 0] + offset
            y = comp[:, 1]
            x = comp[:, 2]
            span = int(t.max() - t.min() + 1)
            fh.write(
                f"{cid},{comp.shape[0]},{span},{t.min()},{t.max()},"
                f"{y.min()},{y.max()},{x.min()},{x.max()}\n"
            )

    meta = {
        "beta": cfg.resolved_beta(),
        "gamma": cfg.gamma,
        "mode": cfg.mode,
        "aggregation": cfg.resolved_aggregation(),
        "frames": int(run.tensor.shape[0]),
        "score_scale": factor,
        "config_hash": config_hash(cfg),
    }
    with open(os.path.join(out_dir, "outputs.json"), "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_detection_artifacts(directory):
    """Read a detection run back from its artifact directory."""
    meta_path = os.path.join(directory, "outputs.json")
    if not os.path.isfile(meta_path):
        raise DataError(f"no detection outputs at {directory}")
    with open(meta_path, "r", encoding="ascii") as fh:
        meta = json.load(fh)
    scores = []
    with open(os.path.join(directory, "frame_scores.csv"), "r", encoding="ascii") as fh:
        next(fh)
        for line in fh:
            if line.strip():
                scores.append(float(line.split(",")[1]))
    scores_dir = os.path.join(directory, "scores")
    names = sorted(os.listdir(scores_dir))
    factor = float(meta["score_scale"])
    maps = [read_gray(os.path.join(scores_dir, n)) * 65535.0 / factor for n in names]
    return np.asarray(scores), np.stack(maps), meta


def run_eval(cfg):
    """Evaluate detection artifacts against ground-truth masks."""
    det_dir = cfg.detections or cfg.out
    if det_dir is None:
        raise DataError("no detections directory configured")
    if cfg.ground_truth is None:
        raise DataError("no ground_truth directory configured")
    scores, maps, _ = load_detection_artifacts(det_dir)
    gt = load_ground_truth(cfg.ground_truth, expected_size=maps.shape[1:])
    if gt.masks.shape[0] != scores.shape[0]:
        raise DataError(
            f"{gt.masks.shape[0]} ground-truth masks for {scores.shape[0]} scored frames"
        )
    reports = (
        frame_level(scores, gt),
        pixel_level(maps, gt),
        dual_pixel_level(maps, gt, cfg.alpha),
    )
    os.makedirs(cfg.out, exist_ok=True)
    for report, name in zip(reports, ("frame", "pixel", "dual_pixel")):
        write_report(report, os.path.join(cfg.out, f"eval_{name}.csv"))
    return reports


def write_cluster_maps(bundle, out_dir, block_size=8):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for si, ts in enumerate(bundle.scales):
        image, palette = emit_cluster_map(ts.region_map, block_size=block_size)
        path = os.path.join(out_dir, f"cluster_map_s{si}.png")
        write_indexed_png(path, image, palette)
        paths.append(path)
    return paths


def frames_from_array(array):
    """Wrap a (T, H, W) array in Frame objects."""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 3:
        raise ValueError("expected a (T, H, W) array")
    if array.size and (array.min() < 0 or array.max() > 1):
        raise ValueError("frame values must lie in [0, 1]")
    return [Frame(pixels=array[t], index=t) for t in range(array.shape[0])]


class EnergyAnomalyDetector(BaseEstimator):
    """Sklearn-style facade over the full train/detect pipeline.

    ``fit`` trains on a (T, H, W) float array of normal frames;
    ``score_frames`` returns per-frame anomaly scores, ``predict``
    binary per-frame flags and ``anomaly_masks`` pixel masks.
    """

    def __init__(self, mode="ead-rbm", scales=(1.0, 0.5, 0.25), patch_height=12,
                 patch_width=18, stride_v=6, stride_h=9, cluster_hidden=4,
                 region_hidden=100, dbm_reconstruction=200, epochs=500,
                 learning_rate=0.1, batch_size=100, dbm_epochs=500,
                 dbm_learning_rate=0.001, pretrain_epochs=50, beta=None,
                 gamma=10, aggregation=None, chunk_len=20, update_epochs=20,
                 reduce_hidden=100, min_region_patches=None, random_state=0):
        self.mode = mode
        self.scales = scales
        self.patch_height = patch_height
        self.patch_width = patch_width
        self.stride_v = stride_v
        self.stride_h = stride_h
        self.cluster_hidden = cluster_hidden
        self.region_hidden = region_hidden
        self.dbm_reconstruction = dbm_reconstruction
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.dbm_epochs = dbm_epochs
        self.dbm_learning_rate = dbm_learning_rate
        self.pretrain_epochs = pretrain_epochs
        self.beta = beta
        self.gamma = gamma
        self.aggregation = aggregation
        self.chunk_len = chunk_len
        self.update_epochs = update_epochs
        self.reduce_hidden = reduce_hidden
        self.min_region_patches = min_region_patches
        self.random_state = random_state

    def _config(self, frame_shape):
        overrides = {
            "mode": self.mode,
            "scales": ",".join(repr(float(s)) for s in self.scales),
            "patch_height": self.patch_height,
            "patch_width": self.patch_width,
            "stride_v": self.stride_v,
            "stride_h": self.stride_h,
            "cluster_hidden": self.cluster_hidden,
            "region_hidden": self.region_hidden,
            "dbm_reconstruction": self.dbm_reconstruction,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "dbm_epochs": self.dbm_epochs,
            "dbm_learning_rate": self.dbm_learning_rate,
            "pretrain_epochs": self.pretrain_epochs,
            "beta": self.beta,
            "gamma": self.gamma,
            "aggregation": self.aggregation,
            "chunk_len": self.chunk_len,
            "update_epochs": self.update_epochs,
            "reduce_hidden": self.reduce_hidden,
            "min_region_patches": self.min_region_patches,
            "seed": self.random_state,
            "frame_height": frame_shape[0],
            "frame_width": frame_shape[1],
        }
        return build_config({}, overrides)

    def fit(self, X, y=None):
        frames = frames_from_array(X)
        self.config_ = self._config(frames[0].shape)
        self.bundle_ = train_bundle(frames, self.config_)
        return self

    def _run(self, X, stream=False):
        if not hasattr(self, "bundle_"):
            raise ValueError("detector is not fitted")
        frames = frames_from_array(X)
        run, _ = run_detection(frames, self.bundle_, self.config_, stream=stream)
        return run

    def score_frames(self, X):
        return self._run(X).frame_scores

    def predict(self, X):
        return (self._run(X).frame_scores > 0).astype(np.int64)

    def anomaly_masks(self, X):
        return self._run(X).tensor

    def stream(self, X):
        """Streaming detection; the adapted models replace the bundle's."""
        return self._run(X, stream=True)
