"""Energy-based anomaly detection for surveillance video.

Boltzmann machines trained on raw image patches score each patch by
reconstruction error; scene clustering assigns patches to per-region
models, spatio-temporal filtering prunes fleeting detections, and
multi-scale aggregation produces frame and pixel level anomaly maps.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, build_config, config_hash, parse_config_file
from .dbm import (
    ClusteringReconstructionDbm,
    CrDbmParams,
    DbmTrainConfig,
    mean_field,
    reconstruct_dbm,
    reduce_to_rbm,
    train_dbm,
)
from .detector import DetectorConfig, detect_chunk, stream_update
from .errors import BundleMismatchError, ConfigError, DataError, EbadError
from .evaluate import (
    EvalReport,
    GroundTruth,
    dual_pixel_level,
    frame_level,
    pixel_level,
)
from .ingest import Frame, PatchSpec, extract_patches, load_frames
from .pipeline import (
    EnergyAnomalyDetector,
    ModelBundle,
    load_bundle,
    run_detection,
    save_bundle,
    train_bundle,
)
from .rbm import BernoulliRbm, RbmParams, TrainConfig, train_rbm
from .regions import RegionMap, vote_region_map
from .serialize import load_model, save_model

__all__ = [
    "BernoulliRbm",
    "BundleMismatchError",
    "ClusteringReconstructionDbm",
    "ConfigError",
    "CrDbmParams",
    "DataError",
    "DbmTrainConfig",
    "DetectorConfig",
    "EbadError",
    "EnergyAnomalyDetector",
    "EvalReport",
    "Frame",
    "GroundTruth",
    "ModelBundle",
    "PatchSpec",
    "PipelineConfig",
    "RbmParams",
    "RegionMap",
    "TrainConfig",
    "build_config",
    "config_hash",
    "detect_chunk",
    "dual_pixel_level",
    "extract_patches",
    "frame_level",
    "load_bundle",
    "load_frames",
    "load_model",
    "mean_field",
    "parse_config_file",
    "pixel_level",
    "reconstruct_dbm",
    "reduce_to_rbm",
    "run_detection",
    "save_bundle",
    "save_model",
    "stream_update",
    "train_bundle",
    "train_dbm",
    "train_rbm",
    "vote_region_map",
    "__version__",
]
