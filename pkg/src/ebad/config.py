"""Flat key-value configuration with per-mode defaults.

Config files contain `key = value` lines; `#` starts a comment. CLI
flags override file values. Detection-time knobs (beta, gamma,
aggregation, chunk length, streaming updates, alpha) are excluded from
the bundle compatibility hash so a trained bundle can be re-scored
under different thresholds.
"""

import hashlib
from dataclasses import dataclass, fields

from .detector import DetectorConfig
from .dbm import DbmTrainConfig
from .errors import ConfigError
from .ingest import PatchSpec
from .rbm import TrainConfig

MODES = ("ead-rbm", "ead-dbm", "s-rbm", "s-dbm")

# Detection defaults that depend on the mode.
MODE_BETA = {"ead-rbm": 0.0035, "ead-dbm": 0.0043, "s-rbm": 0.003, "s-dbm": 0.003}
MODE_AGGREGATION = {"ead-rbm": "max", "ead-dbm": "mean", "s-rbm": "max", "s-dbm": "max"}


def _parse_scales(text):
    try:
        values = tuple(float(x) for x in str(text).split(",") if str(x).strip() != "")
    except ValueError as exc:
        raise ConfigError(f"bad scales value: {text}") from exc
    if not values:
        raise ConfigError("scales must not be empty")
    return tuple(sorted(values, reverse=True))


def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean value: {text}")


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "ead-rbm"
    frames: str = None
    ground_truth: str = None
    detections: str = None
    bundle: str = None
    out: str = None
    seed: int = 0
    frame_height: int = 240
    frame_width: int = 360
    scales: tuple = (1.0, 0.5, 0.25)
    patch_height: int = 12
    patch_width: int = 18
    stride_v: int = 6
    stride_h: int = 9
    cluster_hidden: int = 4
    region_hidden: int = 100
    epochs: int = 500
    learning_rate: float = 0.1
    cd_steps: int = 1
    batch_size: int = 100
    dbm_clustering: int = 4
    dbm_reconstruction: int = 200
    dbm_epochs: int = 500
    dbm_learning_rate: float = 0.001
    pretrain_epochs: int = 50
    pretrain_learning_rate: float = 0.1
    pcd_chains: int = 100
    mf_tol: float = 1e-4
    mf_max_iters: int = 30
    reduce_hidden: int = 100
    min_region_patches: int = None  # default 2 * batch_size
    beta: float = None              # default per mode
    gamma: int = 10
    aggregation: str = None         # default per mode
    chunk_len: int = 20
    update_epochs: int = 20
    update_learning_rate: float = None  # default learning_rate
    alpha: float = 5.0

    def resolved_beta(self):
        return self.beta if self.beta is not None else MODE_BETA[self.mode]

    def resolved_aggregation(self):
        return self.aggregation if self.aggregation is not None else MODE_AGGREGATION[self.mode]

    def resolved_min_region_patches(self):
        if self.min_region_patches is not None:
            return self.min_region_patches
        return 2 * self.batch_size

    def frame_size(self):
        """(H, W) normalization target, or None to keep native size."""
        if self.frame_height == 0 or self.frame_width == 0:
            return None
        return (self.frame_height, self.frame_width)

    def patch_spec(self, scale=1.0):
        return PatchSpec(self.patch_height, self.patch_width,
                         self.stride_v, self.stride_h, scale)

    def detector_config(self):
        return DetectorConfig(
            beta=self.resolved_beta(),
            gamma=self.gamma,
            scales=self.scales,
            aggregation=self.resolved_aggregation(),
            chunk_len=self.chunk_len,
        )

    def rbm_train_config(self, seed=0):
        return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                           cd_steps=self.cd_steps, batch_size=self.batch_size, seed=seed)

    def update_train_config(self):
        lr = self.update_learning_rate
        if lr is None:
            lr = self.learning_rate
        return TrainConfig(epochs=1, learning_rate=lr, cd_steps=self.cd_steps,
                           batch_size=self.batch_size)

    def dbm_train_config(self, seed=0):
        return DbmTrainConfig(
            epochs=self.dbm_epochs,
            learning_rate=self.dbm_learning_rate,
            batch_size=self.batch_size,
            n_chains=self.pcd_chains,
            pretrain_epochs=self.pretrain_epochs,
            pretrain_learning_rate=self.pretrain_learning_rate,
            mf_tol=self.mf_tol,
            mf_max_iters=self.mf_max_iters,
            seed=seed,
        )


_FIELD_TYPES = {f.name: f for f in fields(PipelineConfig)}
_STRING_KEYS = {"mode", "frames", "ground_truth", "detections", "bundle", "out", "aggregation"}
_INT_KEYS = {
    "seed", "frame_height", "frame_width", "patch_height", "patch_width",
    "stride_v", "stride_h", "cluster_hidden", "region_hidden", "epochs",
    "cd_steps", "batch_size", "dbm_clustering", "dbm_reconstruction",
    "dbm_epochs", "pretrain_epochs", "pcd_chains", "mf_max_iters",
    "reduce_hidden", "min_region_patches", "gamma", "chunk_len", "update_epochs",
}
_FLOAT_KEYS = {
    "learning_rate", "dbm_learning_rate", "pretrain_learning_rate",
    "mf_tol", "beta", "update_learning_rate", "alpha",
}

# Fields that identify a trained bundle. Paths and detection-time knobs
# are deliberately absent.
_HASH_KEYS = (
    "mode", "seed", "frame_height", "frame_width", "scales",
    "patch_height", "patch_width", "stride_v", "stride_h",
    "cluster_hidden", "region_hidden", "epochs", "learning_rate",
    "cd_steps", "batch_size", "dbm_clustering", "dbm_reconstruction",
    "dbm_epochs", "dbm_learning_rate", "pretrain_epochs",
    "pretrain_learning_rate", "pcd_chains", "mf_tol", "mf_max_iters",
    "reduce_hidden", "min_region_patches",
)


def parse_config_file(path):
    """Read a flat key-value config file into a raw string dict."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        values[key] = value
    return values


def _convert(key, value):
    if value is None:
        return None
    if key == "scales":
        return _parse_scales(value) if not isinstance(value, tuple) else value
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value}") from exc
    return str(value)


def build_config(file_values=None, overrides=None):
    """Merge file values and CLI overrides into a validated PipelineConfig."""
    merged = {}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key '{key}'")
            merged[key] = _convert(key, value)
    cfg = PipelineConfig(**merged)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode '{cfg.mode}', expected one of {', '.join(MODES)}")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if (cfg.frame_height == 0) != (cfg.frame_width == 0):
        raise ConfigError("frame_height and frame_width must both be 0 or both set")
    try:
        cfg.patch_spec()
        cfg.detector_config()
        cfg.rbm_train_config()
        cfg.dbm_train_config()
        cfg.update_train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.alpha < 0 or cfg.alpha > 100:
        raise ConfigError("alpha must be a percentage in [0, 100]")
    if cfg.reduce_hidden < 1 or cfg.reduce_hidden > cfg.dbm_reconstruction:
        raise ConfigError("reduce_hidden must be in [1, dbm_reconstruction]")
    if cfg.update_epochs < 0:
        raise ConfigError("update_epochs must be non-negative")
    size = cfg.frame_size()
    if size is not None:
        for scale in cfg.scales:
            h = int(round(size[0] * scale))
            w = int(round(size[1] * scale))
            if h < cfg.patch_height or w < cfg.patch_width:
                raise ConfigError(
                    f"scale {scale} shrinks frames to {h}x{w}, smaller than the patch"
                )


def config_hash(cfg):
    """Stable hash of the bundle-identifying configuration fields."""
    parts = []
    for key in _HASH_KEYS:
        value = getattr(cfg, key)
        if key == "scales":
            value = ",".join(repr(float(s)) for s in value)
        elif key == "min_region_patches":
            value = cfg.resolved_min_region_patches()
        parts.append(f"{key}={value}")
    digest = hashlib.sha256("\n".join(parts).encode("ascii")).hexdigest()
    return digest
