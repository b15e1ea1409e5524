"""Scene-region labeling: patch cluster codes, voting, partitioning.

A clustering model (small-hidden-layer RBM or the DBM clustering
layer) assigns each patch a binary code; the code read as a
big-endian integer is the patch label. Per grid cell, the modal label
over the training frames becomes the region label, giving one static
RegionMap per scale.
"""

import re
from dataclasses import dataclass

import numpy as np

from . import dbm as dbm_mod
from . import rbm as rbm_mod
from .errors import DataError

# Default qualitative palette for cluster-map rendering (16 entries).
DEFAULT_PALETTE = (
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
    (188, 189, 34), (23, 190, 207), (174, 199, 232), (255, 187, 120),
    (152, 223, 138), (255, 152, 150), (197, 176, 213), (196, 156, 148),
)


@dataclass(frozen=True)
class RegionMap:
    """Static region label per patch-grid cell at one scale."""

    labels: np.ndarray  # (n_rows, n_cols) int64
    scale: float

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError("labels must be 2-D")
        if arr.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "labels", arr)

    @property
    def label_values(self):
        return np.unique(self.labels)

    @property
    def num_regions(self):
        return int(self.label_values.size)


def _code_bits(v_rows, model):
    if isinstance(model, rbm_mod.RbmParams):
        return (rbm_mod.hidden_cond(v_rows, model) > 0.5).astype(np.int64)
    if isinstance(model, dbm_mod.CrDbmParams):
        return dbm_mod.cluster_codes(v_rows, model)
    raise TypeError(f"unsupported clustering model: {type(model).__name__}")


def bits_to_label(bits):
    """Binary code to integer, first unit most significant (0101 -> 5)."""
    bits = np.asarray(bits, dtype=np.int64)
    k = bits.shape[-1]
    weights = 1 << np.arange(k - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def patch_label(v, model):
    """Integer cluster label of one patch vector."""
    bits = _code_bits(np.asarray(v, dtype=np.float64)[None, :], model)
    return int(bits_to_label(bits)[0])


def patch_labels(v_rows, model):
    """Integer cluster labels for a batch of patch vectors."""
    return bits_to_label(_code_bits(np.asarray(v_rows, dtype=np.float64), model))


def vote_region_map(label_tensor, scale):
    """Per-cell modal label over frames; ties go to the smallest label.

    ``label_tensor`` has shape (T, n_rows, n_cols).
    """
    tensor = np.asarray(label_tensor, dtype=np.int64)
    if tensor.ndim != 3 or tensor.shape[0] == 0:
        raise ValueError("label tensor must be (T, rows, cols) with T >= 1")
    t, rows, cols = tensor.shape
    out = np.empty((rows, cols), dtype=np.int64)
    for i in range(rows):
        for j in range(cols):
            counts = np.bincount(tensor[:, i, j])
            out[i, j] = int(np.argmax(counts))  # first max = smallest label
    return RegionMap(labels=out, scale=scale)


def partition_by_region(grid, region_map):
    """Split a PatchGrid's rows by the region label of their cell."""
    if grid.grid_shape != region_map.labels.shape:
        raise ValueError(
            f"grid {grid.grid_shape} does not match region map {region_map.labels.shape}"
        )
    flat_labels = region_map.labels.reshape(-1)
    out = {}
    for value in region_map.label_values:
        out[int(value)] = grid.patches[flat_labels == value]
    return out


def cell_labels_for_grid(grid, region_map):
    """Region label per patch row, aligned with grid.patches."""
    if grid.grid_shape != region_map.labels.shape:
        raise ValueError("grid does not match region map")
    return region_map.labels.reshape(-1)


def merge_small_regions(region_map, patches_by_label, min_count):
    """Fold undersized regions into their nearest-by-centroid neighbor.

    Repeatedly takes the smallest region with fewer than ``min_count``
    patches and merges it into the surviving region whose patch
    centroid is nearest in Euclidean distance (ties toward the smaller
    label). Returns (new RegionMap, merged patch buckets).
    """
    labels = region_map.labels.copy()
    buckets = {int(k): np.asarray(v) for k, v in patches_by_label.items()}
    while len(buckets) > 1:
        sizes = {k: v.shape[0] for k, v in buckets.items()}
        small = [k for k, n in sizes.items() if n < min_count]
        if not small:
            break
        victim = min(small, key=lambda k: (sizes[k], k))
        centroid = buckets[victim].mean(axis=0) if sizes[victim] else None
        candidates = sorted(k for k in buckets if k != victim)
        if centroid is None:
            target = candidates[0]
        else:
            best = None
            for k in candidates:
                if buckets[k].shape[0] == 0:
                    continue
                dist = float(np.linalg.norm(buckets[k].mean(axis=0) - centroid))
                if best is None or dist < best[0]:
                    best = (dist, k)
            target = best[1] if best else candidates[0]
        buckets[target] = np.concatenate([buckets[target], buckets[victim]], axis=0)
        del buckets[victim]
        labels[labels == victim] = target
    return RegionMap(labels=labels, scale=region_map.scale), buckets


def emit_cluster_map(region_map, palette=None, block_size=1):
    """Render a RegionMap as an indexed image.

    Each grid cell becomes a ``block_size``-square pixel block whose
    palette index is the rank of its label among the map's label
    values. Returns (index array, palette used).
    """
    if block_size < 1:
        raise ValueError("block_size must be positive")
    palette = list(palette) if palette is not None else list(DEFAULT_PALETTE)
    values = region_map.label_values
    if len(palette) < values.size:
        raise ValueError(f"palette has {len(palette)} entries, need {values.size}")
    ranks = np.searchsorted(values, region_map.labels)
    image = np.kron(ranks, np.ones((block_size, block_size), dtype=np.int64))
    return image.astype(np.uint8), palette


def save_region_map(region_map, path):
    """Write a RegionMap as an integer CSV grid with a header line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# scale={region_map.scale!r} regions={region_map.num_regions}\n")
        for row in region_map.labels:
            fh.write(",".join(str(int(x)) for x in row) + "\n")


def load_region_map(path):
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        match = re.match(r"#\s*scale=([0-9.eE+-]+)\s+regions=(\d+)", header)
        if not match:
            raise DataError(f"bad region map header in {path}")
        scale = float(match.group(1))
        rows = []
        for line in fh:
            line = line.strip()
            if line:
                rows.append([int(x) for x in line.split(",")])
    if not rows:
        raise DataError(f"empty region map in {path}")
    rm = RegionMap(labels=np.array(rows, dtype=np.int64), scale=scale)
    if rm.num_regions != int(match.group(2)):
        raise DataError(f"region count mismatch in {path}")
    return rm
