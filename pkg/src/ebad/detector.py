"""Reconstruction-error anomaly detection over frame chunks.

For every scale, every patch of every frame is reconstructed by its
region model; the per-patch average error e_bar = ||v - v_r||_2 / (h*w)
marks the patch's pixel rect in a binary indicator tensor when
e_bar >= beta. Indicator tensors from all scales are OR-combined at
full resolution, 3-D connected components (26-neighborhood plus time)
spanning fewer than gamma frames are removed, and the surviving
components mask the aggregated score map. The per-frame maximum of
that map is the frame anomaly score.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import rbm as rbm_mod
from .dbm import reconstruct_dbm
from .errors import DataError
from .ingest import extract_patches, overlay_mean, rescale, window_starts
from .regions import cell_labels_for_grid
from .utils import as_rng

# Full 3x3x3 neighborhood minus the center: 26 spatial+temporal neighbors.
_STRUCTURE = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class DetectorConfig:
    """Detection thresholds and multi-scale settings."""

    beta: float = 0.0035
    gamma: int = 10
    scales: tuple = (1.0, 0.5, 0.25)
    aggregation: str = "max"
    chunk_len: int = 20

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.gamma < 1 or self.chunk_len < 1:
            raise ValueError("gamma and chunk_len must be positive")
        scales = tuple(sorted((float(s) for s in self.scales), reverse=True))
        if not scales or any(not (0.0 < s <= 1.0) for s in scales):
            raise ValueError("scales must be a non-empty subset of (0, 1]")
        if len(set(scales)) != len(scales):
            raise ValueError("duplicate scales")
        if self.aggregation not in ("max", "mean"):
            raise ValueError("aggregation must be 'max' or 'mean'")
        object.__setattr__(self, "scales", scales)


@dataclass
class ErrorMaps:
    """Per-scale error fields of one chunk.

    pixel_error[s]: (L, Hs, Ws) overlap-averaged |v - v_r|;
    patch_avg[s]:  (L, n_rows, n_cols) per-patch average errors e_bar.
    """

    pixel_error: dict
    patch_avg: dict


@dataclass
class ChunkDetection:
    """Everything the pipeline needs from one scored chunk."""

    error_maps: ErrorMaps
    scale_tensors: dict          # scale -> uint8 (L, Hs, Ws)
    prefilter_tensor: np.ndarray  # uint8 (L, H, W), OR of upsampled scales
    tensor: np.ndarray            # uint8 (L, H, W) after gamma filtering
    score_map: np.ndarray         # float64 (L, H, W), masked by the tensor
    frame_scores: np.ndarray      # (L,)
    components: list              # surviving components, (n, 3) voxel arrays


class RegionRbmScorer:
    """Reconstructs patches with the RBM of their region."""

    def __init__(self, region_params):
        self.region_params = dict(region_params)

    def reconstruct(self, patches, labels):
        out = np.empty_like(patches)
        for label in np.unique(labels):
            params = self.region_params.get(int(label))
            if params is None:
                raise DataError(f"no model for region {int(label)}")
            rows = labels == label
            out[rows] = rbm_mod.reconstruct(patches[rows], params)[0]
        return out


class DbmScorer:
    """Reconstructs patches through the DBM's h2 mean-field posterior."""

    def __init__(self, params, mf_tol=1e-4, mf_max_iters=30):
        self.params = params
        self.mf_tol = mf_tol
        self.mf_max_iters = mf_max_iters

    def reconstruct(self, patches, labels):
        v_r, _ = reconstruct_dbm(patches, self.params, self.mf_tol, self.mf_max_iters)
        return v_r


def _score_frame_scale(pixels, scorer, region_map, spec, beta):
    """Score one rescaled frame at one scale.

    Returns (e_bar grid, pixel error map, indicator slice, rects, e_bar flat).
    """
    grid = extract_patches(pixels, spec)
    if grid.grid_shape != region_map.labels.shape:
        raise DataError(
            f"patch grid {grid.grid_shape} does not match region map "
            f"{region_map.labels.shape}; wrong scale or patch spec"
        )
    labels = cell_labels_for_grid(grid, region_map)
    v_r = scorer.reconstruct(grid.patches, labels)
    err = np.abs(grid.patches - v_r)
    e_bar = np.linalg.norm(err, axis=1) / spec.area
    rects = [rect for _, _, rect in grid.coords]
    pixel_error = overlay_mean(
        grid.frame_shape, rects, err.reshape(-1, spec.height, spec.width)
    )
    z = np.zeros(grid.frame_shape, dtype=np.uint8)
    for rect, value in zip(rects, e_bar):
        if value >= beta:  # boundary inclusive
            top, left, h, w = rect
            z[top : top + h, left : left + w] = 1
    return e_bar.reshape(grid.grid_shape), pixel_error, z, rects, e_bar


def score_chunk(frames, scorers, region_maps, spec, cfg):
    """Score a chunk of frames at every configured scale.

    ``scorers`` and ``region_maps`` map scale ratios to a scorer and a
    RegionMap. Returns (ErrorMaps, dict of per-scale indicator tensors).
    """
    if not frames:
        raise DataError("empty chunk")
    pixel_error = {}
    patch_avg = {}
    tensors = {}
    for scale in cfg.scales:
        scorer = scorers[scale]
        rmap = region_maps[scale]
        per_frame = [rescale(f, scale).pixels for f in frames]
        shape = per_frame[0].shape
        avg = None
        for t, pixels in enumerate(per_frame):
            grid_avg, perr, z, _, _ = _score_frame_scale(pixels, scorer, rmap, spec, cfg.beta)
            if avg is None:
                avg = np.empty((len(frames),) + grid_avg.shape)
                pixel_error[scale] = np.empty((len(frames),) + shape)
                tensors[scale] = np.zeros((len(frames),) + shape, dtype=np.uint8)
            avg[t] = grid_avg
            pixel_error[scale][t] = perr
            tensors[scale][t] = z
        patch_avg[scale] = avg
    return ErrorMaps(pixel_error=pixel_error, patch_avg=patch_avg), tensors


def marked_score_map(patch_avg, frame_shape, spec, beta):
    """Expand marked patches' e_bar values to pixels, averaging overlaps.

    Patches below beta contribute nothing, so a lone marked patch's
    rect carries exactly its e_bar value.
    """
    n_frames = patch_avg.shape[0]
    out = np.zeros((n_frames,) + tuple(frame_shape))
    rows = window_starts(frame_shape[0], spec.height, spec.stride_v)
    cols = window_starts(frame_shape[1], spec.width, spec.stride_h)
    rects = [
        (int(top), int(left), spec.height, spec.width)
        for top in rows for left in cols
    ]
    for t in range(n_frames):
        values = patch_avg[t].reshape(-1)
        marked = values >= beta
        if marked.any():
            sel_rects = [r for r, m in zip(rects, marked) if m]
            out[t] = overlay_mean(tuple(frame_shape), sel_rects, values[marked])
    return out


def _upsample_nearest(tensor, shape):
    """Nearest-neighbor upsample of (L, h, w) to (L, H, W) by rect expansion."""
    l, h, w = tensor.shape
    if (h, w) == tuple(shape):
        return tensor
    ys = (np.arange(shape[0]) * h) // shape[0]
    xs = (np.arange(shape[1]) * w) // shape[1]
    return tensor[:, ys[:, None], xs[None, :]]


def aggregate_scales(score_maps, tensors, cfg):
    """Combine per-scale maps and indicator tensors at full resolution.

    Coarse maps are upsampled by nearest-neighbor rect expansion; score
    maps combine by the configured max or mean operation, indicator
    tensors by logical OR. Component filtering runs after this
    OR-combination, not before.
    """
    base_scale = max(score_maps)
    base_shape = score_maps[base_scale].shape[1:]
    stacked = np.stack([
        _upsample_nearest(score_maps[s], base_shape) for s in sorted(score_maps, reverse=True)
    ])
    if cfg.aggregation == "max":
        combined_map = stacked.max(axis=0)
    else:
        combined_map = stacked.mean(axis=0)
    combined_z = np.zeros(tensors[base_scale].shape[:1] + base_shape, dtype=np.uint8)
    for s in tensors:
        combined_z |= _upsample_nearest(tensors[s], base_shape).astype(np.uint8)
    return combined_map, combined_z


def connected_components(z):
    """3-D connected components under the 26+time neighborhood.

    Two voxels are adjacent when all coordinate offsets are in
    {-1, 0, 1} and at least one is non-zero. Returns a list of (n, 3)
    voxel index arrays in scan order.
    """
    z = np.asarray(z)
    if z.ndim != 3:
        raise ValueError("indicator tensor must be 3-D")
    labeled, count = ndimage.label(z != 0, structure=_STRUCTURE)
    if count == 0:
        return []
    voxels = np.argwhere(labeled > 0)
    values = labeled[voxels[:, 0], voxels[:, 1], voxels[:, 2]]
    order = np.argsort(values, kind="stable")
    voxels = voxels[order]
    values = values[order]
    bounds = np.searchsorted(values, np.arange(1, count + 1))
    bounds = np.append(bounds, voxels.shape[0])
    return [voxels[bounds[i] : bounds[i + 1]] for i in range(count)]


def component_frame_span(component):
    """Inclusive frame span max - min + 1 of one component."""
    t = component[:, 0]
    return int(t.max() - t.min() + 1)


def filter_small_components(z, components, gamma):
    """Zero out components spanning fewer than gamma frames."""
    out = np.asarray(z).copy()
    for comp in components:
        if component_frame_span(comp) < gamma:
            out[comp[:, 0], comp[:, 1], comp[:, 2]] = 0
    return out


def frame_scores(score_map):
    """Per-frame maximum of the final (masked) score map."""
    score_map = np.asarray(score_map, dtype=np.float64)
    if score_map.ndim != 3:
        raise ValueError("score map must be (L, H, W)")
    return score_map.max(axis=(1, 2))


def _assemble(error_maps, tensors, spec, cfg):
    """Shared tail of detection: aggregate, filter, mask, score."""
    score_maps = {
        s: marked_score_map(error_maps.patch_avg[s], error_maps.pixel_error[s].shape[1:],
                            spec, cfg.beta)
        for s in error_maps.patch_avg
    }
    combined_map, combined_z = aggregate_scales(score_maps, tensors, cfg)
    comps = connected_components(combined_z)
    filtered = filter_small_components(combined_z, comps, cfg.gamma)
    surviving = [c for c in comps if component_frame_span(c) >= cfg.gamma]
    final_map = combined_map * (filtered > 0)
    return ChunkDetection(
        error_maps=error_maps,
        scale_tensors=tensors,
        prefilter_tensor=combined_z,
        tensor=filtered,
        score_map=final_map,
        frame_scores=frame_scores(final_map),
        components=surviving,
    )


def detect_chunk(frames, scorers, region_maps, spec, cfg):
    """Score one chunk offline and return the full detection record."""
    error_maps, tensors = score_chunk(frames, scorers, region_maps, spec, cfg)
    return _assemble(error_maps, tensors, spec, cfg)


def stream_update(frames, scorers, region_maps, spec, cfg, update_cfg,
                  update_epochs=20, seed=0, frame_offset=0):
    """Score a chunk while incrementally updating the region models.

    Each frame is scored with the current parameters first; afterwards
    every region model receives ``update_epochs`` CD updates on that
    frame's patches of its region, so updates only affect subsequent
    frames. The per-update RNG is derived from (seed, scale index,
    region label, absolute frame index), which makes the result
    independent of region processing order. The scorers are updated in
    place and the detection record of the chunk is returned.
    """
    if not frames:
        raise DataError("empty chunk")
    scale_list = list(cfg.scales)
    pixel_error = {}
    patch_avg = {}
    tensors = {}
    for t, frame in enumerate(frames):
        for si, scale in enumerate(scale_list):
            scorer = scorers[scale]
            if not isinstance(scorer, RegionRbmScorer):
                raise DataError("streaming requires region RBM models at every scale")
            rmap = region_maps[scale]
            pixels = rescale(frame, scale).pixels
            grid_avg, perr, z, _, _ = _score_frame_scale(pixels, scorer, rmap, spec, cfg.beta)
            if scale not in patch_avg:
                shape = pixels.shape
                patch_avg[scale] = np.empty((len(frames),) + grid_avg.shape)
                pixel_error[scale] = np.empty((len(frames),) + shape)
                tensors[scale] = np.zeros((len(frames),) + shape, dtype=np.uint8)
            patch_avg[scale][t] = grid_avg
            pixel_error[scale][t] = perr
            tensors[scale][t] = z

            # Score-then-update: this frame's patches refresh the models
            # used from the next frame on.
            grid = extract_patches(pixels, spec)
            labels = cell_labels_for_grid(grid, rmap)
            for label in np.unique(labels):
                batch = grid.patches[labels == label]
                if batch.shape[0] == 0:
                    continue
                params = scorer.region_params.get(int(label))
                if params is None:
                    raise DataError(f"no model for region {int(label)}")
                rng = as_rng(np.random.SeedSequence(
                    (seed, si, int(label), frame_offset + t)
                ))
                for _ in range(update_epochs):
                    params = rbm_mod.cd_update(batch, params, update_cfg, rng)
                scorer.region_params[int(label)] = params
    error_maps = ErrorMaps(pixel_error=pixel_error, patch_avg=patch_avg)
    return _assemble(error_maps, tensors, spec, cfg)


def chunks_of(frames, chunk_len):
    """Split a frame list into consecutive non-overlapping chunks."""
    return [frames[i : i + chunk_len] for i in range(0, len(frames), chunk_len)]
