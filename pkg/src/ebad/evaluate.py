"""ROC evaluation at frame, pixel and dual-pixel granularity.

Frame level: a frame is flagged when its score is >= the threshold;
the sweep visits every distinct score plus +/-inf sentinels, AUC is the
trapezoid over the resulting curve (equal to the Mann-Whitney statistic
with ties counted half) and EER is linearly interpolated where
FPR = 1 - TPR.

Pixel level: detections at threshold t are the pixels of the final
score map with value >= t; an anomalous frame counts as a true
positive when the detection covers at least 40 percent of its
ground-truth anomaly pixels. The dual-pixel criterion additionally
requires that at least alpha percent of the detected pixels fall
inside the ground truth; alpha = 0 reduces it to the pixel criterion.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import images
from .errors import DataError

# A positive frame counts as detected once at least 2/5 of its ground
# truth pixels score above the threshold.
COVERAGE_NUMERATOR = 2
COVERAGE_DENOMINATOR = 5
COVERAGE_FRACTION = COVERAGE_NUMERATOR / COVERAGE_DENOMINATOR


@dataclass(frozen=True)
class GroundTruth:
    """Per-frame anomaly flags and pixel masks."""

    frame_flags: np.ndarray  # (T,) bool
    masks: np.ndarray        # (T, H, W) bool

    def __post_init__(self):
        masks = np.asarray(self.masks) != 0
        flags = np.asarray(self.frame_flags).astype(bool)
        if masks.ndim != 3 or flags.shape != (masks.shape[0],):
            raise ValueError("masks must be (T, H, W) with matching flags")
        if not np.array_equal(masks.any(axis=(1, 2)), flags):
            raise ValueError("frame_flags must equal mask non-emptiness")
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "frame_flags", flags)

    @classmethod
    def from_masks(cls, masks):
        masks = np.asarray(masks) != 0
        return cls(frame_flags=masks.any(axis=(1, 2)), masks=masks)


@dataclass(frozen=True)
class EvalReport:
    """One ROC curve with its summary statistics."""

    level: str                 # 'frame' | 'pixel' | 'dual-pixel'
    roc: tuple                 # ((threshold, tpr, fpr), ...)
    auc: float                 # None when undefined
    eer: float                 # None when undefined or not applicable
    alpha: float = None        # dual-pixel precision percentage


def load_ground_truth(directory, expected_size=None):
    """Load mask frames (nonzero = anomaly) in filename order."""
    if not os.path.isdir(directory):
        raise DataError(f"ground truth directory not found: {directory}")
    names = sorted(
        n for n in os.listdir(directory)
        if n.lower().endswith(images.READABLE_EXTENSIONS)
    )
    if not names:
        raise DataError(f"no mask frames in {directory}")
    masks = []
    for name in names:
        mask = images.read_gray(os.path.join(directory, name)) > 0
        if expected_size is not None and mask.shape != tuple(expected_size):
            raise DataError(f"mask {name} is {mask.shape}, expected {tuple(expected_size)}")
        masks.append(mask)
    return GroundTruth.from_masks(np.stack(masks))


def _auc_from_points(points):
    """Trapezoid area under (fpr, tpr) points sorted by the sweep."""
    fpr = np.array([p[2] for p in points])
    tpr = np.array([p[1] for p in points])
    order = np.lexsort((tpr, fpr))
    return float(np.trapezoid(tpr[order], fpr[order]))


def _eer_from_points(points):
    """FPR where FPR = 1 - TPR, linearly interpolated between sweep points."""
    fpr = np.array([p[2] for p in points])
    miss = 1.0 - np.array([p[1] for p in points])
    diff = fpr - miss
    for i in range(len(points) - 1):
        a, b = diff[i], diff[i + 1]
        if a == 0.0:
            return float(fpr[i])
        if (a < 0) != (b < 0):
            denom = (fpr[i + 1] - fpr[i]) - (miss[i + 1] - miss[i])
            t = (miss[i] - fpr[i]) / denom if denom != 0 else 0.0
            return float(fpr[i] + t * (fpr[i + 1] - fpr[i]))
    if diff[-1] == 0.0:
        return float(fpr[-1])
    return None


def frame_level(scores, gt):
    """Frame-level ROC over the detector's per-frame scores."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = gt.frame_flags.astype(bool)
    if scores.shape != flags.shape:
        raise ValueError("scores and ground truth must cover the same frames")
    n_pos = int(flags.sum())
    n_neg = int((~flags).sum())
    if n_pos == 0 or n_neg == 0:
        return EvalReport(level="frame", roc=(), auc=None, eer=None)
    thresholds = np.concatenate(([np.inf], np.unique(scores)[::-1], [-np.inf]))
    points = []
    for thr in thresholds:
        flagged = scores >= thr
        tpr = float((flagged & flags).sum() / n_pos)
        fpr = float((flagged & ~flags).sum() / n_neg)
        points.append((float(thr), tpr, fpr))
    return EvalReport(
        level="frame",
        roc=tuple(points),
        auc=_auc_from_points(points),
        eer=_eer_from_points(points),
    )


def _pixel_sweep(score_map, gt, alpha):
    """Shared pixel/dual-pixel ROC machinery.

    ``alpha`` is the required detected-pixel precision percentage, or
    None for the plain coverage-only criterion.
    """
    score_map = np.asarray(score_map, dtype=np.float64)
    if score_map.shape != gt.masks.shape:
        raise ValueError("score map and ground truth shapes differ")
    flags = gt.frame_flags.astype(bool)
    n_pos = int(flags.sum())
    n_neg = int((~flags).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    thresholds = np.concatenate((
        [np.inf], np.unique(score_map[score_map > 0])[::-1], [-np.inf]
    ))
    t_frames = score_map.shape[0]
    # Per frame: sorted scores inside and outside the mask, so detected
    # pixel counts at every threshold come from one searchsorted pass.
    n_in_ge = np.zeros((t_frames, thresholds.size), dtype=np.int64)
    n_all_ge = np.zeros((t_frames, thresholds.size), dtype=np.int64)
    mask_sizes = gt.masks.sum(axis=(1, 2)).astype(np.int64)
    for t in range(t_frames):
        inside = np.sort(score_map[t][gt.masks[t] != 0])
        everything = np.sort(score_map[t].reshape(-1))
        n_in_ge[t] = inside.size - np.searchsorted(inside, thresholds, side="left")
        n_all_ge[t] = everything.size - np.searchsorted(everything, thresholds, side="left")

    covered = np.zeros((t_frames, thresholds.size), dtype=bool)
    pos_rows = np.where(flags)[0]
    for t in pos_rows:
        # cross-multiplied comparisons keep exact boundaries exact
        # (0.4 * 35 rounds above 14 in floating point, 2 * 35 <= 5 * 14 does not)
        covered[t] = n_in_ge[t] * COVERAGE_DENOMINATOR >= mask_sizes[t] * COVERAGE_NUMERATOR
        if alpha is not None:
            covered[t] &= n_in_ge[t] * 100.0 >= alpha * n_all_ge[t]
    tpr = covered[pos_rows].sum(axis=0) / n_pos
    fpr = (n_all_ge[~flags] > 0).sum(axis=0) / n_neg
    return [
        (float(thr), float(tp), float(fp))
        for thr, tp, fp in zip(thresholds, tpr, fpr)
    ]


def pixel_level(score_map, gt):
    """Pixel-level ROC with the 40 percent coverage criterion."""
    points = _pixel_sweep(score_map, gt, alpha=None)
    if points is None:
        return EvalReport(level="pixel", roc=(), auc=None, eer=None)
    return EvalReport(
        level="pixel",
        roc=tuple(points),
        auc=_auc_from_points(points),
        eer=_eer_from_points(points),
    )


def dual_pixel_level(score_map, gt, alpha=5.0):
    """Dual-pixel ROC: coverage plus detected-pixel precision >= alpha%.

    No EER is reported because the curve need not reach the diagonal.
    """
    if alpha < 0 or alpha > 100:
        raise ValueError("alpha must be a percentage in [0, 100]")
    points = _pixel_sweep(score_map, gt, alpha=alpha)
    if points is None:
        return EvalReport(level="dual-pixel", roc=(), auc=None, eer=None, alpha=alpha)
    return EvalReport(
        level="dual-pixel",
        roc=tuple(points),
        auc=_auc_from_points(points),
        eer=None,
        alpha=alpha,
    )


def write_report(report, path):
    """Write one ROC report as CSV rows plus a trailing summary line."""
    def fmt(x):
        return "" if x is None else repr(float(x))

    with open(path, "w", encoding="ascii") as fh:
        fh.write("threshold,tpr,fpr\n")
        for thr, tpr, fpr in report.roc:
            fh.write(f"{thr!r},{tpr!r},{fpr!r}\n")
        fh.write(
            f"summary,level={report.level},auc={fmt(report.auc)},"
            f"eer={fmt(report.eer)},alpha={fmt(report.alpha)}\n"
        )
