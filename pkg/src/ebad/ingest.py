"""Frame loading, rescaling and sliding-window patch extraction.

Frames are grayscale float64 arrays in [0, 1]. Patches are extracted on
a clamped stride grid: window start positions advance by the stride and
the final window is shifted back so it ends exactly at the frame edge,
guaranteeing full coverage without padding.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from . import images
from .errors import DataError


@dataclass(frozen=True)
class Frame:
    """One grayscale video frame with its position in the sequence."""

    pixels: np.ndarray
    index: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError("frame pixels must be 2-D")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class PatchSpec:
    """Patch window geometry: size, strides, and the scale it applies to."""

    height: int
    width: int
    stride_v: int
    stride_h: int
    scale: float = 1.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("patch size must be positive")
        if not (1 <= self.stride_v <= self.height):
            raise ValueError("stride_v must be in [1, height]")
        if not (1 <= self.stride_h <= self.width):
            raise ValueError("stride_h must be in [1, width]")
        if not (0.0 < self.scale <= 1.0):
            raise ValueError("scale must be in (0, 1]")

    @property
    def area(self):
        return self.height * self.width

    def with_scale(self, scale):
        return PatchSpec(self.height, self.width, self.stride_v, self.stride_h, scale)


@dataclass(frozen=True)
class PatchGrid:
    """Row-major flattened patches of one frame plus their grid coordinates."""

    patches: np.ndarray          # (n_rows * n_cols, height * width)
    row_starts: np.ndarray       # (n_rows,) top pixel of each grid row
    col_starts: np.ndarray       # (n_cols,) left pixel of each grid column
    spec: PatchSpec
    frame_shape: tuple
    coords: list = field(init=False)

    def __post_init__(self):
        coords = []
        for i, top in enumerate(self.row_starts):
            for j, left in enumerate(self.col_starts):
                rect = (int(top), int(left), self.spec.height, self.spec.width)
                coords.append((i, j, rect))
        object.__setattr__(self, "coords", coords)

    @property
    def grid_shape(self):
        return (len(self.row_starts), len(self.col_starts))


def window_starts(full, window, stride):
    """Start offsets of clamped sliding windows covering [0, full)."""
    if window > full:
        raise ValueError(f"window {window} exceeds extent {full}")
    starts = []
    i = 0
    while True:
        pos = i * stride
        if pos + window >= full:
            starts.append(full - window)
            break
        starts.append(pos)
        i += 1
    return np.array(starts, dtype=np.int64)


def load_frames(directory, expected_size=None, resize=True):
    """Load a directory of image frames in lexicographic filename order.

    Parameters
    ----------
    directory : str
        Directory containing PGM/PNG (or other common raster) frames.
    expected_size : tuple of (height, width), optional
        Target frame size. Frames of a different size are resized
        bilinearly when ``resize`` is true, otherwise a mismatch is an
        error. When omitted, all frames must share the first frame's size.
    resize : bool
        Allow resizing frames that do not match ``expected_size``.
    """
    if not os.path.isdir(directory):
        raise DataError(f"frame directory not found: {directory}")
    names = sorted(
        n for n in os.listdir(directory)
        if n.lower().endswith(images.READABLE_EXTENSIONS)
    )
    if not names:
        raise DataError(f"no image frames in {directory}")
    frames = []
    size = tuple(expected_size) if expected_size is not None else None
    for index, name in enumerate(names):
        pixels = images.read_gray(os.path.join(directory, name))
        if size is None:
            size = pixels.shape
        if pixels.shape != size:
            if not resize:
                raise DataError(
                    f"frame {name} is {pixels.shape}, expected {size} and resizing is disabled"
                )
            pixels = _resize_bilinear(pixels, size)
        frames.append(Frame(pixels=pixels, index=index))
    return frames


def _resize_bilinear(pixels, size):
    h, w = size
    img = Image.fromarray(pixels.astype(np.float32), mode="F")
    out = np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float64)
    # Bilinear weights are convex but float round-off can leak past the range.
    return np.clip(out, 0.0, 1.0)


def rescale(frame, ratio):
    """Rescale a frame by ``ratio`` in (0, 1] using bilinear interpolation.

    Output dimensions are round(H * ratio) x round(W * ratio). A ratio of
    exactly 1.0 returns the input frame unchanged.
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError("ratio must be in (0, 1]")
    if ratio == 1.0:
        return frame
    h, w = frame.shape
    new_h = int(round(h * ratio))
    new_w = int(round(w * ratio))
    if new_h < 1 or new_w < 1:
        raise ValueError(f"ratio {ratio} collapses frame {frame.shape} to zero size")
    return Frame(pixels=_resize_bilinear(frame.pixels, (new_h, new_w)), index=frame.index)


def extract_patches(frame, spec):
    """Extract the clamped sliding-window patch grid of a frame.

    Accepts a Frame or a bare 2-D array. Patch rows are flattened
    row-major and ordered by grid row, then grid column.
    """
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    h, w = pixels.shape
    if spec.height > h or spec.width > w:
        raise ValueError(f"patch {spec.height}x{spec.width} exceeds frame {h}x{w}")
    rows = window_starts(h, spec.height, spec.stride_v)
    cols = window_starts(w, spec.width, spec.stride_h)
    windows = sliding_window_view(pixels, (spec.height, spec.width))
    grid = windows[np.ix_(rows, cols)]
    patches = grid.reshape(len(rows) * len(cols), spec.area).copy()
    return PatchGrid(
        patches=patches,
        row_starts=rows,
        col_starts=cols,
        spec=spec,
        frame_shape=(h, w),
    )


def overlay_mean(shape, rects, values):
    """Composite per-rect values into a frame-sized map, averaging overlaps.

    ``rects`` is a sequence of (top, left, height, width); ``values[k]``
    is either a scalar or an (height, width) block for rect k. Uses a
    running mean so that equal contributions reproduce their value
    bit-exactly regardless of overlap count.
    """
    out = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.int64)
    for rect, value in zip(rects, values):
        top, left, h, w = rect
        sl = (slice(top, top + h), slice(left, left + w))
        count[sl] += 1
        out[sl] += (np.asarray(value, dtype=np.float64) - out[sl]) / count[sl]
    return out


def reassemble(grid):
    """Rebuild the source frame from a PatchGrid by averaging overlaps."""
    h, w = grid.spec.height, grid.spec.width
    rects = [rect for _, _, rect in grid.coords]
    blocks = grid.patches.reshape(-1, h, w)
    return overlay_mean(grid.frame_shape, rects, blocks)


def stack_patches(frames_pixels, spec):
    """Extract patches for several frames at once.

    Returns (patch tensor of shape (T, N, area), grid of the first frame).
    All frames must share one shape so the grid geometry is common.
    """
    first = extract_patches(frames_pixels[0], spec)
    stacked = np.empty((len(frames_pixels), first.patches.shape[0], spec.area))
    stacked[0] = first.patches
    for t in range(1, len(frames_pixels)):
        grid = extract_patches(frames_pixels[t], spec)
        if grid.frame_shape != first.frame_shape:
            raise ValueError("all frames in a stack must share one shape")
        stacked[t] = grid.patches
    return stacked, first
