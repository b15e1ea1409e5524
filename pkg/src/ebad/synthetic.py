"""Synthetic surveillance-style sequences for tests and demos.

The scene is split into two static textures (vertical stripes on the
left, horizontal stripes on the right) so that scene clustering has
something to find. A dim Gaussian "walker" blob wanders through every
sequence as normal foreground. Anomalies are a high-contrast
checkerboard block gliding through the scene, a texture never seen in
training; ground-truth masks cover exactly its footprint.
"""

import os

import numpy as np

from .images import write_pgm

DEFAULT_SHAPE = (64, 64)
WALKER_PEAK = 0.12
NOISE_AMPLITUDE = 0.02


def background(shape=DEFAULT_SHAPE):
    """Two-texture static scene with values comfortably inside [0, 1].

    Both halves share the same mean brightness; only the stripe
    orientation differs. The strong within-patch contrast is what lets
    a small clustering model commit hidden units to each texture
    instead of averaging the scene into a single flat code.
    """
    h, w = shape
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    left = 0.50 + 0.30 * np.sin(2.0 * np.pi * x / 8.0)
    right = 0.50 + 0.30 * np.sin(2.0 * np.pi * y / 8.0)
    split = w // 2
    frame = np.empty(shape, dtype=np.float64)
    frame[:, :split] = np.broadcast_to(left, shape)[:, :split]
    frame[:, split:] = np.broadcast_to(right, shape)[:, split:]
    return frame


def walker_center(t, shape=DEFAULT_SHAPE):
    h, w = shape
    y = h / 2.0 + (h / 4.0) * np.sin(2.0 * np.pi * t / 37.0)
    x = 8.0 + (t * 1.5) % (w - 16.0)
    return y, x


def _add_walker(frame, t):
    h, w = frame.shape
    cy, cx = walker_center(t, frame.shape)
    yy = np.arange(h)[:, None] - cy
    xx = np.arange(w)[None, :] - cx
    frame += WALKER_PEAK * np.exp(-(yy ** 2 + xx ** 2) / (2.0 * 2.5 ** 2))


def normal_frames(n, shape=DEFAULT_SHAPE, seed=0, start=0, brightness=0.0):
    """(n, H, W) array of anomaly-free frames starting at time ``start``."""
    base = background(shape)
    frames = np.empty((n,) + shape, dtype=np.float64)
    for i in range(n):
        t = start + i
        rng = np.random.default_rng(np.random.SeedSequence((seed, t)))
        frame = base + brightness + NOISE_AMPLITUDE * (rng.random(shape) - 0.5)
        _add_walker(frame, t)
        frames[i] = np.clip(frame, 0.0, 1.0)
    return frames


def _checker_block(size=14, cell=2):
    idx = np.add.outer(np.arange(size) // cell, np.arange(size) // cell)
    return np.where(idx % 2 == 0, 0.05, 0.95)


def anomaly_path(t, shape=DEFAULT_SHAPE, block=14):
    """Top-left corner of the anomalous block at (local) time t."""
    h, w = shape
    y = (h - block) // 2 + int(round(6 * np.sin(2.0 * np.pi * t / 50.0)))
    x = min(4 + t, w - block - 4)
    return y, x


def anomalous_frames(n, shape=DEFAULT_SHAPE, seed=0, start=0, block=14):
    """Frames with the checkerboard intruder plus exact ground-truth masks."""
    frames = normal_frames(n, shape, seed=seed, start=start)
    masks = np.zeros((n,) + shape, dtype=np.uint8)
    tile = _checker_block(block)
    for i in range(n):
        y, x = anomaly_path(i, shape, block)
        frames[i, y:y + block, x:x + block] = tile
        masks[i, y:y + block, x:x + block] = 1
    return frames, masks


def test_sequence(n_lead=20, n_anomalous=30, n_tail=10, shape=DEFAULT_SHAPE,
                  seed=1000):
    """Normal lead-in, a contiguous anomalous stretch, normal tail.

    Returns (frames, masks, frame_flags); time indices continue from
    ``seed``-keyed noise streams so test frames never repeat training
    noise.
    """
    lead = normal_frames(n_lead, shape, seed=seed, start=0)
    mid, mid_masks = anomalous_frames(n_anomalous, shape, seed=seed, start=n_lead)
    tail = normal_frames(n_tail, shape, seed=seed, start=n_lead + n_anomalous)
    frames = np.concatenate([lead, mid, tail])
    masks = np.concatenate([
        np.zeros((n_lead,) + shape, dtype=np.uint8),
        mid_masks,
        np.zeros((n_tail,) + shape, dtype=np.uint8),
    ])
    flags = masks.reshape(masks.shape[0], -1).any(axis=1)
    return frames, masks, flags


def shifted_frames(n, shape=DEFAULT_SHAPE, seed=2000, start=0, brightness=0.2):
    """A scene change: the whole frame brightens but nothing anomalous
    happens. Static models keep flagging it; adaptive ones should not."""
    return normal_frames(n, shape, seed=seed, start=start, brightness=brightness)


def write_frames(directory, frames, maxval=65535):
    os.makedirs(directory, exist_ok=True)
    for t in range(frames.shape[0]):
        quantized = np.rint(frames[t] * maxval).astype(np.int64)
        write_pgm(os.path.join(directory, f"frame_{t:05d}.pgm"),
                  quantized, maxval=maxval)


def write_masks(directory, masks):
    os.makedirs(directory, exist_ok=True)
    for t in range(masks.shape[0]):
        write_pgm(os.path.join(directory, f"gt_{t:05d}.pgm"),
                  masks[t].astype(np.int64) * 255, maxval=255)
