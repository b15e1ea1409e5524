"""Grayscale image file I/O.

Reading goes through Pillow except for PGM files, which are parsed
directly so that 16-bit (maxval > 255) data is handled uniformly.
Writers emit binary PGM (P5) and paletted PNG; PGM output is used for
masks and score maps because the byte layout is trivially deterministic.
"""

import os

import numpy as np
from PIL import Image

from .errors import DataError

READABLE_EXTENSIONS = (".pgm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    # Tokenize the header: magic, width, height, maxval. '#' starts a comment.
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        byte = data[pos : pos + 1]
        if byte.isspace():
            pos += 1
        elif byte == b"#":
            pos = data.index(b"\n", pos) + 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if len(tokens) < 4 or tokens[0] not in (b"P5", b"P2"):
        raise DataError(f"not a PGM file: {path}")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval <= 0:
        raise DataError(f"bad PGM maxval in {path}")
    if tokens[0] == b"P2":
        values = np.array(data[pos:].split(), dtype=np.int64)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else np.uint8
        values = np.frombuffer(data, dtype=dtype, offset=pos)
    if values.size < width * height:
        raise DataError(f"truncated PGM file: {path}")
    pixels = values[: width * height].astype(np.float64).reshape(height, width)
    return pixels / float(maxval)


def read_gray(path):
    """Read an image as a (H, W) float64 array scaled to [0, 1].

    Color inputs are converted to luma first.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such image: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext in (".pgm", ".pnm"):
        return _read_pgm(path)
    try:
        with Image.open(path) as img:
            if img.mode in ("I", "I;16", "I;16B", "I;16L"):
                arr = np.asarray(img, dtype=np.float64)
                return arr / 65535.0
            if img.mode != "L":
                img = img.convert("L")
            return np.asarray(img, dtype=np.float64) / 255.0
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_pgm(path, pixels, maxval=255):
    """Write integer pixel data as binary PGM (P5).

    ``pixels`` must already be integers in [0, maxval]; values above
    255 require ``maxval=65535`` and are stored big-endian per the
    format.
    """
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError("pixels must be 2-D")
    if maxval == 255:
        payload = arr.astype(np.uint8).tobytes()
    elif maxval == 65535:
        payload = arr.astype(">u2").tobytes()
    else:
        raise ValueError("maxval must be 255 or 65535")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + payload)


def write_indexed_png(path, indices, palette):
    """Write a paletted PNG from a 2-D array of palette indices."""
    arr = np.asarray(indices, dtype=np.uint8)
    img = Image.fromarray(arr, mode="P")
    flat = []
    for rgb in palette:
        flat.extend(int(c) for c in rgb)
    img.putpalette(flat)
    img.save(path, format="PNG")
