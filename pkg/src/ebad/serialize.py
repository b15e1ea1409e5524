"""Versioned binary container for trained model parameters.

Layout (all little-endian):

    bytes 0..3   magic "EBAD"
    uint32       format version (currently 1)
    uint32       record type: 1 = RBM, 2 = clustering-reconstruction DBM
    RBM:         uint32 M, uint32 K, float64 a[M], b[K], W row-major [M*K]
    DBM:         uint32 M, K1, K2, float64 a1[M], a2[M], b1[K1], b2[K2],
                 W1 row-major [M*K1], W2 [K1*K2], W3 [K2*M]
"""

import struct

import numpy as np

from .dbm import CrDbmParams
from .errors import DataError
from .rbm import RbmParams

MAGIC = b"EBAD"
FORMAT_VERSION = 1
RECORD_RBM = 1
RECORD_CRDBM = 2


def _pack_floats(*arrays):
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def dump_model(params):
    """Serialize RbmParams or CrDbmParams to bytes."""
    if isinstance(params, RbmParams):
        header = struct.pack(
            "<4sIIII", MAGIC, FORMAT_VERSION, RECORD_RBM,
            params.n_visible, params.n_hidden,
        )
        return header + _pack_floats(
            params.visible_bias, params.hidden_bias, params.weights
        )
    if isinstance(params, CrDbmParams):
        header = struct.pack(
            "<4sIIIII", MAGIC, FORMAT_VERSION, RECORD_CRDBM,
            params.n_visible, params.n_clustering, params.n_reconstruction,
        )
        return header + _pack_floats(
            params.a1, params.a2, params.b1, params.b2,
            params.w1, params.w2, params.w3,
        )
    raise TypeError(f"cannot serialize {type(params).__name__}")


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.data):
            raise DataError(f"truncated model file: {self.path}")
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def uint32(self):
        return struct.unpack("<I", self.take(4))[0]

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def parse_model(data, path="<bytes>"):
    """Deserialize bytes produced by dump_model."""
    reader = _Reader(data, path)
    if reader.take(4) != MAGIC:
        raise DataError(f"bad magic in model file: {path}")
    version = reader.uint32()
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version} in {path}")
    record = reader.uint32()
    if record == RECORD_RBM:
        m, k = reader.uint32(), reader.uint32()
        params = RbmParams(
            visible_bias=reader.floats(m),
            hidden_bias=reader.floats(k),
            weights=reader.floats(m * k).reshape(m, k),
        )
    elif record == RECORD_CRDBM:
        m, k1, k2 = reader.uint32(), reader.uint32(), reader.uint32()
        params = CrDbmParams(
            a1=reader.floats(m),
            a2=reader.floats(m),
            b1=reader.floats(k1),
            b2=reader.floats(k2),
            w1=reader.floats(m * k1).reshape(m, k1),
            w2=reader.floats(k1 * k2).reshape(k1, k2),
            w3=reader.floats(k2 * m).reshape(k2, m),
        )
    else:
        raise DataError(f"unknown record type {record} in {path}")
    if reader.pos != len(reader.data):
        raise DataError(f"trailing bytes after model record in {path}")
    return params


def save_model(params, path):
    with open(path, "wb") as fh:
        fh.write(dump_model(params))


def load_model(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    return parse_model(data, path)
