"""Versioned flat-file format for linear model weights.

Layout (all little-endian)::

    offset size  field
    0      4     magic b"DKBW"
    4      2     format version (uint16, currently 1)
    6      1     model kind (uint8: 1 detector, 2 domain classifier, 3 ranker)
    7      1     reserved, zero
    8      4     n_features (uint32): hash size, or feature count for the ranker
    12     4     n_outputs (uint32): rows of the weight matrix
    16     8     threshold (float64): detection threshold, ranker margin, NaN if unused
    24     8*n_outputs*n_features   weights, float64, row-major
    ..     8*n_outputs              intercepts, float64

Files are written byte-for-byte deterministically from the weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParseError

MAGIC = b"DKBW"
VERSION = 1
HEADER = struct.Struct("<4sHBBIId")

KIND_DETECTOR = 1
KIND_DOMAIN = 2
KIND_RANKER = 3


@dataclass
class WeightFile:
    kind: int
    threshold: float
    coef: np.ndarray
    intercept: np.ndarray


def dumps_weights(kind: int, coef: np.ndarray, intercept: np.ndarray, threshold: float = float("nan")) -> bytes:
    coef = np.ascontiguousarray(coef, dtype="<f8")
    if coef.ndim == 1:
        coef = coef[None, :]
    intercept = np.ascontiguousarray(intercept, dtype="<f8").reshape(-1)
    n_out, n_feat = coef.shape
    if intercept.shape != (n_out,):
        raise ValueError("intercept length must equal the number of weight rows")
    head = HEADER.pack(MAGIC, VERSION, kind, 0, n_feat, n_out, float(threshold))
    return head + coef.tobytes() + intercept.tobytes()


def loads_weights(blob: bytes, expected_kind: int | None = None) -> WeightFile:
    if len(blob) < HEADER.size:
        raise ParseError("truncated weight file header")
    magic, version, kind, _, n_feat, n_out, threshold = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParseError("not a weight file (bad magic)")
    if version != VERSION:
        raise ParseError(f"unsupported weight file version {version}")
    if expected_kind is not None and kind != expected_kind:
        raise ParseError(f"weight file holds model kind {kind}, expected {expected_kind}")
    n_w = n_out * n_feat
    expected = HEADER.size + 8 * (n_w + n_out)
    if len(blob) != expected:
        raise ParseError(f"weight file has {len(blob)} bytes, expected {expected}")
    body = np.frombuffer(blob, dtype="<f8", offset=HEADER.size)
    coef = body[:n_w].reshape(n_out, n_feat).astype(np.float64)
    intercept = body[n_w:].astype(np.float64)
    return WeightFile(kind, threshold, coef, intercept)


def save_weights(path, kind, coef, intercept, threshold=float("nan")) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_weights(kind, coef, intercept, threshold))


def load_weights(path, expected_kind=None) -> WeightFile:
    with open(path, "rb") as fh:
        return loads_weights(fh.read(), expected_kind)
