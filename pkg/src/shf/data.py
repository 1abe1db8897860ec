"""Datasets: IDX and RAWMATv1 readers/writers, synthetic curves, splitting.

RAWMATv1 layout (all little-endian)::

    offset  size     field
    0       8        ASCII tag b"RAWMATv1"
    8       8        uint64 rows N
    16      8        uint64 cols m
    24      8*N*m    float64 payload, row-major

A weight checkpoint is a sequence of RAWMATv1 records, one per layer.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ParseError
from .weights import WeightVec

IDX_UBYTE_3D = 0x00000803
RAWMAT_TAG = b"RAWMATv1"
RAWMAT_HEADER = struct.Struct("<8sQQ")


@dataclass
class Dataset:
    X: np.ndarray
    name: str
    source: str  # "idx" | "rawmat" | "synthetic"

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ContractError(f"dataset must be a non-empty matrix, got shape {self.X.shape}")
        if self.X.size and (self.X.min() < 0.0 or self.X.max() > 1.0):
            raise ContractError("dataset entries must lie in [0, 1]")

    @property
    def N(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_test: int
    n_val: int
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_test, self.n_val) < 1:
            raise ConfigError("split sizes must be positive")


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes) -> np.ndarray:
    """Unsigned-byte rank-3 IDX payload as an ``N x (H*W)`` matrix in [0, 1]."""
    if len(raw) < 4:
        raise ParseError("file too short for an IDX magic number", offset=len(raw))
    zero, dtype_code, rank = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise ParseError("bad IDX magic number", offset=0)
    if dtype_code != 0x08:
        raise ParseError(f"unsupported IDX element type 0x{dtype_code:02x}", offset=2)
    if rank != 3:
        raise ParseError(f"unsupported rank {rank} (expected 3-D image data)", offset=3)
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise ParseError("truncated IDX header", offset=len(raw))
    dims = struct.unpack(">III", raw[4:header_end])
    count = dims[0] * dims[1] * dims[2]
    if count > len(raw):
        raise ParseError(f"dimensions {dims} exceed the file size", offset=4)
    if len(raw) - header_end < count:
        raise ParseError(
            f"truncated payload: expected {count} bytes, found {len(raw) - header_end}",
            offset=len(raw),
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end)
    return pixels.reshape(dims[0], dims[1] * dims[2]).astype(np.float64) / 255.0


def load_idx(path) -> Dataset:
    """Read an IDX image file (optionally gzip-compressed)."""
    return Dataset(parse_idx(_read_bytes(path)), os.path.basename(str(path)), "idx")


def idx_bytes(images: np.ndarray) -> bytes:
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ContractError("IDX images must be a uint8 array of shape (N, H, W)")
    return struct.pack(">IIII", IDX_UBYTE_3D, *images.shape) + images.tobytes()


def rawmat_bytes(X: np.ndarray) -> bytes:
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ContractError(f"RAWMATv1 stores matrices, got shape {X.shape}")
    return RAWMAT_HEADER.pack(RAWMAT_TAG, X.shape[0], X.shape[1]) + X.tobytes()


def _read_rawmat_record(raw: bytes, offset: int):
    end = offset + RAWMAT_HEADER.size
    if len(raw) < end:
        raise ParseError(
            f"truncated RAWMATv1 header: expected {RAWMAT_HEADER.size} bytes, found {len(raw) - offset}",
            offset=offset,
        )
    tag, rows, cols = RAWMAT_HEADER.unpack_from(raw, offset)
    if tag != RAWMAT_TAG:
        raise ParseError(f"bad RAWMATv1 tag {tag!r}", offset=offset)
    nbytes = 8 * rows * cols
    if len(raw) - end < nbytes:
        raise ParseError(
            f"truncated payload: expected {end + nbytes} bytes, actual length {len(raw)}",
            offset=len(raw),
        )
    X = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=end).reshape(rows, cols)
    return X.astype(np.float64), end + nbytes


def parse_rawmat(raw: bytes, check_range: bool = True) -> np.ndarray:
    X, end = _read_rawmat_record(raw, 0)
    if end != len(raw):
        raise ParseError(f"{len(raw) - end} trailing bytes after payload", offset=end)
    if check_range and X.size and not ((X >= 0.0) & (X <= 1.0)).all():
        raise ParseError("RAWMATv1 dataset values must lie in [0, 1]")
    return X


def load_rawmat(path) -> Dataset:
    with open(path, "rb") as fh:
        X = parse_rawmat(fh.read())
    return Dataset(X, os.path.basename(str(path)), "rawmat")


def write_rawmat(path, X: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(rawmat_bytes(X))


def save_weights(path, w: WeightVec) -> None:
    with open(path, "wb") as fh:
        for W in w.mats:
            fh.write(rawmat_bytes(W))


def load_weights(path) -> WeightVec:
    with open(path, "rb") as fh:
        raw = fh.read()
    mats, offset = [], 0
    while offset < len(raw):
        W, offset = _read_rawmat_record(raw, offset)
        mats.append(W)
    if not mats:
        raise ParseError("weight file holds no matrices", offset=0)
    return WeightVec.from_mats(mats)


CURVE_SAMPLES = 64
STROKE_RADIUS = 1.2


def render_curves(points: np.ndarray, side: int) -> np.ndarray:
    """Rasterise quadratic Bezier curves.

    ``points`` has shape ``(count, 3, 2)`` with control points in the unit
    square. Pixel intensity is ``max(0, 1 - dist / STROKE_RADIUS)`` for the
    distance from the pixel centre to the nearest of ``CURVE_SAMPLES`` points
    on the curve. Returns ``(count, side*side)`` rows in [0, 1].
    """
    t = np.linspace(0.0, 1.0, CURVE_SAMPLES)[:, None]
    basis = np.hstack(((1 - t) ** 2, 2 * t * (1 - t), t ** 2))  # (samples, 3)
    curve = np.einsum("sj,cjd->csd", basis, points) * (side - 1)  # pixel units
    grid = np.stack(np.meshgrid(np.arange(side), np.arange(side), indexing="xy"), -1)
    grid = grid.reshape(-1, 2).astype(np.float64)  # (side*side, 2) as (x, y)
    out = np.empty((points.shape[0], side * side))
    chunk = max(1, 2_000_000 // (CURVE_SAMPLES * side * side))
    for start in range(0, points.shape[0], chunk):
        seg = curve[start:start + chunk]
        dist = np.sqrt(((seg[:, :, None, :] - grid[None, None]) ** 2).sum(-1)).min(axis=1)
        out[start:start + chunk] = np.clip(1.0 - dist / STROKE_RADIUS, 0.0, 1.0)
    return out


def gen_curves(count: int, side: int, rng: np.random.Generator) -> Dataset:
    """Synthetic curve images from three random control points each."""
    if side < 8:
        raise ContractError(f"side must be >= 8, got {side}")
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    points = rng.random((count, 3, 2))
    return Dataset(render_curves(points, side), f"curves{side}", "synthetic")


def split(ds: Dataset, spec: SplitSpec):
    """Seeded permutation into ``(train, test, val)`` row blocks."""
    total = spec.n_train + spec.n_test + spec.n_val
    if total > ds.N:
        raise ConfigError(f"split sizes sum to {total} but the dataset has {ds.N} rows")
    perm = np.random.default_rng(spec.seed).permutation(ds.N)
    a, b = spec.n_train, spec.n_train + spec.n_test
    return ds.X[perm[:a]], ds.X[perm[a:b]], ds.X[perm[b:total]]
