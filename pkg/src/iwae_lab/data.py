"""Image datasets: IDX and amat files, binarization and minibatches.

IDX layout (all integers big-endian): two zero bytes, a type code (0x08 for
unsigned bytes), the number of dimensions, one uint32 per dimension, then the
raw data. Images use magic 0x00000803, labels 0x00000801.

amat layout: one example per line, whitespace-separated values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mathcore import DomainError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
UBYTE = 0x08

MNIST_SPLIT = (60000, 10000)
MNIST_FIXED_SPLIT = (50000, 10000)
OMNIGLOT_SPLIT = (24345, 8070)


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, D), values in [0, 1]
    split_tag: str = "train"
    binarization: str = "stochastic"  # stochastic | fixed | pre_binarized

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 2:
            raise ValueError("images must be a 2-D (N, D) array")
        if np.any(self.images < 0) or np.any(self.images > 1):
            raise DomainError("pixel values must lie in [0, 1]")
        if self.binarization == "pre_binarized" and np.any((self.images != 0) & (self.images != 1)):
            raise DomainError("pre-binarized dataset contains non-binary values")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, n: int | None) -> "ImageDataset":
        if n is None or n >= len(self):
            return self
        return ImageDataset(self.images[:n], self.split_tag, self.binarization)


def read_idx(path) -> np.ndarray:
    """Parse any unsigned-byte IDX file into an array of its declared shape."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError("file too short for an IDX header", len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError("bad magic: leading bytes must be zero", 0)
    if raw[2] != UBYTE:
        raise IdxFormatError(f"unsupported IDX type code 0x{raw[2]:02x}", 2)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError("truncated dimension list", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < size:
        raise IdxFormatError(f"truncated data: expected {size} bytes", len(raw))
    if len(raw) - header > size:
        raise IdxFormatError("trailing bytes after data", header + size)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX files are supported")
    header = bytes([0, 0, UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(array).tobytes())


def load_idx(path, split_tag: str = "train") -> ImageDataset:
    """Load an IDX image file; pixel bytes are scaled to [0, 1] by /255."""
    arr = read_idx(path)
    if arr.ndim != 3:
        raise IdxFormatError(f"image files have 3 dimensions, found {arr.ndim}", 3)
    return ImageDataset(arr.reshape(arr.shape[0], -1) / 255.0, split_tag, "stochastic")


def write_amat(path, images: np.ndarray) -> None:
    images = np.asarray(images)
    with open(path, "w") as f:
        for row in images:
            f.write(" ".join(repr(float(v)) if v % 1 else str(int(v)) for v in row))
            f.write("\n")


def read_amat(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append([float(tok) for tok in line.split()])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {i + 1} has {len(r)} values, expected {width}")
    return np.array(rows, dtype=np.float64)


def load_pre_binarized(path, split_tag: str = "train") -> ImageDataset:
    """Load a fixed binarization, either amat text of 0/1 or IDX bytes of 0/255."""
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x00\x00":
        arr = read_idx(path)
        arr = arr.reshape(arr.shape[0], -1)
        if np.any((arr != 0) & (arr != 255)):
            raise ValueError(f"{path}: IDX pixels must be 0 or 255 for a fixed binarization")
        images = arr / 255.0
    else:
        images = read_amat(path)
        bad = (images != 0) & (images != 1)
        if np.any(bad):
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"{path}: non-binary value {images[r, c]} at row {r + 1}, column {c + 1}")
    return ImageDataset(images, split_tag, "pre_binarized")


def load_dataset(path, split_tag: str = "train", binarization: str = "stochastic") -> ImageDataset:
    """Dispatch on file content: IDX images or amat, real-valued or pre-binarized."""
    if binarization == "pre_binarized":
        return load_pre_binarized(path, split_tag)
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x00\x00":
        ds = load_idx(path, split_tag)
    else:
        ds = ImageDataset(read_amat(path), split_tag)
    ds.binarization = binarization
    return ds


def binarize_stochastic(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Each pixel becomes 1 with probability equal to its intensity."""
    images = np.asarray(images, dtype=np.float64)
    if np.any(images < 0) or np.any(images > 1):
        raise DomainError("pixel intensities must lie in [0, 1]")
    return (rng.random(images.shape) < images).astype(np.float64)


def binarized(dataset: ImageDataset, rng: np.random.Generator) -> np.ndarray:
    """Binary pixels for one pass.

    ``stochastic`` and ``fixed`` both sample from the intensities; they differ
    only in whether the caller hands in a fresh stream every pass or the same
    one. Pre-binarized data is returned as is.
    """
    if dataset.binarization == "pre_binarized":
        return dataset.images
    return binarize_stochastic(dataset.images, rng)


class MinibatchIter:
    """Index batches over one pass, in an order drawn from ``rng``."""

    def __init__(self, n: int, rng: np.random.Generator, batch_size: int = 20):
        self.batch_size = batch_size
        self.permutation = rng.permutation(n)

    def __len__(self) -> int:
        return -(-self.permutation.size // self.batch_size)

    def __iter__(self):
        for start in range(0, self.permutation.size, self.batch_size):
            yield self.permutation[start : start + self.batch_size]


def _segment_distance(px, py, a, b):
    d = b - a
    length2 = float(d @ d) or 1e-12
    t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / length2, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


def synthetic_strokes(
    n: int, rng: np.random.Generator, side: int = 28, max_strokes: int = 3, width: float = 1.1
) -> np.ndarray:
    """Grayscale images of 1..max_strokes random pen strokes, values in [0, 1].

    Each stroke is a two-segment polyline with a Gaussian cross-section, so the
    images have a handful of continuous degrees of freedom and soft edges that
    stochastic binarization turns into noisy binary pixels.
    """
    py, px = np.mgrid[0:side, 0:side].astype(np.float64)
    out = np.zeros((n, side, side))
    margin = side * 0.18
    for i in range(n):
        img = np.zeros((side, side))
        for _ in range(rng.integers(1, max_strokes + 1)):
            pts = rng.uniform(margin, side - 1 - margin, size=(3, 2))
            for a, b in zip(pts, pts[1:]):
                dist = _segment_distance(px, py, a, b)
                img = np.maximum(img, np.exp(-0.5 * (dist / width) ** 2))
        out[i] = img
    return np.clip(out.reshape(n, side * side), 0.0, 1.0)
