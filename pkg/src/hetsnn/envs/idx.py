"""Reader and writer for the IDX container used by MNIST and FashionMNIST.

Layout: a big-endian 32-bit magic (2051 for ``uint8`` images with three
dimensions, 2049 for ``uint8`` labels with one), one big-endian 32-bit size per
dimension, then the raw bytes in row-major order. Files ending in ``.gz`` are
decompressed transparently.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
_NDIM = {IMAGES_MAGIC: 3, LABELS_MAGIC: 1}


class IdxFormatError(ValueError):
    pass


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def parse_idx(data: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(data) < 4:
        raise IdxFormatError(f"{name}: truncated header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in _NDIM:
        raise IdxFormatError(f"{name}: unsupported magic {magic}")
    ndim = _NDIM[magic]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{name}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, data[4:header])
    expected = int(np.prod(dims))
    body = len(data) - header
    if body < expected:
        raise IdxFormatError(f"{name}: truncated data ({body} of {expected} bytes)")
    if body > expected:
        raise IdxFormatError(f"{name}: {body - expected} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims).copy()


def load_idx(path) -> np.ndarray:
    """Array stored in one IDX file (images ``(N, rows, cols)`` or labels ``(N,)``)."""
    with _open(path) as fh:
        return parse_idx(fh.read(), os.fspath(path))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        if array.size and (array.min() < 0 or array.max() > 255):
            raise ValueError("IDX payload must fit in uint8")
        array = array.astype(np.uint8)
    if array.ndim == 3:
        magic = IMAGES_MAGIC
    elif array.ndim == 1:
        magic = LABELS_MAGIC
    else:
        raise ValueError("only 3-D image and 1-D label arrays are supported")
    header = struct.pack(">I" + "I" * array.ndim, magic, *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(array).tobytes())


@dataclass(frozen=True)
class ImageDataset:
    images: np.ndarray  # (N, 28, 28) uint8
    labels: np.ndarray  # (N,) uint8
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and self.labels.max() > 9:
            raise IdxFormatError("labels must be in 0-9")

    def __len__(self) -> int:
        return len(self.labels)

    def flat(self, gain: float = 1.0) -> np.ndarray:
        """Images as ``(N, rows*cols)`` floats scaled to ``[0, gain]``."""
        return self.images.reshape(len(self), -1).astype(np.float64) * (gain / 255.0)

    def subset(self, indices) -> "ImageDataset":
        return ImageDataset(self.images[indices], self.labels[indices], self.split)

    def balanced_subset(self, per_class: int, seed: int = 0) -> "ImageDataset":
        rng = np.random.default_rng(seed)
        picks = []
        for c in range(10):
            idx = np.flatnonzero(self.labels == c)
            if len(idx) < per_class:
                raise ValueError(f"class {c} has only {len(idx)} examples")
            picks.append(rng.choice(idx, per_class, replace=False))
        order = np.concatenate(picks)
        return self.subset(order[rng.permutation(len(order))])


def load_dataset(images_path, labels_path, split: str = "train") -> ImageDataset:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected an image file")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected a label file")
    return ImageDataset(images, labels, split)


def csv_to_idx(csv_path, out_dir, test_per_class: int = 100, seed: int = 0) -> tuple[int, int]:
    """Split a digits CSV (784 pixels then the label per row) into IDX train/test files.

    ``test_per_class`` digits of every class go to the test split. Returns the
    sizes of the two splits.
    """
    import os

    table = np.loadtxt(csv_path, delimiter=",", dtype=np.int64, ndmin=2)
    if table.shape[1] != 785:
        raise IdxFormatError(f"expected 785 columns (784 pixels + label), got {table.shape[1]}")
    images = table[:, :784].reshape(-1, 28, 28)
    labels = table[:, 784]
    rng = np.random.default_rng(seed)
    test = np.zeros(len(labels), dtype=bool)
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        test[rng.choice(idx, min(test_per_class, len(idx)), replace=False)] = True
    os.makedirs(out_dir, exist_ok=True)
    for split, mask in (("train", ~test), ("t10k", test)):
        order = rng.permutation(np.flatnonzero(mask))
        write_idx(os.path.join(out_dir, f"{split}-images-idx3-ubyte"), images[order])
        write_idx(os.path.join(out_dir, f"{split}-labels-idx1-ubyte"), labels[order])
    return int((~test).sum()), int(test.sum())
