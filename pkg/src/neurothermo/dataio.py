"""MNIST IDX reading, boundary-record encoding and synthetic datasets."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
LEVEL = 0.9  # encoded values live in [-LEVEL, LEVEL]


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray  # (R, input_dim)
    targets: np.ndarray  # (R, output_dim)
    source: str = ""
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.targets.ndim != 2 or len(self.inputs) != len(self.targets):
            raise DataError(f"inconsistent dataset shapes {self.inputs.shape} / {self.targets.shape}")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    @property
    def records(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.inputs, self.targets))

    def subset(self, n: int) -> "Dataset":
        labels = None if self.labels is None else self.labels[:n]
        return Dataset(self.inputs[:n], self.targets[:n], self.source, labels)


def _open(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic: int, kind: str) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">ii", raw[:8])
    if magic != expected_magic:
        raise DataError(f"{path}: bad magic {magic} for {kind} file (expected {expected_magic})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise DataError(f"{path}: truncated data ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def read_idx(path_images, path_labels) -> tuple[np.ndarray, np.ndarray]:
    """Images ``(count, rows, cols)`` uint8 and labels ``(count,)`` uint8."""
    images = _read_idx(path_images, IMAGE_MAGIC, "image")
    labels = _read_idx(path_labels, LABEL_MAGIC, "label")
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"image count {images.shape[0]} != label count {labels.shape[0]}")
    return images, labels


def write_idx(path, array: np.ndarray, magic: int) -> None:
    """Inverse of the reader; handy for fixtures and caching subsets."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">i", magic))
        fh.write(struct.pack(f">{array.ndim}i", *array.shape))
        fh.write(array.tobytes())


def pixel_to_value(p) -> np.ndarray:
    return -LEVEL + 2.0 * LEVEL * np.asarray(p, dtype=np.float64) / 255.0


def value_to_pixel(v) -> np.ndarray:
    return (np.asarray(v, dtype=np.float64) + LEVEL) * 255.0 / (2.0 * LEVEL)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    t = np.full((len(labels), n_classes), -LEVEL)
    t[np.arange(len(labels)), np.asarray(labels, dtype=int)] = LEVEL
    return t


def encode(images: np.ndarray, labels: np.ndarray, downsample_factor: int = 1,
           n_classes: int = 10) -> Dataset:
    if downsample_factor not in (1, 2, 4):
        raise DataError(f"downsample factor must be 1, 2 or 4, got {downsample_factor}")
    imgs = np.asarray(images, dtype=np.float64)
    k = downsample_factor
    count, rows, cols = imgs.shape
    if rows % k or cols % k:
        raise DataError(f"image size {rows}x{cols} not divisible by {k}")
    imgs = imgs.reshape(count, rows // k, k, cols // k, k).mean(axis=(2, 4))
    return Dataset(pixel_to_value(imgs.reshape(count, -1)), one_hot(labels, n_classes),
                   f"mnist/{k}", np.asarray(labels, dtype=int))


def load_mnist(directory, n_records: int | None = None, downsample_factor: int = 1,
               split: str = "train") -> Dataset:
    directory = Path(directory)
    prefix = "train" if split == "train" else "t10k"
    candidates = [(f"{prefix}-images-idx3-ubyte{ext}", f"{prefix}-labels-idx1-ubyte{ext}") for ext in ("", ".gz")]
    candidates += [(f"{prefix}-images.idx3-ubyte", f"{prefix}-labels.idx1-ubyte")]
    for img_name, lab_name in candidates:
        if (directory / img_name).exists() and (directory / lab_name).exists():
            images, labels = read_idx(directory / img_name, directory / lab_name)
            if n_records is not None:
                images, labels = images[:n_records], labels[:n_records]
            return encode(images, labels, downsample_factor)
    raise DataError(f"no MNIST {split} IDX files found in {directory}")


def synth(n_records: int, input_dim: int, n_classes: int, seed: int = 0, sigma: float = 0.2) -> Dataset:
    """Noisy class prototypes at distinct random corners of the encoding box."""
    if n_classes < 1 or n_classes > 2 ** min(input_dim, 62):
        raise DataError(f"cannot place {n_classes} distinct corners in dimension {input_dim}")
    rng = np.random.default_rng(seed)
    corners: set[tuple[int, ...]] = set()
    protos = []
    while len(protos) < n_classes:
        bits = tuple(int(b) for b in rng.integers(0, 2, size=input_dim))
        if bits not in corners:
            corners.add(bits)
            protos.append(np.where(np.array(bits) == 1, LEVEL, -LEVEL))
    protos = np.array(protos)
    labels = rng.integers(0, n_classes, size=n_records)
    x = protos[labels] + sigma * rng.standard_normal((n_records, input_dim))
    x = np.clip(x, -LEVEL, LEVEL)
    return Dataset(x, one_hot(labels, n_classes), f"synth/{seed}", labels)
