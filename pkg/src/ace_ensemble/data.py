"""Datasets: MNIST IDX files, synthetic blobs and regression, seeded batching."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, IdxParseError, InvalidInputError
from .numerics import SeededRng, one_hot

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
MNIST_CLASSES = 10

# IDX type codes -> big-endian numpy dtypes
_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
_IDX_CODES = {np.dtype(v).newbyteorder("=").str: k for k, v in _IDX_DTYPES.items()}


@dataclass(frozen=True)
class Dataset:
    """``features`` is (n, d).  ``y`` is (n, L) probability rows for
    classification or (n,) real targets for regression."""

    features: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2 or y.ndim not in (1, 2) or x.shape[0] != y.shape[0]:
            raise InvalidInputError(f"features {x.shape} and targets {y.shape} disagree")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise InvalidInputError("dataset contains non-finite values")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> Optional[int]:
        return self.y.shape[1] if self.y.ndim == 2 else None

    @property
    def is_classification(self) -> bool:
        return self.y.ndim == 2

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.y[idx])

    def split_tail(self, n_tail: int) -> Tuple["Dataset", "Dataset"]:
        """(head, tail) with the last ``n_tail`` rows held out."""
        if not 0 < n_tail < self.n:
            raise ConfigError(f"cannot hold out {n_tail} of {self.n} rows")
        cut = self.n - n_tail
        return self.subset(slice(0, cut)), self.subset(slice(cut, None))


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic: Optional[int] = None) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed) into a numpy array."""
    try:
        with _open(path) as f:
            raw = f.read()
    except OSError as exc:
        raise IdxParseError(f"cannot read IDX file: {exc}", path) from exc
    if len(raw) < 4:
        raise IdxParseError("file shorter than the 4-byte magic", path, len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise IdxParseError(f"bad magic {magic}, expected {expected_magic}", path, 0)
    zero, code, ndim = magic >> 16, (magic >> 8) & 0xFF, magic & 0xFF
    if zero != 0 or code not in _IDX_DTYPES or ndim == 0:
        raise IdxParseError(f"bad magic {magic:#010x}", path, 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxParseError("truncated dimension header", path, len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = np.dtype(_IDX_DTYPES[code])
    need = int(np.prod(dims)) * dtype.itemsize
    have = len(raw) - header
    if have < need:
        raise IdxParseError(f"truncated payload: {have} of {need} bytes", path, len(raw))
    if have > need:
        raise IdxParseError(f"{have - need} trailing bytes after payload", path, header + need)
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)


def write_idx(path, array):
    """Write ``array`` as IDX (gzip-compressed when the path ends in .gz)."""
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("=").str)
    if code is None:
        raise InvalidInputError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">I", (code << 8) | array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    payload = array.astype(_IDX_DTYPES[code]).tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(header + payload)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Pixels scaled by 1/255 into [0, 1]; labels one-hot over 10 classes."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.ndim != 3:
        raise IdxParseError(f"image file has {images.ndim} dims, expected 3", images_path, 0)
    if labels.ndim != 1:
        raise IdxParseError(f"label file has {labels.ndim} dims, expected 1", labels_path, 0)
    if images.shape[0] != labels.shape[0]:
        raise IdxParseError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", labels_path, 4)
    if labels.size and labels.max() >= MNIST_CLASSES:
        bad = int(np.argmax(labels >= MNIST_CLASSES))
        raise IdxParseError(f"label {labels[bad]} out of range", labels_path, 8 + bad)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, one_hot(labels, MNIST_CLASSES))


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory, split: str) -> Tuple[Path, Path]:
    """Locate the standard file pair of ``split`` in ``directory`` (.gz or raw)."""
    directory = Path(directory)
    found = []
    for stem in MNIST_FILES[split]:
        for name in (stem, stem + ".gz"):
            if (directory / name).exists():
                found.append(directory / name)
                break
        else:
            raise IdxParseError(f"missing MNIST file {stem}[.gz]", directory)
    return found[0], found[1]


def load_mnist_dir(directory, split: str) -> Dataset:
    return load_mnist_idx(*find_mnist(directory, split))


def synth_blobs(n: int, n_classes: int, d: int, spread: float, rng: SeededRng) -> Dataset:
    """Isotropic Gaussian clusters.  Sample i belongs to class ``i % n_classes``.

    Centroids are drawn from N(0, I_d) with ``rng.child("centroids")``; the
    noise uses ``rng.child("noise")``.
    """
    if n_classes < 2 or n < n_classes:
        raise ConfigError("need n >= n_classes >= 2")
    centroids = rng.child("centroids").normal(size=(n_classes, d))
    labels = np.arange(n) % n_classes
    x = centroids[labels]
    if spread > 0:
        x = x + spread * rng.child("noise").normal(size=(n, d))
    return Dataset(x, one_hot(labels, n_classes))


def regression_target(x) -> np.ndarray:
    """Noise-free target: sin(pi * x0) + 0.5 * x1^2 on rows of x in [-1, 1]^2."""
    x = np.asarray(x, dtype=np.float64)
    return np.sin(np.pi * x[:, 0]) + 0.5 * x[:, 1] ** 2


def synth_regression(n: int, noise_sd: float, rng: SeededRng) -> Dataset:
    """x uniform on [-1, 1]^2, y = regression_target(x) + N(0, noise_sd^2).

    Inputs and noise come from separate child streams, drawn row by row, so
    a larger ``n`` with the same seed extends the dataset without changing
    its first rows.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    x = rng.child("inputs").uniform(-1.0, 1.0, size=(n, 2))
    y = regression_target(x)
    if noise_sd > 0:
        y = y + noise_sd * rng.child("noise").normal(size=n)
    return Dataset(x, y)


@dataclass(frozen=True)
class BatchPlan:
    """Mini-batch schedule: epoch e uses a permutation drawn from
    ``shuffle.child("epoch", e)`` cut into contiguous slices."""

    batch_size: int
    shuffle: Union[SeededRng, int] = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not isinstance(self.shuffle, SeededRng):
            object.__setattr__(self, "shuffle", SeededRng(int(self.shuffle)))

    def order(self, n: int, epoch: int = 0) -> np.ndarray:
        if self.batch_size > n:
            raise ConfigError(f"batch_size {self.batch_size} exceeds dataset size {n}")
        return self.shuffle.child("epoch", epoch).permutation(n)


def batch_iter(data: Dataset, plan: BatchPlan, epoch: int = 0) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    order = plan.order(data.n, epoch)
    stop = data.n - data.n % plan.batch_size if plan.drop_last else data.n
    for start in range(0, stop, plan.batch_size):
        idx = order[start:start + plan.batch_size]
        yield data.features[idx], data.y[idx]
