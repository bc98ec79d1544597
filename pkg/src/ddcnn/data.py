"""Datasets: CIFAR-10 binary batches, synthetic 2D/3D generators, HU scaling, splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decomposition import DomainShape
from .exceptions import FormatError, ParameterError, ShapeError

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_PER_FILE = 10_000
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    """``X`` is ``[n, *spatial, C]``; ``y`` holds integer labels in ``[0, K)``."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.X) != len(self.y):
            raise ShapeError(f"{len(self.X)} samples but {len(self.y)} labels")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ParameterError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.y)

    @property
    def domain(self):
        return DomainShape.from_shape(self.X.shape[1:])

    def subset(self, idx, name=None):
        return Dataset(self.X[idx], self.y[idx], self.n_classes, name or self.name)

    def as_tuple(self):
        return self.X, self.y


# --- CIFAR-10 -------------------------------------------------------------

def parse_cifar_batch(raw: bytes, expect_records=None):
    """Decode CIFAR-10 binary records into ``(X [n,32,32,3] uint8, y)``.

    Each 3073-byte record is one label byte followed by the red, green and
    blue planes, each 32x32 row-major.
    """
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"length {len(raw)} is not a multiple of the {CIFAR_RECORD}-byte record")
    n = len(raw) // CIFAR_RECORD
    if expect_records is not None and n != expect_records:
        raise FormatError(f"expected {expect_records} records "
                          f"({expect_records * CIFAR_RECORD} bytes), got {len(raw)} bytes")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    y = rec[:, 0].astype(np.int64)
    if n and y.max() > 9:
        raise FormatError(f"label byte {int(y.max())} > 9")
    X = rec[:, 1:].reshape(n, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(X), y


def cifar_records_to_bytes(X, y):
    """Inverse of :func:`parse_cifar_batch`; accepts uint8 or [0, 1] floats."""
    X = np.asarray(X)
    if X.dtype != np.uint8:
        X = np.rint(X * 255).astype(np.uint8)
    planes = X.transpose(0, 3, 1, 2).reshape(len(X), -1)
    rec = np.concatenate([np.asarray(y, dtype=np.uint8)[:, None], planes], axis=1)
    return rec.tobytes()


def _read_cifar_file(path):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing CIFAR-10 batch file {path}")
    X, y = parse_cifar_batch(path.read_bytes(), CIFAR_PER_FILE)
    return X, y


def load_cifar10(directory, dtype=np.float32):
    """Load the six CIFAR-10 binary batch files from ``directory``.

    Returns ``(train, test)`` datasets of 50 000 and 10 000 images at
    ``[32, 32, 3]``, pixel bytes scaled by 1/255.
    """
    directory = Path(directory)
    parts = [_read_cifar_file(directory / name) for name in CIFAR_TRAIN_FILES]
    Xtr = np.concatenate([p[0] for p in parts])
    ytr = np.concatenate([p[1] for p in parts])
    Xte, yte = _read_cifar_file(directory / CIFAR_TEST_FILE)
    scale = np.dtype(dtype).type(1 / 255)
    return (Dataset(Xtr.astype(dtype) * scale, ytr, 10, "cifar10-train"),
            Dataset(Xte.astype(dtype) * scale, yte, 10, "cifar10-test"))


# --- synthetic generators -------------------------------------------------

def balanced_labels(n, K):
    """``n // K`` labels per class, the remainder going to the lowest classes."""
    counts = np.full(K, n // K)
    counts[: n % K] += 1
    return np.repeat(np.arange(K), counts)


def class_template(k, shape):
    """Class ``k`` pattern on an ``(h, w)`` cell: one of 10 oriented bars.

    Even classes are horizontal bars, odd classes vertical bars, at one of
    five positions along the orthogonal axis.
    """
    h, w = shape
    t = np.zeros((h, w))
    pos = k // 2
    if k % 2 == 0:
        thick = max(1, h // 10)
        r = int((pos + 0.5) * h / 5)
        r = min(max(r - thick // 2, 0), h - thick)
        t[r:r + thick, :] = 1.0
    else:
        thick = max(1, w // 10)
        c = int((pos + 0.5) * w / 5)
        c = min(max(c - thick // 2, 0), w - thick)
        t[:, c:c + thick] = 1.0
    return t


def synth2d(n, K, size=(32, 32), placement="per-quadrant", noise=0.5, seed=0, channels=1):
    """Multi-class 2D images: class bar pattern plus uniform noise.

    ``placement="global"`` draws the pattern once over the whole image;
    ``"per-quadrant"`` repeats it in each quadrant, so that every patch of a
    2x2 decomposition carries the full class signal.
    """
    H, W = size
    if not 2 <= K <= 10:
        raise ParameterError(f"synth2d supports 2 <= K <= 10 classes, got {K}")
    if H < 8 or W < 8:
        raise ParameterError(f"synth2d images must be at least 8x8, got {size}")
    if placement == "global":
        templates = [class_template(k, (H, W)) for k in range(K)]
    elif placement == "per-quadrant":
        templates = []
        for k in range(K):
            t = np.zeros((H, W))
            for rows in (slice(0, H // 2), slice(H // 2, H)):
                for cols in (slice(0, W // 2), slice(W // 2, W)):
                    t[rows, cols] = class_template(k, (rows.stop - rows.start, cols.stop - cols.start))
            templates.append(t)
    else:
        raise ParameterError(f"placement must be 'global' or 'per-quadrant', got {placement!r}")
    rng = np.random.default_rng(seed)
    y = rng.permutation(balanced_labels(n, K))
    X = np.stack([templates[k] for k in y])[..., None].repeat(channels, axis=-1)
    X = X + noise * rng.random(X.shape)
    return Dataset(X.astype(np.float32), y, K, f"synth2d-{placement}")


def synth3d(n, size=(64, 64, 32), seed=0, noise=0.1, blob_intensity=0.5, grid=(2, 2, 2)):
    """Binary volumes: positives carry one ellipsoidal bright blob per grid cell.

    Negatives contain only the uniform background texture. Labels alternate
    so that the classes are balanced exactly for even ``n``.
    """
    size = tuple(int(s) for s in size)
    if len(size) != 3 or min(size) < 16:
        raise ParameterError(f"synth3d volumes must be 3D and at least 16^3, got {size}")
    rng = np.random.default_rng(seed)
    y = rng.permutation(balanced_labels(n, 2))
    X = np.empty((n, *size, 1), dtype=np.float32)
    coords = np.meshgrid(*(np.arange(s) for s in size), indexing="ij")
    cell = [s // g for s, g in zip(size, grid)]
    for i in range(n):
        vol = 0.3 + noise * (rng.random(size) - 0.5)
        if y[i] == 1:
            for gidx in np.ndindex(*grid):
                radii = [rng.uniform(0.2, 0.35) * c for c in cell]
                center = [g * c + rng.uniform(r, c - r) for g, c, r in zip(gidx, cell, radii)]
                dist = sum(((q - m) / r) ** 2 for q, m, r in zip(coords, center, radii))
                vol[dist <= 1.0] += blob_intensity
        X[i, ..., 0] = vol
    return Dataset(X, y, 2, "synth3d")


# --- preprocessing --------------------------------------------------------

HU_MIN, HU_MAX = -1000.0, 400.0


def hu_normalize(volume):
    """Clamp Hounsfield units to [-1000, 400] and map affinely onto [0, 1]."""
    v = np.clip(np.asarray(volume, dtype=np.float64), HU_MIN, HU_MAX)
    return (v - HU_MIN) / (HU_MAX - HU_MIN)


def split(dataset, train_fraction, seed=0):
    """Seeded shuffle, then the first ``round(n * fraction)`` samples train."""
    if not 0 < train_fraction < 1:
        raise ParameterError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ParameterError(f"fraction {train_fraction} of {n} samples leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return (dataset.subset(order[:n_train], f"{dataset.name}-train"),
            dataset.subset(order[n_train:], f"{dataset.name}-val"))


# --- flat binary dump -----------------------------------------------------

_MAGIC = b"DDSY"


def dump_flat(dataset, path):
    """Header ``magic, ndim, extents..., K, n`` (uint32 LE); per sample float32 LE + label byte."""
    X = np.asarray(dataset.X, dtype="<f4")
    shape = X.shape[1:]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(f"<I{len(shape)}III", len(shape), *shape, dataset.n_classes, len(X)))
        labels = dataset.y.astype(np.uint8)
        for i in range(len(X)):
            fh.write(X[i].tobytes())
            fh.write(bytes([labels[i]]))


def load_flat(path, name="flat"):
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    fields = struct.unpack_from(f"<{ndim}III", raw, 8)
    shape, K, n = fields[:ndim], fields[ndim], fields[ndim + 1]
    offset = 8 + 4 * (ndim + 2)
    per = int(np.prod(shape)) * 4 + 1
    if len(raw) - offset != n * per:
        raise FormatError(f"{path}: body has {len(raw) - offset} bytes, expected {n * per}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=offset).reshape(n, per)
    X = body[:, :-1].copy().view("<f4").reshape(n, *shape).astype(np.float32)
    return Dataset(X, body[:, -1].astype(np.int64), K, name)
