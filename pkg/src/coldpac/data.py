"""Datasets: IDX (MNIST-style) parsing, synthetic Gaussian blobs, seeded splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


class IDXParseError(ValueError):
    pass


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be an n x d matrix")
        if len(self.features) != len(self.labels):
            raise ValueError(
                f"{len(self.features)} feature rows but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_count)


def _header(buf: bytes, what: str, ndim_expected: int, magic_expected: int):
    if len(buf) < 4:
        raise IDXParseError(f"{what}: truncated magic number at byte offset 0")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != magic_expected:
        raise IDXParseError(
            f"{what}: unsupported magic 0x{magic:08x} at byte offset 0 "
            f"(expected 0x{magic_expected:08x})"
        )
    end = 4 + 4 * ndim_expected
    if len(buf) < end:
        raise IDXParseError(f"{what}: truncated dimension field at byte offset {len(buf)}")
    dims = struct.unpack(f">{ndim_expected}I", buf[4:end])
    return dims, end


def _payload(buf: bytes, what: str, offset: int, count: int) -> np.ndarray:
    if len(buf) - offset < count:
        raise IDXParseError(
            f"{what}: truncated payload, expected {count} bytes from byte offset "
            f"{offset}, got {len(buf) - offset}"
        )
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=offset)


def maybe_gunzip(buf: bytes) -> bytes:
    return gzip.decompress(buf) if buf[:2] == GZIP_MAGIC else buf


def parse_idx(images: bytes, labels: bytes, class_count: int = 10) -> LabeledDataset:
    """Parse an IDX image tensor and label vector; pixels are scaled to [0, 1]."""
    images = maybe_gunzip(images)
    labels = maybe_gunzip(labels)
    (n_img, rows, cols), off = _header(images, "images", 3, IMAGE_MAGIC)
    pixels = _payload(images, "images", off, n_img * rows * cols)
    (n_lab,), loff = _header(labels, "labels", 1, LABEL_MAGIC)
    if n_lab != n_img:
        raise IDXParseError(
            f"labels: count field at byte offset 4 says {n_lab}, images declare {n_img}"
        )
    labs = _payload(labels, "labels", loff, n_lab)
    feats = pixels.reshape(n_img, rows * cols).astype(float) / 255.0
    return LabeledDataset(feats, labs.astype(np.int64), class_count)


def write_idx(ds: LabeledDataset, rows: int, cols: int) -> tuple[bytes, bytes]:
    """Inverse of :func:`parse_idx` for datasets whose pixels are multiples of 1/255."""
    n = len(ds)
    pix = np.rint(ds.features * 255.0).astype(np.uint8)
    images = struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + pix.tobytes()
    labels = struct.pack(">II", LABEL_MAGIC, n) + ds.labels.astype(np.uint8).tobytes()
    return images, labels


def load_idx(images_path, labels_path, limit: int | None = None) -> LabeledDataset:
    ds = parse_idx(Path(images_path).read_bytes(), Path(labels_path).read_bytes())
    if limit is not None:
        ds = ds.subset(np.arange(min(limit, len(ds))))
    return ds


def simplex_centers(class_count: int, d: int, separation: float) -> np.ndarray:
    """Regular simplex vertices in ``d`` dims with pairwise distance ``separation``."""
    k = class_count
    if d < k - 1:
        raise ValueError(f"need d >= class_count - 1 to embed a simplex, got d={d}")
    verts = np.eye(k) - 1.0 / k
    # orthonormal basis of the (k-1)-dim hyperplane the centred vertices span
    u, _, _ = np.linalg.svd(verts.T, full_matrices=False)
    coords = verts @ u[:, : k - 1]
    coords *= 1.0 / np.sqrt(2.0)  # eye rows are sqrt(2) apart
    centers = np.zeros((k, d))
    centers[:, : k - 1] = coords * separation
    return centers


def make_blobs(n: int, class_count: int = 2, d: int = 2, separation: float = 3.0, seed: int = 0) -> LabeledDataset:
    """Unit-variance Gaussian clusters, one per class, of (almost) equal size."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % class_count
    rng.shuffle(labels)
    centers = simplex_centers(class_count, d, separation)
    feats = centers[labels] + rng.standard_normal((n, d))
    return LabeledDataset(feats, labels, class_count)


def split_indices(n: int, plan, seed: int) -> list[np.ndarray]:
    """One seeded permutation of ``range(n)``, then contiguous chunks of the plan's sizes."""
    sizes = list(getattr(plan, "chunk_sizes", plan))
    if sum(sizes) != n:
        raise ValueError(f"plan sizes sum to {sum(sizes)} but dataset has {n} points")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + sizes)
    return [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def split_dataset(ds: LabeledDataset, plan, seed: int) -> list[LabeledDataset]:
    return [ds.subset(idx) for idx in split_indices(len(ds), plan, seed)]
