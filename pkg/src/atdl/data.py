"""Datasets: loaders, the binary container, image preprocessing and splits.

Features are stored channel-planar (``C x H x W`` flattened per row) as
float32 in [0, 1]; models cast to float64 when they consume them.
"""
import csv
import gzip
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataFormatError, ShapeError
from .numerics import Rng, derive_seed

CONTAINER_MAGIC = b"ATDLDS01"
CONTAINER_VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR10_NAMES = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]
LUMA = (0.299, 0.587, 0.114)


@dataclass
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    label_names: list = field(default_factory=list)
    height: int = 0
    width: int = 0
    channels: int = 1

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64).ravel()
        if self.x.ndim != 2:
            raise ShapeError(f"x must be 2-D, got {self.x.shape}")
        if self.x.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.x.shape[0]} rows but {self.labels.shape[0]} labels")
        if not self.height or not self.width:
            side = math.isqrt(self.x.shape[1] // max(self.channels, 1))
            self.height = self.width = side
        if self.height * self.width * self.channels != self.x.shape[1]:
            raise ShapeError(f"dims {self.channels}x{self.height}x{self.width} do not match "
                             f"{self.x.shape[1]} features")
        if self.x.size and (not np.all(np.isfinite(self.x)) or self.x.min() < 0.0 or self.x.max() > 1.0):
            raise DataFormatError("features must be finite and lie in [0, 1]")
        if not self.label_names:
            n = int(self.labels.max()) + 1 if self.labels.size else 0
            self.label_names = [str(i) for i in range(n)]
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.label_names)):
            raise DataFormatError("labels must index the label vocabulary")

    def __len__(self):
        return self.x.shape[0]

    @property
    def n_features(self):
        return self.x.shape[1]

    @property
    def n_labels(self):
        return len(self.label_names)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.labels[idx], list(self.label_names), self.height, self.width,
                       self.channels)

    def features(self):
        return self.x.astype(np.float64)

    def images(self):
        return self.x.reshape(len(self), self.channels, self.height, self.width)


def _open_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DataFormatError(f"{path}: corrupt gzip stream ({exc})") from None
    return raw


def load_idx(images_path, labels_path):
    """MNIST-style IDX image and label files (optionally gzipped)."""
    img = _open_bytes(images_path)
    lab = _open_bytes(labels_path)
    if len(img) < 16:
        raise DataFormatError(f"{images_path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{images_path}: bad IDX image magic 0x{magic:08x}")
    if len(img) != 16 + count * rows * cols:
        raise DataFormatError(f"{images_path}: expected {count * rows * cols} pixel bytes, "
                              f"found {len(img) - 16}")
    if len(lab) < 8:
        raise DataFormatError(f"{labels_path}: truncated IDX header")
    lmagic, lcount = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{labels_path}: bad IDX label magic 0x{lmagic:08x}")
    if len(lab) != 8 + lcount:
        raise DataFormatError(f"{labels_path}: expected {lcount} label bytes, found {len(lab) - 8}")
    if lcount != count:
        raise DataFormatError(f"image file holds {count} items but label file holds {lcount}")
    pixels = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    n_labels = max(10, int(labels.max()) + 1) if count else 10
    return Dataset(pixels.astype(np.float32) / np.float32(255.0), labels,
                   [str(i) for i in range(n_labels)], rows, cols, 1)


def write_idx(images_path, labels_path, pixels, labels):
    """Write uint8 images ``(n, rows, cols)`` and labels as IDX files."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n)
                                  + np.asarray(labels, dtype=np.uint8).tobytes())


def load_cifar10(batch_paths):
    """CIFAR-10 binary batches: 1 label byte then 3x1024 planar RGB bytes per record."""
    if isinstance(batch_paths, (str, Path)):
        batch_paths = [batch_paths]
    chunks = []
    for path in batch_paths:
        raw = _open_bytes(path)
        if len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD), np.uint8)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        raise DataFormatError("CIFAR-10 label byte out of range")
    x = records[:, 1:].astype(np.float32) / np.float32(255.0)
    return Dataset(x, labels, list(CIFAR10_NAMES), 32, 32, 3)


def _container_bytes(d):
    header = CONTAINER_MAGIC + struct.pack("<7I", CONTAINER_VERSION, len(d), d.n_features, d.height,
                                           d.width, d.channels, d.n_labels)
    body = header + d.x.astype("<f4").tobytes() + d.labels.astype("<u4").tobytes()
    checksum = int(np.frombuffer(body, dtype=np.uint8).sum(dtype=np.uint64))
    return body + struct.pack("<Q", checksum)


def save_container(d, path):
    Path(path).write_bytes(_container_bytes(d))


def load_container(path):
    raw = Path(path).read_bytes()
    head = len(CONTAINER_MAGIC) + 28
    if len(raw) < head + 8 or raw[:8] != CONTAINER_MAGIC:
        raise DataFormatError(f"{path}: not an ATDLDS01 container")
    version, rows, feats, height, width, channels, vocab = struct.unpack("<7I", raw[8:head])
    if version != CONTAINER_VERSION:
        raise DataFormatError(f"{path}: unsupported container version {version}")
    expected = head + rows * feats * 4 + rows * 4 + 8
    if len(raw) != expected:
        raise DataFormatError(f"{path}: header declares {rows}x{feats} but payload holds {len(raw)} bytes "
                              f"(expected {expected})")
    if height * width * channels != feats:
        raise DataFormatError(f"{path}: dims {channels}x{height}x{width} do not match {feats} features")
    (stored,) = struct.unpack("<Q", raw[-8:])
    actual = int(np.frombuffer(raw[:-8], dtype=np.uint8).sum(dtype=np.uint64))
    if stored != actual:
        raise DataFormatError(f"{path}: checksum mismatch")
    x = np.frombuffer(raw, dtype="<f4", count=rows * feats, offset=head).reshape(rows, feats)
    labels = np.frombuffer(raw, dtype="<u4", count=rows, offset=head + rows * feats * 4)
    try:
        return Dataset(x.astype(np.float32), labels.astype(np.int64), [str(i) for i in range(vocab)],
                       height, width, channels)
    except (ShapeError, DataFormatError) as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def load_csv(path, label_column="label", height=None, width=None, channels=1, scale="auto",
             has_header=True):
    """Rows of pixel values plus one label column.

    ``scale="auto"`` divides by 255 when any value exceeds 1. Without a
    header the label is taken from the column index ``label_column`` (an int,
    default last column).
    """
    text = _open_bytes(path).decode()
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r]
    if not rows:
        raise DataFormatError(f"{path}: empty CSV")
    if has_header:
        header, rows = rows[0], rows[1:]
        if label_column not in header:
            raise DataFormatError(f"{path}: no column named {label_column!r}")
        li = header.index(label_column)
    else:
        li = -1 if label_column in (None, "label") else int(label_column)
    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric cell ({exc})") from None
    if table.ndim != 2:
        raise DataFormatError(f"{path}: ragged rows")
    labels = table[:, li].astype(np.int64)
    x = np.delete(table, li % table.shape[1], axis=1)
    if scale == "auto" and x.size and x.max() > 1.0:
        x = x / 255.0
    elif isinstance(scale, (int, float)) and not isinstance(scale, bool):
        x = x / float(scale)
    if height is None or width is None:
        side = math.isqrt(x.shape[1] // channels)
        height, width = side, x.shape[1] // (channels * side) if side else 0
    return Dataset(x.astype(np.float32), labels, [], height, width, channels)


def to_grayscale(d):
    if d.channels != 3:
        raise ShapeError(f"grayscale conversion needs 3 channels, got {d.channels}")
    img = d.images().astype(np.float64)
    gray = LUMA[0] * img[:, 0] + LUMA[1] * img[:, 1] + LUMA[2] * img[:, 2]
    gray = np.clip(gray, 0.0, 1.0).reshape(len(d), -1)
    return Dataset(gray.astype(np.float32), d.labels.copy(), list(d.label_names), d.height, d.width, 1)


def _bilinear_matrix(n_in, n_out):
    """Row i holds the weights of output pixel i over input pixels (half-pixel centres)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def resize(d, out_h, out_w, chunk=8192):
    if out_h < 1 or out_w < 1:
        raise ArgumentError("target dims must be >= 1")
    if (out_h, out_w) == (d.height, d.width):
        return d.subset(np.arange(len(d)))
    ry = _bilinear_matrix(d.height, out_h)
    rx = _bilinear_matrix(d.width, out_w)
    out = np.empty((len(d), d.channels * out_h * out_w), dtype=np.float32)
    for start in range(0, len(d), chunk):
        img = d.images()[start:start + chunk].astype(np.float64)
        res = np.einsum("oh,nchw,pw->ncop", ry, img, rx, optimize=True)
        out[start:start + chunk] = np.clip(res, 0.0, 1.0).reshape(res.shape[0], -1)
    return Dataset(out, d.labels.copy(), list(d.label_names), out_h, out_w, d.channels)


def select_classes(d, classes, relabel=True):
    """Rows whose label is in ``classes``; relabelled 0..k-1 in the given order."""
    classes = list(classes)
    mask = np.isin(d.labels, classes)
    sub = d.subset(np.flatnonzero(mask))
    if not relabel:
        return sub
    lookup = {c: i for i, c in enumerate(classes)}
    labels = np.array([lookup[int(v)] for v in sub.labels], dtype=np.int64)
    names = [d.label_names[c] for c in classes]
    return Dataset(sub.x, labels, names, d.height, d.width, d.channels)


def subsample(d, n, seed):
    """``n`` rows drawn without replacement, kept in file order."""
    if n >= len(d):
        return d
    idx = np.sort(Rng(seed).choice(len(d), n))
    return d.subset(idx)


@dataclass
class SplitPlan:
    kind: str = "kfold"
    folds: int = 2
    per_class_counts: list | None = None
    seed: int = 0
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in ("kfold", "holdout", "per_class_subsample"):
            raise ArgumentError(f"unknown split kind {self.kind!r}")
        if self.kind == "kfold" and self.folds < 2:
            raise ArgumentError("kfold needs folds >= 2")
        if self.kind == "per_class_subsample" and self.per_class_counts is None:
            raise ArgumentError("per_class_subsample needs per_class_counts")
        if self.kind == "holdout" and not 0.0 < self.test_fraction < 1.0:
            raise ArgumentError("test_fraction must lie in (0, 1)")


def _class_orders(labels, n_labels, seed):
    return [np.flatnonzero(labels == c)[Rng(derive_seed(seed, c)).permutation(int(np.sum(labels == c)))]
            for c in range(n_labels)]


def split_indices(labels, n_labels, plan):
    """Index pairs ``(train, test)`` for ``plan``; each index array is sorted."""
    labels = np.asarray(labels, dtype=np.int64)
    orders = _class_orders(labels, n_labels, plan.seed)
    if plan.kind == "kfold":
        fold_of = np.empty(labels.size, dtype=np.int64)
        offset = 0
        for idx in orders:
            fold_of[idx] = (offset + np.arange(idx.size)) % plan.folds
            offset += idx.size
        everything = np.arange(labels.size)
        return [(everything[fold_of != k], everything[fold_of == k]) for k in range(plan.folds)]
    if plan.kind == "holdout":
        test = np.concatenate([idx[:int(round(plan.test_fraction * idx.size))] for idx in orders])
        train = np.setdiff1d(np.arange(labels.size), test)
        return [(np.sort(train), np.sort(test))]
    counts = list(plan.per_class_counts)
    if len(counts) != n_labels:
        raise ArgumentError(f"per_class_counts has {len(counts)} entries for {n_labels} labels")
    short = {c: (int(k), int(idx.size)) for c, (k, idx) in enumerate(zip(counts, orders)) if k > idx.size}
    if short:
        detail = ", ".join(f"label {c}: need {k}, have {have}" for c, (k, have) in short.items())
        raise ArgumentError(f"infeasible per-class counts ({detail})")
    train = np.concatenate([idx[:int(k)] for k, idx in zip(counts, orders)])
    test = np.setdiff1d(np.arange(labels.size), train)
    return [(np.sort(train), np.sort(test))]


def split(d, plan):
    return [(d.subset(tr), d.subset(te)) for tr, te in split_indices(d.labels, d.n_labels, plan)]


def preprocess(d, grayscale=False, size=None):
    """Optional grayscale conversion followed by an optional resize."""
    if grayscale and d.channels == 3:
        d = to_grayscale(d)
    if size is not None:
        d = resize(d, *size)
    return d
