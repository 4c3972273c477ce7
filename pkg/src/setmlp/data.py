"""Datasets: CSV and binary I/O, stratified splitting, scaling, synthetic data.

Feature matrices are dense and sample-major (``n_samples x n_features``);
only network weights are sparse.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.preprocessing import MinMaxScaler, StandardScaler


class DataFormatError(ValueError):
    """Malformed input file; message carries the offending location."""


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: list[str] | None = None
    scaling: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise ValueError("features must be 2-D")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("need exactly one label per sample")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain NaN or Inf")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.features.dtype == other.features.dtype
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.class_names == other.class_names
        )

    __hash__ = None


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 2 / 3
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")


# -- CSV ---------------------------------------------------------------------

def load_csv(path, label_column=-1, has_header: bool = False) -> Dataset:
    """Read a comma-separated file; ``label_column`` is an index or a header name.

    String labels become dense integer ids in order of first appearance.
    Integer-looking labels are mapped the same way, so ids are always
    contiguous; ``class_names`` records the original tokens.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = None
    if has_header:
        header, rows = rows[0], rows[1:]
    width = len(header) if header is not None else (len(rows[0]) if rows else 0)
    if isinstance(label_column, str):
        if header is None or label_column not in header:
            raise DataFormatError(f"{path}: label column {label_column!r} not in header")
        label_column = header.index(label_column)
    if not -width <= label_column < width:
        raise DataFormatError(f"{path}: label column {label_column} out of range")
    label_column %= width

    first_line = 2 if has_header else 1
    feats = np.empty((len(rows), width - 1), dtype=np.float64)
    mapping: dict[str, int] = {}
    labels = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        line = r + first_line
        if len(row) != width:
            raise DataFormatError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        token = row[label_column].strip()
        labels[r] = mapping.setdefault(token, len(mapping))
        values = row[:label_column] + row[label_column + 1:]
        for c, cell in enumerate(values):
            try:
                feats[r, c] = float(cell)
            except ValueError:
                col = c if c < label_column else c + 1
                raise DataFormatError(
                    f"{path}: line {line}, column {col}: non-numeric value {cell!r}"
                ) from None
    if not np.all(np.isfinite(feats)):
        bad = np.argwhere(~np.isfinite(feats))[0]
        raise DataFormatError(f"{path}: line {bad[0] + first_line}: non-finite feature value")
    return Dataset(feats, labels, class_names=list(mapping))


def save_csv(ds: Dataset, path, header: bool = True) -> None:
    """Write features then the label token in the last column."""
    names = ds.class_names or [str(i) for i in range(ds.n_classes)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"f{i}" for i in range(ds.n_features)] + ["label"])
        for x, y in zip(ds.features.tolist(), ds.labels.tolist()):
            w.writerow([repr(v) for v in x] + [names[y]])


# -- binary ------------------------------------------------------------------

MAGIC = b"SEVD"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_TAGS = {v: k for k, v in _DTYPES.items()}
# magic, version, n_samples, n_features, dtype tag, meta length
_HEADER = struct.Struct("<4sIQQBQ")


def save_binary(ds: Dataset, path) -> None:
    """Layout (little-endian): header, JSON metadata, features, labels (int32)."""
    feats = ds.features
    if feats.dtype not in (np.float32, np.float64):
        feats = feats.astype(np.float64)
    dt = feats.dtype.newbyteorder("<")
    meta = json.dumps({"class_names": ds.class_names, "scaling": ds.scaling}).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ds.n_samples, ds.n_features, _DTYPE_TAGS[dt], len(meta)))
        fh.write(meta)
        fh.write(np.ascontiguousarray(feats, dtype=dt).tobytes())
        fh.write(ds.labels.astype("<i4").tobytes())


def load_binary(path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, n, d, tag, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if tag not in _DTYPES:
        raise DataFormatError(f"{path}: unknown dtype tag {tag}")
    dt = _DTYPES[tag]
    off = _HEADER.size
    expected = off + meta_len + n * d * dt.itemsize + n * 4
    if len(data) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(data)} (truncated?)")
    meta = json.loads(data[off:off + meta_len])
    off += meta_len
    feats = np.frombuffer(data, dtype=dt, count=n * d, offset=off).reshape(n, d).astype(dt.newbyteorder("="))
    off += n * d * dt.itemsize
    labels = np.frombuffer(data, dtype="<i4", count=n, offset=off).astype(np.int64)
    return Dataset(feats, labels, class_names=meta["class_names"], scaling=meta.get("scaling") or {})


def load_dataset(path, **csv_kwargs) -> Dataset:
    """Dispatch on extension: ``.sevd`` is binary, anything else CSV."""
    path = Path(path)
    if path.suffix == ".sevd":
        return load_binary(path)
    return load_csv(path, **csv_kwargs)


# -- splitting and scaling ---------------------------------------------------

def _allocate_train_counts(class_sizes: np.ndarray, fraction: float) -> np.ndarray:
    """Per-class train counts summing to ``floor(n * fraction)``.

    Every class gets the floor or the ceiling of its proportional share;
    leftover slots go to the largest fractional remainders (lower class id
    on ties).
    """
    n = int(class_sizes.sum())
    target = math.floor(n * fraction + 1e-9)
    share = class_sizes * fraction
    counts = np.floor(share + 1e-9).astype(np.int64)
    left = target - int(counts.sum())
    if left > 0:
        remainder = share - counts
        order = np.lexsort((np.arange(len(share)), -remainder))
        counts[order[:left]] += 1
    return counts


def split(ds: Dataset, spec: SplitSpec = SplitSpec()):
    """Deterministic train/test partition; returns ``(train, test)``.

    The train set gets ``floor(n * train_fraction)`` samples. Stratified mode
    allocates that total across classes proportionally.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        n_classes = ds.n_classes
        sizes = np.bincount(ds.labels, minlength=n_classes)
        if np.any(sizes == 0):
            empty = np.flatnonzero(sizes == 0).tolist()
            raise ValueError(f"classes {empty} have no samples; cannot stratify")
        counts = _allocate_train_counts(sizes, spec.train_fraction)
        train_idx, test_idx = [], []
        for c in range(n_classes):
            members = rng.permutation(np.flatnonzero(ds.labels == c))
            train_idx.append(members[:counts[c]])
            test_idx.append(members[counts[c]:])
        train_idx = np.sort(np.concatenate(train_idx))
        test_idx = np.sort(np.concatenate(test_idx))
    else:
        perm = rng.permutation(ds.n_samples)
        k = math.floor(ds.n_samples * spec.train_fraction + 1e-9)
        train_idx, test_idx = np.sort(perm[:k]), np.sort(perm[k:])
    return ds.subset(train_idx), ds.subset(test_idx)


def normalize(train: Dataset, test: Dataset | None = None, method: str = "minmax"):
    """Scale features fit on ``train`` only; returns ``(train, test, scaler)``.

    ``minmax`` maps each training feature to [0, 1] (constant features to 0);
    ``zscore`` standardizes. Test values may fall outside the training range.
    """
    if train.n_samples == 0:
        raise ValueError("cannot fit scaling on an empty training set")
    if method == "minmax":
        scaler = MinMaxScaler()
    elif method == "zscore":
        scaler = StandardScaler()
    else:
        raise ValueError(f"unknown scaling method {method!r}")
    scaler.fit(train.features)
    meta = _scaler_meta(scaler, method)
    scaled_train = replace(train, features=scaler.transform(train.features), scaling=meta)
    scaled_test = None
    if test is not None:
        scaled_test = replace(test, features=scaler.transform(test.features), scaling=meta)
    return scaled_train, scaled_test, scaler


def _scaler_meta(scaler, method):
    if method == "minmax":
        return {"method": method, "min": scaler.data_min_.tolist(), "max": scaler.data_max_.tolist()}
    return {"method": method, "mean": scaler.mean_.tolist(), "std": scaler.scale_.tolist()}


# -- synthetic data ----------------------------------------------------------

def synth_hdls(
    n_samples: int,
    n_features: int,
    n_classes: int,
    n_informative: int,
    noise: float = 1.0,
    seed: int = 0,
    class_sep: float = 1.0,
) -> Dataset:
    """High-dimension, low-sample classification data.

    Each class has a Gaussian centroid (scale ``class_sep``) on the first
    ``n_informative`` features and zero elsewhere; every feature gets
    ``noise``-scaled standard Gaussian noise. Labels cycle through the
    classes before shuffling, so class sizes differ by at most one.
    """
    if n_informative > n_features:
        raise ValueError("n_informative must not exceed n_features")
    rng = np.random.default_rng(seed)
    centroids = rng.normal(0.0, class_sep, size=(n_classes, n_informative))
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    feats = rng.standard_normal((n_samples, n_features))
    feats *= noise
    feats[:, :n_informative] += centroids[labels]
    return Dataset(feats, labels, class_names=[f"class{c}" for c in range(n_classes)])
