"""Labelled datasets: synthetic Gaussian blobs, IDX image files, normalization."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ContractError, FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """``inputs`` is ``(N, *input_shape)`` float64; ``labels`` are ints in ``[0, n_classes)``.

    ``norm_mean`` / ``norm_std`` are the per-channel statistics that were
    subtracted/divided out (identity when the data was never normalized).
    """

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"
    norm_mean: tuple = field(default=(0.0,))
    norm_std: tuple = field(default=(1.0,))

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64)
        if x.shape[0] != y.shape[0] or y.ndim != 1:
            raise ContractError(f"{x.shape[0]} inputs but labels of shape {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ContractError(f"labels outside [0, {self.n_classes})")
        if len(y) < self.n_classes:
            raise ContractError(f"dataset has {len(y)} examples for {self.n_classes} classes")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self) -> tuple:
        return self.inputs.shape[1:]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index, name: Optional[str] = None) -> "LabeledDataset":
        return replace(self, inputs=self.inputs[index], labels=self.labels[index],
                       name=name or self.name)

    def reshape_inputs(self, shape: Sequence[int]) -> "LabeledDataset":
        return replace(self, inputs=self.inputs.reshape(len(self), *shape))


# ------------------------------------------------------------------ blobs

def blob_centers(n_classes: int, dim: int, distance: float) -> np.ndarray:
    """Deterministic centers with every pairwise distance >= ``distance``."""
    if n_classes <= dim:
        # orthonormal directions from a fixed rotation; pairwise distance exact
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((dim, dim)))
        return (distance / np.sqrt(2.0)) * q[:, :n_classes].T
    centers = np.zeros((n_classes, dim))
    if dim == 1:
        centers[:, 0] = distance * np.arange(n_classes)
        return centers
    radius = distance / (2 * np.sin(np.pi / n_classes))
    angle = 2 * np.pi * np.arange(n_classes) / n_classes
    centers[:, 0], centers[:, 1] = radius * np.cos(angle), radius * np.sin(angle)
    return centers


def gen_blobs(n_per_class: int, n_classes: int = 2, dim: int = 2, spread: float = 0.5,
              seed: int = 0, separation: float = 6.0,
              shape: Optional[Sequence[int]] = None) -> LabeledDataset:
    """Isotropic Gaussian clusters, one per class.

    Centers are fixed by ``(n_classes, dim)`` and sit ``separation * spread``
    apart (``separation`` must be at least 4); only the samples depend on
    ``seed``. ``shape`` optionally views each ``dim``-vector as an image,
    e.g. ``(1, 8, 8)`` for ``dim=64``.
    """
    if n_classes < 2 or dim < 1:
        raise ContractError("gen_blobs needs n_classes >= 2 and dim >= 1")
    if separation < 4:
        raise ContractError("separation must be >= 4 spreads")
    centers = blob_centers(n_classes, dim, separation * spread)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = centers[labels] + spread * rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    x, labels = x[order], labels[order]
    if shape is not None:
        x = x.reshape(len(x), *shape)
    return LabeledDataset(x, labels, n_classes, name=f"blobs{n_classes}x{dim}")


# -------------------------------------------------------------------- IDX

def _open(path):
    path = os.fspath(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: file too short for an IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: magic {found:#010x}, expected {magic:#010x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != expected:
        raise FormatError(
            f"{path}: header promises {expected} bytes of data, file holds {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw ``uint8`` array of shape ``(N, rows, cols)``."""
    return _read_idx(path, IDX_IMAGE_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, IDX_LABEL_MAGIC, 1)


def write_idx(path, array) -> None:
    """Write a ``uint8`` array as IDX (3-D images or 1-D labels)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ContractError("IDX writer only supports uint8 data")
    magic = {3: IDX_IMAGE_MAGIC, 1: IDX_LABEL_MAGIC}.get(arr.ndim)
    if magic is None:
        raise ContractError(f"IDX writer supports 1-D or 3-D arrays, got {arr.ndim}-D")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr).tobytes())


def load_idx(images_path, labels_path, normalize: bool = True, n_classes: Optional[int] = None,
             name: Optional[str] = None) -> LabeledDataset:
    """Load an IDX image/label pair as ``(N, 1, rows, cols)`` inputs in [0, 1].

    With ``normalize`` the result is standardized with its own per-channel
    statistics (the file is assumed to be a training split).
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    x = images[:, None, :, :].astype(np.float64) / 255.0
    c = int(labels.max()) + 1 if n_classes is None else n_classes
    dset = LabeledDataset(x, labels, c, name=name or os.path.basename(os.fspath(images_path)))
    return normalize_dataset(dset)[0] if normalize else dset


def downsample(dset: LabeledDataset, factor: int) -> LabeledDataset:
    """Average-pool the spatial dims of ``(N, C, H, W)`` inputs by ``factor``."""
    x = dset.inputs
    if factor < 1:
        raise ContractError("downsample factor must be >= 1")
    if x.ndim != 4:
        raise ContractError(f"downsample needs (N, C, H, W) inputs, got {x.shape}")
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ContractError(f"spatial dims {(h, w)} not divisible by {factor}")
    pooled = x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    return replace(dset, inputs=pooled)


# ---------------------------------------------------------- normalization

def _channel_axes(x: np.ndarray) -> tuple:
    # images: per channel (axis 1); flat vectors: one pooled channel
    return (0, 2, 3) if x.ndim == 4 else tuple(range(x.ndim))


class ChannelStandardizer(TransformerMixin, BaseEstimator):
    """Per-channel zero-mean / unit-variance scaling for ``(N, C, H, W)`` arrays.

    Inputs with any other rank are treated as a single channel.
    """

    def fit(self, X, y=None):
        X = check_array(X, allow_nd=True, ensure_2d=False)
        axes = _channel_axes(X)
        self.mean_ = np.atleast_1d(X.mean(axis=axes))
        std = np.atleast_1d(X.std(axis=axes))
        self.scale_ = np.where(std > 0, std, 1.0)
        return self

    def _broadcast(self, v, ndim):
        return v.reshape(1, -1, 1, 1) if ndim == 4 else v.reshape(())

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, allow_nd=True, ensure_2d=False)
        return (X - self._broadcast(self.mean_, X.ndim)) / self._broadcast(self.scale_, X.ndim)

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        return X * self._broadcast(self.scale_, X.ndim) + self._broadcast(self.mean_, X.ndim)


def normalize_dataset(train: LabeledDataset, *others: LabeledDataset):
    """Fit statistics on ``train`` only and apply them to every dataset given."""
    scaler = ChannelStandardizer().fit(train.inputs)
    stats = dict(norm_mean=tuple(float(v) for v in scaler.mean_),
                 norm_std=tuple(float(v) for v in scaler.scale_))
    return tuple(replace(d, inputs=scaler.transform(d.inputs), **stats) for d in (train, *others))


def split_dataset(dset: LabeledDataset, test_fraction: float, seed: int):
    """Class-stratified train/test split (both keep the original relative order)."""
    if not 0 < test_fraction < 1:
        raise ContractError("test_fraction must be in (0, 1)")
    idx = np.arange(len(dset))
    train_idx, test_idx = train_test_split(idx, test_size=test_fraction, random_state=seed,
                                           stratify=dset.labels)
    return (dset.subset(np.sort(train_idx), f"{dset.name}-train"),
            dset.subset(np.sort(test_idx), f"{dset.name}-test"))


def stratified_indices(labels: np.ndarray, n_classes: int, per_class: int,
                       rng: np.random.Generator, sort: bool = False) -> np.ndarray:
    """``per_class`` random indices for each class, class-major order."""
    picks = []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if len(members) < per_class:
            raise ContractError(f"class {c} has {len(members)} examples, need {per_class}")
        chosen = rng.choice(members, size=per_class, replace=False)
        picks.append(np.sort(chosen) if sort else chosen)
    out = np.concatenate(picks)
    return np.sort(out) if sort else out
