"""The learnable synthetic set and its ``BPCS`` file format.

File layout (all integers little-endian)::

    b"BPCS" | version u16 | meta length u32 | meta (UTF-8 "key=value" lines)
    | inputs f32[n * prod(input_shape)] | labels one-hot u8[n * n_classes]

with ``n = n_classes * ipc``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import LabeledDataset, stratified_indices
from .errors import ContractError, FormatError

MAGIC = b"BPCS"
VERSION = 1
MAX_COMPRESSION = 10


def to_file_precision(x) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.asarray(x, dtype=np.float32).astype(np.float64)


@dataclass(eq=False)
class SyntheticSet:
    """Pseudo-coreset: ``ipc`` examples per class, class-major, fixed one-hot labels.

    ``inputs`` is mutated in place by the distiller; ``labels`` is read-only.
    """

    inputs: np.ndarray
    ipc: int
    n_classes: int
    meta: dict = field(default_factory=dict)
    labels: np.ndarray = field(init=False)

    def __post_init__(self):
        self.inputs = np.array(self.inputs, dtype=np.float64)
        if self.ipc < 1:
            raise ContractError("ipc must be >= 1")
        if len(self.inputs) != self.ipc * self.n_classes:
            raise ContractError(
                f"{len(self.inputs)} inputs for ipc={self.ipc} x {self.n_classes} classes")
        if not np.isfinite(self.inputs).all():
            raise ContractError("synthetic inputs must be finite")
        labels = np.repeat(np.eye(self.n_classes, dtype=np.uint8), self.ipc, axis=0)
        labels.setflags(write=False)
        self.labels = labels

    def __len__(self):
        return len(self.inputs)

    @property
    def class_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_classes), self.ipc)

    @property
    def input_shape(self) -> tuple:
        return self.inputs.shape[1:]

    def copy(self) -> "SyntheticSet":
        return SyntheticSet(self.inputs.copy(), self.ipc, self.n_classes, dict(self.meta))

    def to_dataset(self) -> LabeledDataset:
        return LabeledDataset(self.inputs.copy(), self.class_labels, self.n_classes,
                              name=self.meta.get("source", "coreset"))


def init_coreset(dset: LabeledDataset, ipc: int, strategy: str = "real", seed: int = 0,
                 enforce_ratio: bool = True) -> SyntheticSet:
    """Class-stratified initialization from real examples or unit Gaussian noise.

    Values are rounded to float32 so the initial set is exactly what a
    ``BPCS`` file would hold.
    """
    n = ipc * dset.n_classes
    if enforce_ratio and n * MAX_COMPRESSION > len(dset):
        raise ContractError(
            f"coreset of {n} examples is not <= 1/{MAX_COMPRESSION} of {len(dset)} examples")
    rng = np.random.default_rng(seed)
    if strategy == "real":
        idx = stratified_indices(dset.labels, dset.n_classes, ipc, rng)
        inputs = dset.inputs[idx]
    elif strategy == "noise":
        if (dset.class_counts() < 1).any():
            raise ContractError("every class needs at least one real example")
        inputs = rng.standard_normal((n, *dset.input_shape))
    else:
        raise ContractError(f"unknown init strategy {strategy!r}; use 'real' or 'noise'")
    meta = {
        "init": strategy,
        "seed": str(seed),
        "source": dset.name,
        "norm_mean": ",".join(repr(v) for v in dset.norm_mean),
        "norm_std": ",".join(repr(v) for v in dset.norm_std),
    }
    return SyntheticSet(to_file_precision(inputs), ipc, dset.n_classes, meta)


def _encode_meta(meta: dict) -> bytes:
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in value or "=" in key:
            raise ContractError(f"metadata entry {key!r} cannot be serialized")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _decode_meta(raw: bytes) -> dict:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("metadata block is not UTF-8") from exc
    meta = {}
    for line in filter(None, text.split("\n")):
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed metadata line {line!r}")
        meta[key] = value
    return meta


def coreset_bytes(cs: SyntheticSet) -> bytes:
    meta = dict(cs.meta)
    meta.update(n_classes=cs.n_classes, ipc=cs.ipc,
                input_shape=",".join(map(str, cs.input_shape)))
    block = _encode_meta(meta)
    return b"".join([
        MAGIC, struct.pack("<HI", VERSION, len(block)), block,
        cs.inputs.astype("<f4").tobytes(), cs.labels.astype(np.uint8).tobytes(),
    ])


def save_coreset(cs: SyntheticSet, path) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(coreset_bytes(cs))
    os.replace(tmp, path)


def parse_coreset(raw: bytes) -> SyntheticSet:
    if raw[:4] != MAGIC:
        raise FormatError(f"not a coreset file (magic {raw[:4]!r})")
    if len(raw) < 10:
        raise FormatError("truncated coreset header")
    version, mlen = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise FormatError(f"unsupported coreset version {version}")
    if 10 + mlen > len(raw):
        raise FormatError("truncated coreset metadata")
    meta = _decode_meta(raw[10:10 + mlen])
    try:
        c, ipc = int(meta.pop("n_classes")), int(meta.pop("ipc"))
        shape = tuple(int(s) for s in meta.pop("input_shape").split(","))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"coreset metadata incomplete: {exc}") from None
    n = c * ipc
    n_in = n * int(np.prod(shape))
    start = 10 + mlen
    if len(raw) != start + 4 * n_in + n * c:
        raise FormatError(f"coreset payload is {len(raw) - start} bytes, "
                          f"expected {4 * n_in + n * c}")
    inputs = np.frombuffer(raw, dtype="<f4", count=n_in, offset=start)
    labels = np.frombuffer(raw, dtype=np.uint8, offset=start + 4 * n_in).reshape(n, c)
    if not np.isfinite(inputs).all():
        raise FormatError("coreset inputs contain non-finite values")
    cs = SyntheticSet(inputs.astype(np.float64).reshape(n, *shape), ipc, c, meta)
    if not np.array_equal(labels, cs.labels):
        raise FormatError("coreset labels are not the expected class-major one-hot block")
    return cs


def load_coreset(path) -> SyntheticSet:
    with open(path, "rb") as f:
        return parse_coreset(f.read())


def norm_stats(cs: SyntheticSet) -> Optional[tuple]:
    if "norm_mean" not in cs.meta:
        return None
    parse = lambda s: tuple(float(v) for v in s.split(","))  # noqa: E731
    return parse(cs.meta["norm_mean"]), parse(cs.meta["norm_std"])
