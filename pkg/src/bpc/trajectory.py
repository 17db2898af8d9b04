"""Expert trajectories on real data and the on-disk buffer that holds them.

A trajectory is the list of parameter snapshots taken at initialization and
after every epoch of mini-batch SGD (momentum) on the real training set.

Trajectory file (little-endian)::

    b"BPCT" | version u16 | meta length u32 | meta (UTF-8 "key=value" lines)
    | snapshot count u32 | snapshots f32[count * parameter_count]

The buffer directory holds one such file per trajectory plus ``index.tsv``
with lines ``<id>\\t<filename>\\t<crc32>\\t<epochs>\\t<seed>``.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .coreset import to_file_precision
from .data import LabeledDataset
from .energy import EnergySpec, energy_from_logits
from .errors import ConfigError, ContractError, CorruptionError, NumericError, TrainingError
from .models import ModelSpec, ParamVector, accuracy, forward, init_params

logger = logging.getLogger(__name__)

MAGIC = b"BPCT"
VERSION = 1
INDEX_NAME = "index.tsv"


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 20

    def __post_init__(self):
        if self.optimizer != "sgd":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1 or self.lr < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("invalid batch_size / lr / momentum")

    def to_dict(self) -> dict:
        return {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(optimizer=d["optimizer"], lr=float(d["lr"]), momentum=float(d["momentum"]),
                   batch_size=int(d["batch_size"]), epochs=int(d["epochs"]))


def dataset_loss(spec: ModelSpec, loss: EnergySpec, theta, x, y, chunk: int = 2048) -> float:
    """Mean ``loss`` over a whole labelled array set, evaluated in chunks."""
    total = 0.0
    for i in range(0, len(y), chunk):
        logits = forward(spec, theta, x[i:i + chunk])
        total += energy_from_logits(loss, logits, y[i:i + chunk]).item() * len(y[i:i + chunk])
    return total / len(y)


def train_params(spec: ModelSpec, loss: EnergySpec, cfg: TrainConfig, x, y,
                 theta0: ParamVector, rng: np.random.Generator,
                 on_epoch: Optional[Callable[[int, np.ndarray], None]] = None) -> ParamVector:
    """Mini-batch SGD with heavy-ball momentum (``v = mu*v + g; theta -= lr*v``).

    ``on_epoch(epoch, theta)`` is called after every epoch with the current
    float64 parameters. Non-finite losses or gradients raise
    :class:`TrainingError` carrying the epoch index.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(y) == 0:
        raise ContractError("cannot train on an empty dataset")
    theta = theta0.copy_values()
    velocity = np.zeros_like(theta)
    bs = min(cfg.batch_size, len(y))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(y), bs):
            batch = order[start:start + bs]
            try:
                leaf = ad.Tensor(theta, requires_grad=True)
                value = energy_from_logits(loss, forward(spec, leaf, x[batch]), y[batch])
                ad.backward(value)
            except NumericError as exc:
                raise TrainingError(f"training diverged: {exc}", epoch) from exc
            velocity = cfg.momentum * velocity + leaf.grad
            theta = theta - cfg.lr * velocity
            if not np.isfinite(theta).all():
                raise TrainingError("training diverged: non-finite parameters", epoch)
        if on_epoch is not None:
            on_epoch(epoch, theta)
    return ParamVector(theta, spec)


@dataclass(eq=False)
class Trajectory:
    spec: ModelSpec
    loss: EnergySpec
    snapshots: list
    train_config: TrainConfig
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.snapshots) != self.train_config.epochs + 1:
            raise ContractError(f"{len(self.snapshots)} snapshots for "
                                f"{self.train_config.epochs} epochs")
        if any(s.spec != self.spec for s in self.snapshots):
            raise ContractError("all snapshots must share the trajectory's ModelSpec")

    @property
    def epochs(self) -> int:
        return self.train_config.epochs

    @property
    def train_losses(self) -> list:
        return [float(v) for v in self.meta.get("train_losses", "").split(",") if v]

    def __eq__(self, other):
        return (isinstance(other, Trajectory) and self.spec == other.spec
                and self.loss == other.loss and self.train_config == other.train_config
                and self.seed == other.seed and self.meta == other.meta
                and len(self.snapshots) == len(other.snapshots)
                and all(a == b for a, b in zip(self.snapshots, other.snapshots)))


def record_trajectory(dataset: LabeledDataset, spec: ModelSpec, loss: EnergySpec,
                      cfg: TrainConfig, seed: int,
                      test: Optional[LabeledDataset] = None) -> Trajectory:
    """Train from ``init_params(spec, seed)`` and snapshot after every epoch.

    Snapshots are rounded to float32 (the file precision); training itself
    continues in float64.
    """
    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    if dataset.input_shape != spec.input_shape or dataset.n_classes != spec.n_classes:
        raise ContractError("dataset does not match the model spec")
    theta0 = init_params(spec, seed)
    snapshots = [theta0]
    losses = [dataset_loss(spec, loss, theta0, dataset.inputs, dataset.labels)]

    def snap(epoch, theta):
        values = to_file_precision(theta)
        if not np.isfinite(values).all():
            raise TrainingError("parameters overflow the float32 file precision", epoch)
        snapshots.append(ParamVector(values, spec))
        try:
            losses.append(dataset_loss(spec, loss, snapshots[-1], dataset.inputs, dataset.labels))
        except NumericError as exc:
            raise TrainingError(f"training diverged: {exc}", epoch) from exc
        logger.debug("seed %d epoch %d loss %.4f", seed, epoch, losses[-1])

    rng = np.random.default_rng([seed, 1])
    train_params(spec, loss, cfg, dataset.inputs, dataset.labels, theta0, rng, on_epoch=snap)
    meta = {
        "dataset": dataset.name,
        "train_losses": ",".join(repr(v) for v in losses),
        "train_acc": repr(accuracy(spec, snapshots[-1], dataset.inputs, dataset.labels)),
    }
    if test is not None:
        meta["test_acc"] = repr(accuracy(spec, snapshots[-1], test.inputs, test.labels))
    return Trajectory(spec, loss, snapshots, cfg, seed, meta)


# ------------------------------------------------------------- file format

def trajectory_bytes(t: Trajectory) -> bytes:
    meta = {f"model.{k}": v for k, v in t.spec.to_dict().items()}
    meta.update({f"loss.{k}": v for k, v in t.loss.to_dict().items()})
    meta.update({f"train.{k}": v for k, v in t.train_config.to_dict().items()})
    meta["seed"] = str(t.seed)
    meta.update(t.meta)
    lines = []
    for key in sorted(meta):
        if "\n" in str(meta[key]) or "=" in key:
            raise ContractError(f"metadata entry {key!r} cannot be serialized")
        lines.append(f"{key}={meta[key]}")
    block = "\n".join(lines).encode("utf-8")
    snaps = np.stack([s.values for s in t.snapshots]).astype("<f4")
    return b"".join([MAGIC, struct.pack("<HI", VERSION, len(block)), block,
                     struct.pack("<I", len(t.snapshots)), snaps.tobytes()])


def parse_trajectory(raw: bytes) -> Trajectory:
    if raw[:4] != MAGIC:
        raise CorruptionError(f"not a trajectory file (magic {raw[:4]!r})")
    if len(raw) < 10:
        raise CorruptionError("truncated trajectory header")
    version, mlen = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise CorruptionError(f"unsupported trajectory version {version}")
    if 10 + mlen + 4 > len(raw):
        raise CorruptionError("truncated trajectory metadata")
    try:
        lines = raw[10:10 + mlen].decode("utf-8").split("\n")
        meta = dict(line.split("=", 1) for line in lines if line)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptionError(f"malformed trajectory metadata: {exc}") from None
    sub = lambda prefix: {k[len(prefix):]: meta.pop(k) for k in list(meta)  # noqa: E731
                          if k.startswith(prefix)}
    try:
        spec = ModelSpec.from_dict(sub("model."))
        loss = EnergySpec.from_dict(sub("loss."))
        cfg = TrainConfig.from_dict(sub("train."))
        seed = int(meta.pop("seed"))
    except (KeyError, ValueError) as exc:
        raise CorruptionError(f"trajectory metadata incomplete: {exc}") from None
    (count,) = struct.unpack("<I", raw[10 + mlen:14 + mlen])
    p = spec.parameter_count
    start = 14 + mlen
    if len(raw) != start + 4 * p * count:
        raise CorruptionError(
            f"trajectory payload is {len(raw) - start} bytes, expected {4 * p * count}")
    arr = np.frombuffer(raw, dtype="<f4", offset=start).astype(np.float64).reshape(count, p)
    if not np.isfinite(arr).all():
        raise CorruptionError("trajectory contains non-finite values")
    return Trajectory(spec, loss, [ParamVector(row, spec) for row in arr], cfg, seed, meta)


class IndexEntry(NamedTuple):
    id: str
    filename: str
    crc32: int
    epochs: int
    seed: int


class Buffer:
    """Directory of trajectory files plus a tab-separated index.

    Index writes are serialized with a lock; loaded trajectories are cached.
    """

    def __init__(self, directory, create: bool = True):
        self.directory = os.fspath(directory)
        if create:
            os.makedirs(self.directory, exist_ok=True)
        elif not os.path.isdir(self.directory):
            raise FileNotFoundError(self.directory)
        self._lock = threading.Lock()
        self._cache: dict = {}

    @property
    def index_path(self) -> str:
        return os.path.join(self.directory, INDEX_NAME)

    def entries(self) -> list:
        if not os.path.exists(self.index_path):
            return []
        out = []
        with open(self.index_path, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 5:
                    raise CorruptionError(f"malformed index line {line!r}")
                out.append(IndexEntry(parts[0], parts[1], int(parts[2]), int(parts[3]),
                                      int(parts[4])))
        return out

    def ids(self) -> list:
        return [e.id for e in self.entries()]

    def __len__(self):
        return len(self.entries())

    def _entry(self, traj_id: str) -> IndexEntry:
        for e in self.entries():
            if e.id == traj_id:
                return e
        raise KeyError(f"trajectory {traj_id!r} not in buffer {self.directory}")

    def save(self, t: Trajectory, traj_id: Optional[str] = None) -> str:
        with self._lock:
            entries = {e.id: e for e in self.entries()}
            if traj_id is None:
                traj_id = f"traj{len(entries):04d}"
            raw = trajectory_bytes(t)
            filename = f"{traj_id}.bpct"
            path = os.path.join(self.directory, filename)
            with open(path + ".tmp", "wb") as f:
                f.write(raw)
            os.replace(path + ".tmp", path)
            entries[traj_id] = IndexEntry(traj_id, filename, zlib.crc32(raw), t.epochs, t.seed)
            text = "".join(f"{e.id}\t{e.filename}\t{e.crc32}\t{e.epochs}\t{e.seed}\n"
                           for _, e in sorted(entries.items()))
            with open(self.index_path + ".tmp", "w", encoding="utf-8") as f:
                f.write(text)
            os.replace(self.index_path + ".tmp", self.index_path)
            self._cache.pop(traj_id, None)
        return traj_id

    def load(self, traj_id: str) -> Trajectory:
        if traj_id in self._cache:
            return self._cache[traj_id]
        entry = self._entry(traj_id)
        with open(os.path.join(self.directory, entry.filename), "rb") as f:
            raw = f.read()
        if zlib.crc32(raw) != entry.crc32:
            raise CorruptionError(f"checksum mismatch for trajectory {traj_id!r}")
        t = parse_trajectory(raw)
        self._cache[traj_id] = t
        return t


def save_trajectory(buf: Buffer, t: Trajectory, traj_id: Optional[str] = None) -> str:
    return buf.save(t, traj_id)


def load_trajectory(buf: Buffer, traj_id: str) -> Trajectory:
    return buf.load(traj_id)


class Anchor(NamedTuple):
    theta_k: ParamVector
    theta_plus: ParamVector
    trajectory_id: str
    k: int


def sample_anchor(buf: Buffer, rng: np.random.Generator, k_max: int, horizon: int) -> Anchor:
    """Uniform trajectory, uniform start epoch ``k`` in ``[0, k_max]``, target ``k + horizon``."""
    entries = buf.entries()
    if not entries:
        raise ContractError("buffer is empty")
    if k_max < 0 or horizon < 0:
        raise ContractError("k_max and horizon must be non-negative")
    shortest = min(e.epochs for e in entries)
    if k_max + horizon > shortest:
        raise ContractError(f"k_max + horizon = {k_max + horizon} exceeds the shortest "
                            f"trajectory ({shortest} epochs)")
    entry = entries[int(rng.integers(len(entries)))]
    k = int(rng.integers(k_max + 1))
    t = buf.load(entry.id)
    return Anchor(t.snapshots[k], t.snapshots[k + horizon], entry.id, k)
