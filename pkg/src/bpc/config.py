"""Run configuration: INI file + command-line overrides, and seed derivation."""

from __future__ import annotations

import configparser
import io
import os
import zlib
from typing import Optional

import numpy as np

from .data import (LabeledDataset, downsample, gen_blobs, load_idx, normalize_dataset,
                   split_dataset)
from .distill import DistillConfig
from .energy import EnergySpec
from .errors import ConfigError, ContractError
from .langevin import LangevinConfig
from .models import ModelSpec
from .trajectory import TrainConfig

DEFAULTS = {
    "run": {"seed": "0", "out": ""},
    "data": {
        "dataset": "blobs", "images": "", "labels": "", "test_images": "", "test_labels": "",
        "downsample": "1", "test_fraction": "0.2", "limit": "0",
        "n_per_class": "200", "n_classes": "3", "dim": "2", "spread": "0.5", "shape": "",
    },
    "model": {"kind": "mlp", "widths": ""},
    "buffer": {
        "dir": "", "trajectories": "20", "epochs": "20", "lr": "0.01", "momentum": "0.9",
        "batch_size": "64", "loss": "ce", "jobs": "1",
    },
    "distill": {
        "iters": "400", "horizon": "1", "k_max": "2", "alpha": "0.2", "langevin_steps": "20",
        "noise_temp": "0.01", "lr": "3.0", "momentum": "0.5", "energy": "ce", "ipc": "1",
        "init": "real", "anchors_per_step": "4", "log_every": "10", "focal_gamma": "2.0",
        "margin": "1.0",
    },
    "eval": {
        "seeds": "5", "epochs": "300", "lr": "0.01", "momentum": "0.9", "batch_size": "256",
        "coreset": "", "models": "mlp,mlp-deep,convnet-small,convnet-wide",
        "losses": "ce,margin",
    },
}


def derive_seed(global_seed: int, name: str, *counter: int) -> int:
    """Named, counter-indexed child seed of the global seed."""
    ss = np.random.SeedSequence(global_seed, spawn_key=(zlib.crc32(name.encode()), *counter))
    return int(ss.generate_state(1)[0])


class RunConfig:
    """Typed view over a :class:`configparser.ConfigParser` with defaults filled in."""

    def __init__(self, parser: Optional[configparser.ConfigParser] = None):
        self.parser = configparser.ConfigParser(interpolation=None)
        self.parser.read_dict(DEFAULTS)
        if parser is not None:
            for section in parser.sections():
                if section not in DEFAULTS:
                    raise ConfigError(f"unknown config section [{section}]")
                for key, value in parser.items(section):
                    if key not in DEFAULTS[section]:
                        raise ConfigError(f"unknown config key {section}.{key}")
                    self.parser.set(section, key, value)

    @classmethod
    def from_file(cls, path: Optional[str]) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        if path:
            if not os.path.exists(path):
                raise ConfigError(f"config file {path} does not exist")
            try:
                parser.read(path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls(parser)

    def set(self, section: str, key: str, value) -> None:
        if key not in DEFAULTS.get(section, {}):
            raise ConfigError(f"unknown config key {section}.{key}")
        self.parser.set(section, key, str(value))

    def get(self, section: str, key: str) -> str:
        return self.parser.get(section, key)

    def _typed(self, section, key, conv):
        raw = self.parser.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key} = {raw!r} is not a valid {conv.__name__}") from None

    def int(self, section, key) -> int:
        return self._typed(section, key, int)

    def float(self, section, key) -> float:
        return self._typed(section, key, float)

    def text(self) -> str:
        buf = io.StringIO()
        self.parser.write(buf)
        return buf.getvalue()

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.text())

    # ------------------------------------------------------------ views

    @property
    def seed(self) -> int:
        return self.int("run", "seed")

    @property
    def out_dir(self) -> str:
        return self.get("run", "out") or os.environ.get("BPC_OUT") or "bpc-out"

    @property
    def buffer_dir(self) -> str:
        return self.get("buffer", "dir") or os.path.join(self.out_dir, "buffer")

    def model_spec(self, input_shape, n_classes, kind: Optional[str] = None) -> ModelSpec:
        widths = self.get("model", "widths")
        kind = kind or self.get("model", "kind")
        # custom widths only apply to the configured kind
        use = widths and kind == self.get("model", "kind")
        try:
            w = tuple(int(v) for v in widths.split(",")) if use else ()
        except ValueError:
            raise ConfigError(f"model.widths = {widths!r} is not a list of ints") from None
        try:
            return ModelSpec(kind, tuple(input_shape), n_classes, w)
        except ContractError as exc:
            raise ConfigError(str(exc)) from None

    def energy_spec(self, name: str) -> EnergySpec:
        return EnergySpec(name, gamma=self.float("distill", "focal_gamma"),
                          margin=self.float("distill", "margin"))

    def buffer_train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.float("buffer", "lr"), momentum=self.float("buffer", "momentum"),
                           batch_size=self.int("buffer", "batch_size"),
                           epochs=self.int("buffer", "epochs"))

    def eval_train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.float("eval", "lr"), momentum=self.float("eval", "momentum"),
                           batch_size=self.int("eval", "batch_size"),
                           epochs=self.int("eval", "epochs"))

    def distill_config(self, energy: Optional[str] = None) -> DistillConfig:
        d = "distill"
        return DistillConfig(
            horizon=self.int(d, "horizon"),
            langevin=LangevinConfig(alpha=self.float(d, "alpha"),
                                    steps=self.int(d, "langevin_steps"),
                                    noise_temperature=self.float(d, "noise_temp")),
            k_max=self.int(d, "k_max"),
            iterations=self.int(d, "iters"),
            lr=self.float(d, "lr"),
            momentum=self.float(d, "momentum"),
            energy=self.energy_spec(energy or self.get(d, "energy")),
            ipc=self.int(d, "ipc"),
            init=self.get(d, "init"),
            anchors_per_step=self.int(d, "anchors_per_step"),
            log_every=self.int(d, "log_every"),
            seed=derive_seed(self.seed, "distill"),
        )

    def datasets(self):
        """``(train, test)`` with normalization fitted on ``train`` only."""
        kind = self.get("data", "dataset")
        if kind == "blobs":
            shape = self.get("data", "shape")
            shape = tuple(int(s) for s in shape.split(",")) if shape else None
            args = dict(n_per_class=self.int("data", "n_per_class"),
                        n_classes=self.int("data", "n_classes"), dim=self.int("data", "dim"),
                        spread=self.float("data", "spread"), shape=shape)
            return (gen_blobs(seed=derive_seed(self.seed, "data-train"), **args),
                    gen_blobs(seed=derive_seed(self.seed, "data-test"), **args))
        if kind != "idx":
            raise ConfigError(f"unknown dataset {kind!r}; use 'blobs' or 'idx'")
        images, labels = self.get("data", "images"), self.get("data", "labels")
        if not images or not labels:
            raise ConfigError("idx dataset needs --images and --labels")
        factor = self.int("data", "downsample")
        full = load_idx(images, labels, normalize=False)
        if factor > 1:
            full = downsample(full, factor)
        if self.get("data", "test_images"):
            train = full
            test = load_idx(self.get("data", "test_images"), self.get("data", "test_labels"),
                            normalize=False, n_classes=full.n_classes)
            if factor > 1:
                test = downsample(test, factor)
        else:
            train, test = split_dataset(full, self.float("data", "test_fraction"),
                                        derive_seed(self.seed, "data-split"))
        limit = self.int("data", "limit")
        if limit and limit < len(train):
            train = train.subset(np.arange(limit))
        return normalize_dataset(train, test)


def infer_spec(cfg: RunConfig, data: LabeledDataset, kind: Optional[str] = None) -> ModelSpec:
    return cfg.model_spec(data.input_shape, data.n_classes, kind)
