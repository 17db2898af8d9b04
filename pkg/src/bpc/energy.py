"""Fixed classification-loss energies E(theta, D) and their gradients.

All energies are means over the examples, so their scale does not depend on
how many synthetic examples there are. Gradients are available with respect
to the flat parameter vector and with respect to the example inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError
from .models import ModelSpec, ParamVector, forward

ENERGY_KINDS = ("cross_entropy", "focal", "multi_margin")
CLI_NAMES = {"ce": "cross_entropy", "focal": "focal", "margin": "multi_margin"}


@dataclass(frozen=True)
class EnergySpec:
    """Which loss to use as the energy.

    ``gamma`` is read only by ``focal`` and ``margin`` only by
    ``multi_margin``; for other kinds they are normalized to ``None``.
    """

    kind: str = "cross_entropy"
    gamma: Optional[float] = None
    margin: Optional[float] = None

    def __post_init__(self):
        kind = CLI_NAMES.get(self.kind, self.kind)
        if kind not in ENERGY_KINDS:
            raise ConfigError(f"unknown energy kind {self.kind!r}; use one of {sorted(CLI_NAMES)}")
        object.__setattr__(self, "kind", kind)
        gamma = margin = None
        if kind == "focal":
            gamma = 2.0 if self.gamma is None else float(self.gamma)
            if gamma < 0:
                raise ConfigError("focal gamma must be >= 0")
        if kind == "multi_margin":
            margin = 1.0 if self.margin is None else float(self.margin)
            if margin <= 0:
                raise ConfigError("margin must be > 0")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "margin", margin)

    @property
    def short_name(self) -> str:
        return {v: k for k, v in CLI_NAMES.items()}[self.kind]

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.gamma is not None:
            d["gamma"] = repr(self.gamma)
        if self.margin is not None:
            d["margin"] = repr(self.margin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnergySpec":
        return cls(d["kind"], gamma=float(d["gamma"]) if "gamma" in d else None,
                   margin=float(d["margin"]) if "margin" in d else None)


def labels_from_onehot(onehot, n_classes: int) -> np.ndarray:
    y = np.asarray(onehot)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ContractError(f"labels must be a non-empty one-hot matrix, got shape {y.shape}")
    if y.shape[1] != n_classes:
        raise ContractError(f"labels have {y.shape[1]} columns, model has {n_classes} classes")
    if not (np.isin(y, (0, 1)).all() and (y.sum(axis=1) == 1).all()):
        raise ContractError("labels are not one-hot")
    return y.argmax(axis=1)


def energy_from_logits(espec: EnergySpec, logits: ad.Tensor, labels) -> ad.Tensor:
    """Mean energy for integer class ``labels`` given a ``(N, C)`` logit tensor."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if n == 0:
        raise ContractError("energy of an empty set is undefined")
    if espec.kind == "cross_entropy":
        return ad.scale(ad.tsum(ad.gather(ad.log_softmax(logits), labels)), -1.0 / n)
    if espec.kind == "focal":
        logp = ad.gather(ad.log_softmax(logits), labels)
        weight = ad.power(ad.sub(1.0, ad.exp(logp)), espec.gamma)
        return ad.scale(ad.tsum(ad.mul(weight, logp)), -1.0 / n)
    # multi-margin: sum_{j != y} max(0, margin - (z_y - z_j)) / C, averaged over examples
    z_true = ad.reshape(ad.gather(logits, labels), (n, 1))
    hinge = ad.relu(ad.add(ad.sub(logits, z_true), espec.margin))
    off_target = 1.0 - np.eye(c)[labels]
    return ad.scale(ad.tsum(ad.mul(hinge, off_target)), 1.0 / (n * c))


def energy(espec: EnergySpec, mspec: ModelSpec, params, dset, *, inputs=None) -> ad.Tensor:
    """Scalar energy of a labelled set under parameters ``params``.

    ``dset`` is anything with one-hot ``labels`` and ``inputs`` arrays (a
    :class:`~bpc.coreset.SyntheticSet` in practice). Pass ``inputs`` as a
    ``requires_grad`` Tensor to differentiate w.r.t. the examples, and
    ``params`` as a ``requires_grad`` Tensor to differentiate w.r.t. theta.
    """
    y = labels_from_onehot(dset.labels, mspec.n_classes)
    x = dset.inputs if inputs is None else inputs
    return energy_from_logits(espec, forward(mspec, params, x), y)


def energy_and_grad_params(espec, mspec, params, dset):
    theta = ad.Tensor(params.values if isinstance(params, ParamVector) else params,
                      requires_grad=True)
    e = energy(espec, mspec, theta, dset)
    ad.backward(e)
    g = theta.grad if theta.grad is not None else np.zeros(theta.shape)
    return e.item(), g


def energy_grad_params(espec, mspec, params, dset) -> np.ndarray:
    return energy_and_grad_params(espec, mspec, params, dset)[1]


def energy_grad_inputs(espec, mspec, params, dset) -> np.ndarray:
    """Gradient w.r.t. the example inputs; labels stay fixed."""
    x = ad.Tensor(np.array(dset.inputs, dtype=np.float64), requires_grad=True)
    ad.backward(energy(espec, mspec, params, dset, inputs=x))
    return x.grad if x.grad is not None else np.zeros(x.shape)
