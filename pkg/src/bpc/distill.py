"""Contrastive-divergence distillation of a synthetic set.

Per outer iteration:

1. draw an anchor from the buffer: ``theta_k`` and ``theta_plus = theta_{k+T}``;
2. run the Langevin chain on the current synthetic set from ``theta_k`` to get
   ``theta_minus``;
3. take ``loss = E(theta_plus, D) - E(theta_minus, D)`` and step the synthetic
   inputs along ``-d loss / d inputs`` (SGD with momentum).

Both parameter samples enter the loss as constants: the gradient is the
difference of the two energy gradients at fixed samples, and nothing is
differentiated through the Langevin chain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .coreset import SyntheticSet, init_coreset
from .data import LabeledDataset
from .energy import EnergySpec, energy
from .errors import ConfigError, ContractError, NumericError, StepError
from .langevin import LangevinConfig, langevin_sample
from .models import ModelSpec, ParamVector
from .trajectory import Buffer, sample_anchor

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("iteration", "loss", "e_plus", "e_minus", "grad_norm")


@dataclass(frozen=True)
class DistillConfig:
    horizon: int = 1
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    k_max: int = 2
    iterations: int = 400
    optimizer: str = "sgd"
    lr: float = 3.0
    momentum: float = 0.5
    energy: EnergySpec = field(default_factory=EnergySpec)
    ipc: int = 1
    init: str = "real"
    anchors_per_step: int = 4
    log_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon T must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.k_max < 0:
            raise ConfigError("k_max must be >= 0")
        if self.optimizer != "sgd":
            raise ConfigError(f"unsupported synthetic-set optimizer {self.optimizer!r}")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("invalid lr / momentum for the synthetic set")
        if self.anchors_per_step < 1 or self.ipc < 1 or self.log_every < 1:
            raise ConfigError("anchors_per_step, ipc and log_every must be >= 1")
        if self.init not in ("real", "noise"):
            raise ConfigError(f"unknown init strategy {self.init!r}")


class StepMetrics(NamedTuple):
    iteration: int
    loss: float
    e_plus: float
    e_minus: float
    grad_norm: float

    def tsv(self) -> str:
        return "\t".join([str(self.iteration)] + [repr(v) for v in self[1:]])


def _constant(theta: ParamVector, mspec: ModelSpec) -> ad.Tensor:
    if theta.spec != mspec:
        raise ContractError("parameter vector does not match the model spec")
    return ad.Tensor(theta.values)


def cd_loss(theta_plus: ParamVector, theta_minus: ParamVector, dset: SyntheticSet,
            espec: EnergySpec, mspec: ModelSpec, inputs: Optional[ad.Tensor] = None):
    """``E(theta_plus, D) - E(theta_minus, D)`` as a scalar Tensor.

    Gradients can only reach ``inputs`` (pass a ``requires_grad`` Tensor of the
    synthetic inputs); the parameter vectors are wrapped as constants.
    """
    plus, minus = _constant(theta_plus, mspec), _constant(theta_minus, mspec)
    x = ad.Tensor(dset.inputs) if inputs is None else inputs
    return ad.sub(energy(espec, mspec, plus, dset, inputs=x),
                  energy(espec, mspec, minus, dset, inputs=x))


def cd_loss_and_grad(theta_plus, theta_minus, dset, espec, mspec):
    """Returns ``(loss, e_plus, e_minus, d loss / d inputs)``."""
    x = ad.Tensor(dset.inputs, requires_grad=True)
    e_plus = energy(espec, mspec, _constant(theta_plus, mspec), dset, inputs=x)
    e_minus = energy(espec, mspec, _constant(theta_minus, mspec), dset, inputs=x)
    loss = ad.sub(e_plus, e_minus)
    ad.backward(loss)
    return loss.item(), e_plus.item(), e_minus.item(), x.grad


class CDDistiller:
    """Holds the synthetic set and its optimizer state across iterations."""

    def __init__(self, buf: Buffer, dset: SyntheticSet, cfg: DistillConfig,
                 mspec: ModelSpec, rng: Optional[np.random.Generator] = None):
        if dset.input_shape != mspec.input_shape or dset.n_classes != mspec.n_classes:
            raise ContractError("synthetic set does not match the model spec")
        self.buf = buf
        self.dset = dset
        self.cfg = cfg
        self.mspec = mspec
        self.rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.velocity = np.zeros_like(dset.inputs)
        self.iteration = 0

    def gradient(self):
        """One Monte-Carlo estimate of the loss and its input gradient."""
        cfg = self.cfg
        totals = np.zeros(3)
        grad = np.zeros_like(self.dset.inputs)
        for _ in range(cfg.anchors_per_step):
            anchor = sample_anchor(self.buf, self.rng, cfg.k_max, cfg.horizon)
            chain = replace(cfg.langevin, seed=int(self.rng.integers(2**63)))
            theta_minus, _ = langevin_sample(anchor.theta_k, cfg.energy, self.mspec,
                                             self.dset, chain)
            loss, e_plus, e_minus, g = cd_loss_and_grad(anchor.theta_plus, theta_minus,
                                                        self.dset, cfg.energy, self.mspec)
            totals += (loss, e_plus, e_minus)
            grad += g
        n = cfg.anchors_per_step
        return totals / n, grad / n

    def step(self) -> StepMetrics:
        self.iteration += 1
        (loss, e_plus, e_minus), grad = self.gradient()
        velocity = self.cfg.momentum * self.velocity + grad
        new_inputs = self.dset.inputs - self.cfg.lr * velocity
        if not np.isfinite(new_inputs).all():
            raise StepError("synthetic inputs became non-finite; set left unchanged",
                            self.iteration)
        self.velocity = velocity
        self.dset.inputs[...] = new_inputs
        return StepMetrics(self.iteration, float(loss), float(e_plus), float(e_minus),
                           float(np.linalg.norm(grad)))


def distill_step(buf: Buffer, dset: SyntheticSet, cfg: DistillConfig, mspec: ModelSpec,
                 rng: np.random.Generator) -> StepMetrics:
    """Single update of ``dset.inputs`` in place (no momentum carried over)."""
    return CDDistiller(buf, dset, cfg, mspec, rng).step()


class DistillResult(NamedTuple):
    coreset: SyntheticSet
    history: List[StepMetrics]


def distill(dataset: LabeledDataset, buf: Buffer, cfg: DistillConfig, mspec: ModelSpec,
            initial: Optional[SyntheticSet] = None, on_step=None) -> DistillResult:
    """Initialize a synthetic set from ``dataset`` and run ``cfg.iterations`` steps.

    A failing step re-raises with the history collected so far attached as
    ``exc.history``.
    """
    if initial is None:
        initial = init_coreset(dataset, cfg.ipc, cfg.init, seed=cfg.seed)
    cs = initial.copy()
    cs.meta.update(distill_seed=str(cfg.seed), energy=cfg.energy.short_name,
                   model=mspec.kind, iterations=str(cfg.iterations))
    runner = CDDistiller(buf, cs, cfg, mspec, np.random.default_rng([cfg.seed, 2]))
    history = []
    for _ in range(cfg.iterations):
        try:
            m = runner.step()
        except NumericError as exc:
            exc.history = history
            raise
        history.append(m)
        if on_step is not None:
            on_step(m)
        if m.iteration % cfg.log_every == 0:
            logger.info("iter %d loss %.5f E+ %.4f E- %.4f |g| %.3e", *m)
    return DistillResult(cs, history)
