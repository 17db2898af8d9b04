"""Langevin sampling of classifier parameters from exp(-E(theta, D)).

One step is ``theta <- theta - (alpha / 2) * grad E(theta) + beta * sqrt(alpha) * eta``
with ``eta ~ N(0, I)``. ``beta = 1`` is the standard unadjusted Langevin
update; ``beta = 0`` turns the chain into plain gradient descent with rate
``alpha / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .energy import EnergySpec, energy_and_grad_params
from .errors import ConfigError, ContractError, NumericError, SamplerError
from .models import ModelSpec, ParamVector

GradFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LangevinConfig:
    alpha: float = 0.2
    steps: int = 20
    noise_temperature: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if self.steps < 1:
            raise ConfigError("langevin steps must be >= 1")
        if self.noise_temperature < 0:
            raise ConfigError("noise temperature must be >= 0")


def langevin_chain(theta0: np.ndarray, energy_grad: GradFn, cfg: LangevinConfig,
                   rng: np.random.Generator = None):
    """Run ``cfg.steps`` updates of a generic energy.

    ``energy_grad(theta)`` returns ``(E, dE/dtheta)``. Returns the final
    parameters and the energy trace (``steps + 1`` values: before the first
    step and after each step).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    theta = np.array(theta0, dtype=np.float64)
    half_step = cfg.alpha / 2
    noise_scale = cfg.noise_temperature * np.sqrt(cfg.alpha)
    trace = []
    for step in range(cfg.steps + 1):
        try:
            e, g = energy_grad(theta)
        except NumericError as exc:
            raise SamplerError(f"energy evaluation failed: {exc}", step, theta) from exc
        if not np.isfinite(e):
            raise SamplerError("non-finite energy", step, theta)
        trace.append(float(e))
        if step == cfg.steps:
            break
        new = theta - half_step * g
        if noise_scale > 0:
            new = new + noise_scale * rng.standard_normal(theta.shape)
        if not np.isfinite(new).all():
            raise SamplerError("non-finite parameters", step + 1, theta)
        theta = new
    return theta, trace


def langevin_sample(theta0: ParamVector, espec: EnergySpec, mspec: ModelSpec, dset,
                    cfg: LangevinConfig, rng: np.random.Generator = None):
    """Draw ``theta_minus`` by running the chain on ``E(., dset)`` from ``theta0``.

    Returns ``(theta_minus, energy_trace)``. The chain is deterministic in
    ``cfg.seed`` unless an explicit generator is passed.
    """
    if theta0.spec != mspec:
        raise ContractError("theta0 was built for a different ModelSpec")
    theta, trace = langevin_chain(
        theta0.values, lambda th: energy_and_grad_params(espec, mspec, th, dset), cfg, rng)
    return ParamVector(theta, mspec), trace
