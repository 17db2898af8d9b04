"""Retrain-from-scratch evaluation of coresets, plus the comparison grids."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .coreset import SyntheticSet
from .data import LabeledDataset, stratified_indices
from .distill import DistillConfig, distill
from .energy import EnergySpec
from .errors import ContractError
from .models import ModelSpec, accuracy, init_params
from .trajectory import Buffer, TrainConfig, train_params

# Retraining schedule used for every report; independent of how the coreset was made.
EVAL_CONFIG = TrainConfig(lr=0.01, momentum=0.9, batch_size=256, epochs=300)
EVAL_LOSS = EnergySpec("cross_entropy")


@dataclass
class EvalReport:
    accuracies: List[float]
    seeds: List[int]
    spec: ModelSpec
    train_config: TrainConfig
    provenance: Dict[str, str] = field(default_factory=dict)
    name: str = "coreset"

    def __post_init__(self):
        if len(self.accuracies) != len(self.seeds):
            raise ContractError("one accuracy per seed is required")

    @property
    def mean(self) -> float:
        return float(statistics.fmean(self.accuracies))

    @property
    def std(self) -> float:
        """Sample standard deviation (0 for a single seed)."""
        if len(self.accuracies) < 2:
            return 0.0
        return float(statistics.stdev(self.accuracies))

    def summary(self) -> str:
        return f"{self.name}\t{self.spec.kind}\t{100 * self.mean:.2f}\t{100 * self.std:.2f}"

    def to_text(self) -> str:
        lines = [f"[{self.name}]",
                 f"model = {self.spec.kind}",
                 f"widths = {','.join(map(str, self.spec.widths))}",
                 f"seeds = {','.join(map(str, self.seeds))}",
                 f"accuracies = {','.join(repr(a) for a in self.accuracies)}",
                 f"mean = {self.mean!r}",
                 f"std = {self.std!r}"]
        lines += [f"train.{k} = {v}" for k, v in self.train_config.to_dict().items()]
        lines += [f"{k} = {v}" for k, v in sorted(self.provenance.items())]
        return "\n".join(lines) + "\n"


def _arrays(coreset: Union[SyntheticSet, LabeledDataset]):
    if isinstance(coreset, SyntheticSet):
        return coreset.inputs, coreset.class_labels, coreset.n_classes
    return coreset.inputs, coreset.labels, coreset.n_classes


def _check_compatible(coreset, mspec: ModelSpec, test: LabeledDataset) -> None:
    x, _, c = _arrays(coreset)
    if c != mspec.n_classes or test.n_classes != mspec.n_classes:
        raise ContractError(f"class counts differ: coreset {c}, test {test.n_classes}, "
                            f"model {mspec.n_classes}")
    if x.shape[1:] != mspec.input_shape or test.input_shape != mspec.input_shape:
        raise ContractError(f"input shapes differ: coreset {x.shape[1:]}, test "
                            f"{test.input_shape}, model {mspec.input_shape}")


def retrain_accuracy(x, y, mspec: ModelSpec, test: LabeledDataset, cfg: TrainConfig,
                     seed: int) -> float:
    """Train a fresh model from ``init_params(mspec, seed)`` on ``(x, y)`` and score it."""
    theta = train_params(mspec, EVAL_LOSS, cfg, x, y, init_params(mspec, seed),
                         np.random.default_rng([seed, 3]))
    return accuracy(mspec, theta, test.inputs, test.labels)


def evaluate_coreset(coreset, mspec: ModelSpec, test: LabeledDataset, n_seeds: int = 5,
                     cfg: TrainConfig = EVAL_CONFIG, seed: int = 0,
                     name: str = "coreset") -> EvalReport:
    """Mean/std test accuracy of ``n_seeds`` models trained only on ``coreset``.

    ``coreset`` is a :class:`SyntheticSet` or any :class:`LabeledDataset`.
    """
    _check_compatible(coreset, mspec, test)
    if n_seeds < 1:
        raise ContractError("n_seeds must be >= 1")
    x, y, _ = _arrays(coreset)
    seeds = [seed + i for i in range(n_seeds)]
    accs = [retrain_accuracy(x, y, mspec, test, cfg, s) for s in seeds]
    prov = dict(coreset.meta) if isinstance(coreset, SyntheticSet) else {"source": coreset.name}
    return EvalReport(accs, seeds, mspec, cfg, prov, name)


def random_baseline(dset: LabeledDataset, ipc: int, n_seeds: int, mspec: ModelSpec,
                    cfg: TrainConfig, test: LabeledDataset, seed: int = 0) -> EvalReport:
    """Fresh class-stratified real subset per seed, trained like any coreset.

    Subsets keep the dataset's original order, so ``ipc`` equal to the full
    per-class count reproduces full-data training exactly.
    """
    _check_compatible(dset, mspec, test)
    seeds = [seed + i for i in range(n_seeds)]
    accs = []
    for s in seeds:
        idx = stratified_indices(dset.labels, dset.n_classes, ipc,
                                 np.random.default_rng([s, 4]), sort=True)
        accs.append(retrain_accuracy(dset.inputs[idx], dset.labels[idx], mspec, test, cfg, s))
    return EvalReport(accs, seeds, mspec, cfg, {"source": dset.name, "ipc": str(ipc),
                                                "init": "random-real"}, "random")


def cross_architecture_grid(coreset, specs: Sequence[ModelSpec], test: LabeledDataset,
                            n_seeds: int = 5, cfg: TrainConfig = EVAL_CONFIG,
                            distilled_with: Optional[ModelSpec] = None) -> List[EvalReport]:
    """One report per architecture; ``provenance['distilled_with']`` flags the source one."""
    for spec in specs:
        _check_compatible(coreset, spec, test)
    reports = []
    for spec in specs:
        r = evaluate_coreset(coreset, spec, test, n_seeds, cfg, name=spec.kind)
        r.provenance["distilled_with"] = "yes" if spec == distilled_with else "no"
        reports.append(r)
    return reports


def _loss_key(loss) -> str:
    return loss.short_name if isinstance(loss, EnergySpec) else EnergySpec(loss).short_name


def cross_loss_grid(dataset: LabeledDataset, buf_by_loss: Dict[str, Buffer],
                    losses: Sequence, cfg: DistillConfig, mspec: ModelSpec,
                    test: LabeledDataset, n_seeds: int = 5,
                    eval_cfg: TrainConfig = EVAL_CONFIG) -> Dict[tuple, EvalReport]:
    """Distill and evaluate every (real-data loss, synthetic energy) pair.

    ``buf_by_loss`` maps a loss name (``ce``/``focal``/``margin``) to a buffer
    recorded with that loss. The returned dict is keyed by name pairs.
    """
    specs = [l if isinstance(l, EnergySpec) else EnergySpec(l) for l in losses]
    by_name = {_loss_key(k): v for k, v in buf_by_loss.items()}
    for s in specs:
        if s.short_name not in by_name:
            raise ContractError(f"no buffer recorded with loss {s.short_name!r}")
    grid = {}
    for real in specs:
        for synth in specs:
            result = distill(dataset, by_name[real.short_name], replace(cfg, energy=synth), mspec)
            report = evaluate_coreset(result.coreset, mspec, test, n_seeds, eval_cfg,
                                      name=f"{real.short_name}->{synth.short_name}")
            report.provenance.update(loss_real=real.short_name, loss_synthetic=synth.short_name)
            grid[(real.short_name, synth.short_name)] = report
    return grid


def diagonal_dominance(grid: Dict[tuple, EvalReport]) -> dict:
    """Fraction of rows whose diagonal cell is the row maximum, and diagonal vs off-diagonal means."""
    names = sorted({r for r, _ in grid})
    rows_won = 0
    for r in names:
        row = {c: grid[(r, c)].mean for c in names}
        rows_won += row[r] >= max(row.values())
    diag = [grid[(n, n)].mean for n in names]
    off = [grid[(r, c)].mean for r in names for c in names if r != c]
    return {
        "fraction_rows_diagonal_max": rows_won / len(names),
        "diagonal_mean": float(np.mean(diag)),
        "off_diagonal_mean": float(np.mean(off)) if off else float("nan"),
    }


def format_grid(grid: Dict[tuple, EvalReport]) -> str:
    names = sorted({r for r, _ in grid})
    head = "real\\synthetic\t" + "\t".join(names)
    rows = [head]
    for r in names:
        cells = [f"{100 * grid[(r, c)].mean:.2f}+-{100 * grid[(r, c)].std:.2f}" for c in names]
        rows.append(r + "\t" + "\t".join(cells))
    return "\n".join(rows)
