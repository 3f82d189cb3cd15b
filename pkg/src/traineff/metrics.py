"""Efficiency metrics: per-epoch, per-architecture, and overall scores.

Three levels of aggregation:

1. per-epoch efficiency of one run: accuracy at an epoch divided by the
   watt-sum of all power samples recorded up to that epoch,
2. architecture efficiency under one stopping criterion: the unweighted mean
   of the final-epoch efficiencies across the model-size grid,
3. overall architecture efficiency: the unweighted mean of level 2 across
   the stopping criteria.

Also here: cross-architecture / cross-task efficiency ratios and the
overtraining A/B verdict comparing a short and an extended training horizon.
All functions are pure; values are kept at full precision (rounding is a
serialization concern).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .criteria import StopReason, StoppingCriterion


class MetricError(Exception):
    pass


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_acc: float
    eval_acc: float
    energy_up_to: float

    def __post_init__(self):
        for name, acc in (("train_acc", self.train_acc), ("eval_acc", self.eval_acc)):
            if not (0.0 <= acc <= 1.0):
                raise ValueError(f"{name} out of [0, 1]: {acc}")
        if self.energy_up_to < 0:
            raise ValueError("energy_up_to must be non-negative")


@dataclass(frozen=True)
class RunRecord:
    architecture: str
    size_multiplier: int
    criterion: StoppingCriterion
    task: str
    epochs: tuple[EpochRecord, ...]
    stop: StopReason
    component_set: frozenset[str] = frozenset({"CPU"})

    def __post_init__(self):
        if not self.epochs:
            raise ValueError("a run must contain at least one epoch")
        for i, rec in enumerate(self.epochs):
            if rec.epoch != i:
                raise ValueError("epoch indices must be contiguous from 0")
        if self.stop.at_epoch != self.epochs[-1].epoch:
            raise ValueError("final epoch inconsistent with stop.at_epoch")
        energies = [r.energy_up_to for r in self.epochs]
        if any(b < a for a, b in zip(energies, energies[1:])):
            raise ValueError("energy_up_to must be non-decreasing across epochs")

    @property
    def final_epoch(self) -> EpochRecord:
        return self.epochs[-1]


@dataclass(frozen=True)
class EfficiencyValue:
    value: float
    level: str  # per_epoch | per_size_mean | per_criterion_mean

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError(f"efficiency must be finite and non-negative, got {self.value}")


@dataclass(frozen=True)
class RatioEntry:
    kind: str  # cross_architecture | cross_task
    fixed: str  # the task (cross_architecture) or architecture (cross_task) held fixed
    numerator: str
    denominator: str
    ratio: float


@dataclass(frozen=True)
class OvertrainingRule:
    """A/B comparison rule between a short and extended training horizon.

    A model is overtrained when the extended horizon brings no rounded test
    gain (A <= 0), or when the growth in train/test divergence is of
    comparable scale to the test gain (B >= comparable_fraction * A).
    """

    round_digits: int = 2
    comparable_fraction: float = 0.5


@dataclass(frozen=True)
class OvertrainingVerdict:
    architecture: str
    size_multiplier: int
    task: str
    A: float  # test-accuracy gain, short -> extended horizon (rounded)
    B: float  # train/test divergence delta, short -> extended horizon (rounded)
    verdict: str  # overtrained | not_overtrained


def efficiency_at_epoch(run: RunRecord, epoch: int) -> EfficiencyValue:
    """Eval accuracy at an epoch divided by the watt-sum recorded up to it."""
    try:
        rec = run.epochs[epoch]
    except IndexError:
        raise MetricError(f"epoch {epoch} not in run ({len(run.epochs)} epochs)") from None
    if rec.energy_up_to <= 0:
        raise MetricError("efficiency undefined: no energy recorded up to this epoch")
    return EfficiencyValue(rec.eval_acc / rec.energy_up_to, "per_epoch")


def efficiency_curve(run: RunRecord) -> np.ndarray:
    """Per-epoch efficiency series for one run (kernel-backed)."""
    accs = np.asarray([r.eval_acc for r in run.epochs])
    energy = np.asarray([r.energy_up_to for r in run.epochs])
    return kernels.efficiency_series(accs, energy)


def efficiency_per_size(runs: Sequence[RunRecord]) -> EfficiencyValue:
    """Mean final-epoch efficiency across the model-size grid.

    All runs must share architecture, criterion, and task, with distinct
    sizes; each contributes its stop-epoch efficiency.
    """
    if not runs:
        raise MetricError("no runs to aggregate")
    arch = {r.architecture for r in runs}
    crit = {r.criterion for r in runs}
    task = {r.task for r in runs}
    if len(arch) > 1 or len(crit) > 1 or len(task) > 1:
        raise MetricError("runs must share architecture, criterion, and task")
    sizes = [r.size_multiplier for r in runs]
    if len(set(sizes)) != len(sizes):
        raise MetricError(f"duplicate size multipliers: {sorted(sizes)}")
    finals = [efficiency_at_epoch(r, r.epochs[-1].epoch).value for r in runs]
    return EfficiencyValue(sum(finals) / len(finals), "per_size_mean")


def efficiency_overall(per_criterion: Mapping[str, EfficiencyValue]) -> EfficiencyValue:
    """Mean across stopping criteria of the per-size means."""
    if not per_criterion:
        raise MetricError("no per-criterion efficiencies to aggregate")
    vals = [v.value for v in per_criterion.values()]
    return EfficiencyValue(sum(vals) / len(vals), "per_criterion_mean")


def mean_efficiency(values: Sequence[float], level: str) -> EfficiencyValue:
    """Unweighted mean of raw efficiency values (fixture-table aggregation)."""
    if not values:
        raise MetricError("no efficiency values to average")
    return EfficiencyValue(sum(values) / len(values), level)


def efficiency_ratios(summary: Mapping[tuple[str, str], EfficiencyValue]) -> list[RatioEntry]:
    """Cross-task ratios per architecture and cross-architecture ratios per task.

    ``summary`` maps (architecture, task) to an overall efficiency.  The
    numerator of each ratio is the larger efficiency, so every ratio is
    >= 1 and reads "<numerator> is R times more efficient".
    """
    if not summary:
        raise MetricError("empty summary")
    archs = sorted({a for a, _ in summary})
    tasks = sorted({t for _, t in summary})
    if len(archs) < 2 and len(tasks) < 2:
        raise MetricError("need at least two architectures or two tasks")
    entries: list[RatioEntry] = []

    def ratio(kind, fixed, label_hi, label_lo, hi, lo):
        if lo.value == 0:
            raise MetricError(f"zero-valued denominator efficiency for {label_lo}")
        entries.append(RatioEntry(kind, fixed, label_hi, label_lo, hi.value / lo.value))

    for task in tasks:
        present = [(a, summary[(a, task)]) for a in archs if (a, task) in summary]
        for i in range(len(present)):
            for j in range(i + 1, len(present)):
                (a1, e1), (a2, e2) = present[i], present[j]
                if e2.value > e1.value:
                    (a1, e1), (a2, e2) = (a2, e2), (a1, e1)
                ratio("cross_architecture", task, a1, a2, e1, e2)
    for arch in archs:
        present = [(t, summary[(arch, t)]) for t in tasks if (arch, t) in summary]
        for i in range(len(present)):
            for j in range(i + 1, len(present)):
                (t1, e1), (t2, e2) = present[i], present[j]
                if e2.value > e1.value:
                    (t1, e1), (t2, e2) = (t2, e2), (t1, e1)
                ratio("cross_task", arch, t1, t2, e1, e2)
    return entries


def _round(x: float, digits: int) -> float:
    # round-half-away-from-zero, so 0.005 -> 0.01 regardless of float banker's rounding
    q = 10 ** digits
    return math.copysign(math.floor(abs(x) * q + 0.5), x) / q


def overtraining_analysis(
    architecture: str,
    size_multiplier: int,
    task: str,
    train_short: float,
    test_short: float,
    train_extended: float,
    test_extended: float,
    rule: OvertrainingRule = OvertrainingRule(),
) -> OvertrainingVerdict:
    """A/B overtraining verdict between two training horizons.

    A is the rounded test-set gain from the short to the extended horizon; B
    is the rounded growth of the train/test divergence over the same span.
    """
    for name, acc in (
        ("train_short", train_short), ("test_short", test_short),
        ("train_extended", train_extended), ("test_extended", test_extended),
    ):
        if not (0.0 <= acc <= 1.0):
            raise MetricError(f"{name} out of [0, 1]: {acc}")
    A = _round(test_extended - test_short, rule.round_digits)
    B = _round(
        (train_extended - test_extended) - (train_short - test_short),
        rule.round_digits,
    )
    if A <= 0.0 or B >= rule.comparable_fraction * A:
        verdict = "overtrained"
    else:
        verdict = "not_overtrained"
    return OvertrainingVerdict(architecture, size_multiplier, task, A, B, verdict)
