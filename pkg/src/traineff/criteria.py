"""Training stopping criteria as pure, replayable state machines.

Four criterion kinds drive every run: a fixed epoch count, an accuracy
threshold, early stopping with patience, and a cumulative energy budget
checked only at epoch boundaries (so the recorded total may legally exceed
the budget).  Each criterion is driven by one ``observe_epoch`` call per
epoch and is deterministic: the same event sequence always yields the same
decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

KINDS = ("fixed_epochs", "accuracy_bound", "early_stopping", "energy_budget")

# Unbounded criteria (everything except fixed_epochs) get a hard safety cap
# so a run that never meets its condition still terminates; a cap stop is
# recorded distinctly from a regular stop.
DEFAULT_SAFETY_CAP = 1000


class CriterionError(Exception):
    pass


@dataclass(frozen=True)
class StoppingCriterion:
    kind: str
    max_epochs: int = 50                 # fixed_epochs
    target_accuracy: float = 0.99        # accuracy_bound
    watch: str = "train"                 # accuracy_bound: which stream it watches
    patience: int = 3                    # early_stopping
    budget_watt_sum: float = 100_000.0   # energy_budget
    safety_cap: int = DEFAULT_SAFETY_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "fixed_epochs" and self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.kind == "accuracy_bound":
            if not (0.0 < self.target_accuracy <= 1.0):
                raise ValueError("target_accuracy must be in (0, 1]")
            if self.watch not in ("train", "eval"):
                raise ValueError("watch must be 'train' or 'eval'")
        if self.kind == "early_stopping" and self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.kind == "energy_budget" and not (self.budget_watt_sum > 0):
            raise ValueError("budget_watt_sum must be positive")
        if self.safety_cap < 1:
            raise ValueError("safety_cap must be >= 1")

    @classmethod
    def fixed_epochs(cls, max_epochs: int = 50) -> "StoppingCriterion":
        return cls("fixed_epochs", max_epochs=max_epochs)

    @classmethod
    def accuracy_bound(cls, target: float = 0.99, watch: str = "train") -> "StoppingCriterion":
        return cls("accuracy_bound", target_accuracy=target, watch=watch)

    @classmethod
    def early_stopping(cls, patience: int = 3) -> "StoppingCriterion":
        return cls("early_stopping", patience=patience)

    @classmethod
    def energy_budget(cls, budget: float = 100_000.0) -> "StoppingCriterion":
        return cls("energy_budget", budget_watt_sum=budget)

    @property
    def name(self) -> str:
        return self.kind


@dataclass(frozen=True)
class StopReason:
    kind: str  # criterion kind, or "safety_cap"
    at_epoch: int
    trigger_value: float


@dataclass(frozen=True)
class CriterionState:
    epochs_seen: int = 0
    best_accuracy_so_far: float = float("-inf")
    epochs_since_improvement: int = 0
    last_energy: float = 0.0
    decided: Optional[StopReason] = None


def observe_epoch(
    state: CriterionState,
    criterion: StoppingCriterion,
    epoch: int,
    train_acc: float,
    eval_acc: float,
    energy_so_far: float,
) -> tuple[CriterionState, Optional[StopReason]]:
    """Feed one finished epoch to the criterion.

    Returns the successor state and a StopReason when training must stop,
    else None.  Events must arrive once per epoch, in order; a decided
    criterion rejects further events so a recorded StopReason can never be
    altered.
    """
    if state.decided is not None:
        raise CriterionError("criterion already decided; further events are rejected")
    if epoch != state.epochs_seen:
        raise CriterionError(f"out-of-order epoch: expected {state.epochs_seen}, got {epoch}")
    for name, acc in (("train_acc", train_acc), ("eval_acc", eval_acc)):
        if not (0.0 <= acc <= 1.0):
            raise CriterionError(f"{name} out of [0, 1]: {acc}")
    if energy_so_far < state.last_energy:
        raise CriterionError(
            f"energy_so_far decreased: {energy_so_far} < {state.last_energy}"
        )

    epochs_seen = state.epochs_seen + 1
    best = state.best_accuracy_so_far
    since = state.epochs_since_improvement
    decision: Optional[StopReason] = None

    if criterion.kind == "fixed_epochs":
        if epochs_seen == criterion.max_epochs:
            decision = StopReason("fixed_epochs", epoch, float(epochs_seen))
    elif criterion.kind == "accuracy_bound":
        watched = train_acc if criterion.watch == "train" else eval_acc
        if watched >= criterion.target_accuracy:
            decision = StopReason("accuracy_bound", epoch, watched)
    elif criterion.kind == "early_stopping":
        # Strict improvement only; a tie counts toward patience.
        if eval_acc > best:
            best = eval_acc
            since = 0
        else:
            since += 1
            if since >= criterion.patience:
                decision = StopReason("early_stopping", epoch, best)
    elif criterion.kind == "energy_budget":
        if energy_so_far >= criterion.budget_watt_sum:
            decision = StopReason("energy_budget", epoch, energy_so_far)

    if decision is None and criterion.kind != "fixed_epochs" and epochs_seen >= criterion.safety_cap:
        decision = StopReason("safety_cap", epoch, float(epochs_seen))

    new_state = CriterionState(
        epochs_seen=epochs_seen,
        best_accuracy_so_far=best,
        epochs_since_improvement=since,
        last_energy=energy_so_far,
        decided=decision,
    )
    return new_state, decision
