"""Built-in trainers speaking the harness wire protocol.

Two real trainers make the whole pipeline runnable with no external ML stack:

* ``surrogate`` — closed-form saturating accuracy curves, so every stopping
  criterion and metric has an analytic oracle,
* ``tinynet`` — a small numpy feedforward classifier trained by mini-batch
  gradient descent on a bundled synthetic dataset.

A third, ``fault``, deliberately violates the protocol (crash, malformed
line, skipped epoch) for robustness tests.

Run as a child process: ``python -m traineff.trainers --size N --task LABEL
--seed S``.  Events are newline-delimited JSON on stdout; a single
``{"cmd": "stop"}`` line on stdin requests termination at the next epoch
boundary.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import threading
from dataclasses import dataclass
from importlib import resources
from typing import Iterator, Optional

import numpy as np

MAX_EPOCHS_HARD = 100_000


@dataclass(frozen=True)
class SurrogateSpec:
    a_max: float = 0.95
    tau: float = 5.0
    noise_sigma: float = 0.0
    overfit_onset: Optional[int] = None
    overfit_rate: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.a_max <= 1.0):
            raise ValueError("a_max must be in (0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.noise_sigma < 0 or self.overfit_rate < 0:
            raise ValueError("noise_sigma and overfit rate must be non-negative")


@dataclass(frozen=True)
class TinyNetSpec:
    base_width: int = 8
    multiplier: int = 1
    learning_rate: float = 0.1
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.multiplier < 1 or self.base_width < 1:
            raise ValueError("multiplier and base_width must be >= 1")


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def surrogate_events(spec: SurrogateSpec, seed: int, size: int = 1) -> Iterator[dict]:
    """Deterministic epoch_end event stream for a surrogate training curve.

    The saturation constant is stretched with the size multiplier so larger
    "models" converge more slowly; with zero noise and no overfit onset the
    train accuracy is strictly increasing and bounded by a_max.
    """
    rng = np.random.default_rng(seed)
    tau = spec.tau * (1.0 + (size - 1) / 4.0)
    eval_frozen: Optional[float] = None
    for epoch in range(MAX_EPOCHS_HARD):
        base = spec.a_max * (1.0 - math.exp(-(epoch + 1) / tau))
        t_noise = rng.normal(0.0, spec.noise_sigma) if spec.noise_sigma else 0.0
        e_noise = rng.normal(0.0, spec.noise_sigma) if spec.noise_sigma else 0.0
        train_acc = _clamp(base + t_noise)
        if spec.overfit_onset is not None and epoch >= spec.overfit_onset:
            if eval_frozen is None:
                eval_frozen = base
            eval_base = eval_frozen - spec.overfit_rate * (epoch - spec.overfit_onset)
        else:
            eval_base = base
        eval_acc = _clamp(eval_base + e_noise)
        yield {"event": "epoch_end", "epoch": epoch,
               "train_acc": train_acc, "eval_acc": eval_acc}


def load_dataset() -> tuple[np.ndarray, np.ndarray]:
    """Bundled synthetic classification set (balanced two-class clusters)."""
    ref = resources.files("traineff").joinpath("data/tinyset.npz")
    with resources.as_file(ref) as path:
        with np.load(path) as z:
            return z["X"].astype(np.float64), z["y"].astype(np.int64)


class TinyNet:
    """One-hidden-layer softmax classifier; the multiplier scales the width."""

    def __init__(self, spec: TinyNetSpec, n_features: int, n_classes: int):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        hidden = spec.base_width * spec.multiplier
        self.w1 = rng.normal(0.0, 0.5, size=(n_features, hidden))
        self.b1 = np.zeros(hidden)
        self.w2 = rng.normal(0.0, 0.5, size=(hidden, n_classes))
        self.b2 = np.zeros(n_classes)

    @property
    def param_count(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def _forward(self, x):
        h = np.tanh(x @ self.w1 + self.b1)
        logits = h @ self.w2 + self.b2
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return h, p

    def accuracy(self, x, y) -> float:
        _, p = self._forward(x)
        return float(np.mean(p.argmax(axis=1) == y))

    def train_epoch(self, x, y, rng: np.random.Generator) -> None:
        n = x.shape[0]
        order = rng.permutation(n)
        lr = self.spec.learning_rate
        for start in range(0, n, self.spec.batch_size):
            idx = order[start:start + self.spec.batch_size]
            xb, yb = x[idx], y[idx]
            h, p = self._forward(xb)
            grad_logits = p
            grad_logits[np.arange(len(idx)), yb] -= 1.0
            grad_logits /= len(idx)
            gw2 = h.T @ grad_logits
            gb2 = grad_logits.sum(axis=0)
            gh = grad_logits @ self.w2.T
            gz = gh * (1.0 - h * h)
            gw1 = xb.T @ gz
            gb1 = gz.sum(axis=0)
            self.w2 -= lr * gw2
            self.b2 -= lr * gb2
            self.w1 -= lr * gw1
            self.b1 -= lr * gb1


def tinynet_events(spec: TinyNetSpec) -> Iterator[dict]:
    """Epoch_end events from actually training the tiny classifier.

    Fixed 70/30 train/eval split; deterministic for a given spec (the epoch
    shuffles come from a dedicated seeded generator).
    """
    x, y = load_dataset()
    n_train = int(0.7 * len(x))
    x_tr, y_tr = x[:n_train], y[:n_train]
    x_ev, y_ev = x[n_train:], y[n_train:]
    net = TinyNet(spec, x.shape[1], int(y.max()) + 1)
    shuffle_rng = np.random.default_rng(spec.seed + 1)
    for epoch in range(MAX_EPOCHS_HARD):
        net.train_epoch(x_tr, y_tr, shuffle_rng)
        yield {"event": "epoch_end", "epoch": epoch,
               "train_acc": net.accuracy(x_tr, y_tr),
               "eval_acc": net.accuracy(x_ev, y_ev)}


def parse_surrogate_label(label: str) -> SurrogateSpec:
    """Parse ``surrogate:<a_max>,<tau>,<noise>,<onset>,<rate>`` (fields optional)."""
    if label == "surrogate":
        return SurrogateSpec()
    body = label.split(":", 1)[1]
    parts = body.split(",")
    if len(parts) != 5:
        raise ValueError(
            "surrogate label needs 5 comma-separated fields: a_max,tau,noise,onset,rate"
        )
    onset = None if parts[3] in ("", "none", "-1") else int(parts[3])
    return SurrogateSpec(
        a_max=float(parts[0]), tau=float(parts[1]), noise_sigma=float(parts[2]),
        overfit_onset=onset, overfit_rate=float(parts[4]) if parts[4] else 0.0,
    )


class _StopWatcher:
    """Background stdin reader; sets the flag on a {"cmd": "stop"} line."""

    def __init__(self, stream=None):
        self._stream = stream if stream is not None else sys.stdin
        self._event = threading.Event()
        t = threading.Thread(target=self._watch, daemon=True)
        t.start()

    def _watch(self):
        for line in self._stream:
            try:
                if json.loads(line).get("cmd") == "stop":
                    self._event.set()
                    return
            except (json.JSONDecodeError, AttributeError):
                continue
        self._event.set()  # stdin closed: parent is gone, wind down

    @property
    def stopped(self) -> bool:
        return self._event.is_set()


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def _run_fault(label: str, size: int, seed: int) -> int:
    """Protocol-violating trainer: fault:crash:<epoch> | fault:badjson:<epoch> | fault:skip:<epoch>."""
    _, mode, at = label.split(":")
    at = int(at)
    watcher = _StopWatcher()
    events = surrogate_events(SurrogateSpec(), seed, size)
    last = None
    for ev in events:
        epoch = ev["epoch"]
        if epoch == at:
            if mode == "crash":
                os._exit(1)
            if mode == "badjson":
                sys.stdout.write("this is not json\n")
                sys.stdout.flush()
            if mode == "skip":
                continue  # epoch index gap: next emit violates contiguity
        _emit(ev)
        last = ev
        if watcher.stopped:
            break
    if last is not None:
        _emit({"event": "final", "train_acc": last["train_acc"], "eval_acc": last["eval_acc"]})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="traineff-trainer")
    parser.add_argument("--size", type=int, required=True)
    parser.add_argument("--task", required=True)
    parser.add_argument("--seed", type=int, required=True)
    args = parser.parse_args(argv)

    if args.task.startswith("fault:"):
        return _run_fault(args.task, args.size, args.seed)

    if args.task.startswith("surrogate"):
        spec = parse_surrogate_label(args.task)
        events = surrogate_events(spec, args.seed, args.size)
    elif args.task.startswith("tinynet"):
        spec = TinyNetSpec(multiplier=args.size, seed=args.seed)
        events = tinynet_events(spec)
    else:
        print(f"unknown task {args.task!r}", file=sys.stderr)
        return 1

    watcher = _StopWatcher()
    last = None
    for ev in events:
        _emit(ev)
        last = ev
        if watcher.stopped:
            break
    if last is not None:
        _emit({"event": "final", "train_acc": last["train_acc"], "eval_acc": last["eval_acc"]})
    return 0


if __name__ == "__main__":
    sys.exit(main())
