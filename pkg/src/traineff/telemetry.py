"""Power sampling sources and the per-run energy ledger.

A run's energy is the running sum of instantaneous power samples taken from
one or more component counters (GPU / CPU / RAM) while training progresses.
Epoch boundaries are marked in the ledger so the watt-sum up to any finished
epoch can be read back immutably.
"""

from __future__ import annotations

import csv
import glob
import shutil
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import kernels

COMPONENTS = ("GPU", "CPU", "RAM")


class TelemetryError(Exception):
    """Base class for telemetry failures."""


class TraceParseError(TelemetryError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class CounterUnavailableError(TelemetryError):
    """The requested hardware counter does not exist on this platform."""


@dataclass(frozen=True)
class PowerSample:
    """One instantaneous power reading from one component.

    timestamp_ms is milliseconds since run start on a per-run monotonic clock.
    """

    timestamp_ms: float
    component: str
    watts: float

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}, expected one of {COMPONENTS}")
        if not (self.watts >= 0.0):
            raise ValueError(f"watts must be non-negative, got {self.watts}")


class EnergyLedger:
    """Ordered concatenation of all power samples for one run.

    Samples from different components are appended in arrival order; the
    canonical quantity is the raw watt-sample sum (not joules), because every
    downstream efficiency value divides accuracy by exactly that sum.  A
    joules conversion is available as a derived output via :meth:`joules`.

    Single-writer: ``append`` and ``mark_epoch`` are serialized by an internal
    lock.  ``energy_up_to`` on a marked epoch is immutable once marked and may
    be read concurrently.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._timestamps: list[float] = []
        self._components: list[str] = []
        self._watts: list[float] = []
        self._cumulative = 0.0
        self._epoch_marks: dict[int, int] = {}
        self._epoch_energy: dict[int, float] = {}
        self._last_ts: dict[str, float] = {}

    def append(self, sample: PowerSample) -> None:
        if not (sample.watts >= 0.0):
            raise ValueError("watts must be non-negative")
        with self._lock:
            prev = self._last_ts.get(sample.component)
            if prev is not None and sample.timestamp_ms < prev:
                raise ValueError(
                    f"timestamps must be non-decreasing within the {sample.component} stream "
                    f"({sample.timestamp_ms} < {prev})"
                )
            self._last_ts[sample.component] = sample.timestamp_ms
            self._timestamps.append(sample.timestamp_ms)
            self._components.append(sample.component)
            self._watts.append(sample.watts)
            self._cumulative += sample.watts

    def mark_epoch(self, epoch: int) -> None:
        with self._lock:
            if self._epoch_marks and epoch <= max(self._epoch_marks):
                raise ValueError(f"epoch {epoch} is not greater than the last marked epoch")
            self._epoch_marks[epoch] = len(self._watts)
            self._epoch_energy[epoch] = self._cumulative

    def energy_up_to(self, epoch: int) -> float:
        """Watt-sum of all samples recorded up to and including epoch's mark."""
        try:
            return self._epoch_energy[epoch]
        except KeyError:
            raise KeyError(f"epoch {epoch} has not been marked") from None

    @property
    def sample_count(self) -> int:
        return len(self._watts)

    @property
    def cumulative(self) -> float:
        return self._cumulative

    @property
    def epoch_marks(self) -> dict[int, int]:
        return dict(self._epoch_marks)

    def samples(self) -> list[PowerSample]:
        with self._lock:
            return [
                PowerSample(t, c, w)
                for t, c, w in zip(self._timestamps, self._components, self._watts)
            ]

    def watts_array(self) -> np.ndarray:
        return np.asarray(self._watts, dtype=np.float64)

    def cumulative_series(self) -> np.ndarray:
        """Running watt-sum after each sample (kernel-backed)."""
        return kernels.running_sum(self.watts_array())

    def energies_at_marks(self) -> np.ndarray:
        """Watt-sum at each marked epoch, in epoch order (kernel-backed)."""
        epochs = sorted(self._epoch_marks)
        marks = np.asarray([self._epoch_marks[e] for e in epochs], dtype=np.int64)
        return kernels.sums_at_marks(self.watts_array(), marks)

    def component_set(self) -> frozenset[str]:
        return frozenset(self._components)

    def joules(self, sample_interval_ms: float) -> float:
        """Derived energy in joules: watt-sum x sample spacing in seconds."""
        return self._cumulative * (sample_interval_ms / 1000.0)


@dataclass(frozen=True)
class TelemetrySourceConfig:
    """Configuration of one power source.

    kind: one of trace_replay, os_cpu_counter, gpu_counter, constant.
    samples_per_epoch is used by deterministic (replayed) runs, where sources
    are advanced by a fixed number of samples at each epoch boundary instead
    of by wall clock.
    """

    kind: str
    sample_interval_ms: float = 1.0
    trace_path: Optional[str] = None
    watts: Optional[float] = None
    component: str = "CPU"
    samples_per_epoch: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("trace_replay", "os_cpu_counter", "gpu_counter", "constant"):
            raise ValueError(f"unknown telemetry source kind {self.kind!r}")
        if not (self.sample_interval_ms > 0):
            raise ValueError("sample_interval must be positive")
        if self.kind == "trace_replay" and not self.trace_path:
            raise ValueError("trace_replay requires a trace file path")
        if self.kind == "constant" and self.watts is None:
            raise ValueError("constant source requires a watts value")


class PowerSource:
    """A stream of PowerSample values.

    ``iter_samples`` yields samples in order; finite for traces, unbounded
    for counters and constant sources.  Deterministic consumers simply take
    the next N samples per epoch; live consumers pace on sample_interval.
    """

    config: TelemetrySourceConfig

    def iter_samples(self) -> Iterator[PowerSample]:
        raise NotImplementedError


class ConstantSource(PowerSource):
    def __init__(self, config: TelemetrySourceConfig):
        self.config = config

    def iter_samples(self) -> Iterator[PowerSample]:
        t = 0.0
        while True:
            yield PowerSample(t, self.config.component, float(self.config.watts))
            t += self.config.sample_interval_ms

    def sample_window(self, duration_ms: float) -> list[PowerSample]:
        """Samples emitted over a window, spaced at sample_interval."""
        n = int(duration_ms / self.config.sample_interval_ms)
        it = self.iter_samples()
        return [next(it) for _ in range(n)]


class TraceReplaySource(PowerSource):
    """Replays a recorded power trace verbatim, in file order.

    Trace format: UTF-8 CSV with header ``timestamp_ms,component,watts``.
    """

    def __init__(self, config: TelemetrySourceConfig):
        self.config = config
        self._samples = self._parse(config.trace_path)

    @staticmethod
    def _parse(path) -> list[PowerSample]:
        p = Path(path)
        if not p.is_file():
            raise TelemetryError(f"trace file not found: {p}")
        samples: list[PowerSample] = []
        last_ts: dict[str, float] = {}
        with p.open(newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["timestamp_ms", "component", "watts"]:
                raise TraceParseError(p, 1, "expected header 'timestamp_ms,component,watts'")
            for line_no, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != 3:
                    raise TraceParseError(p, line_no, f"expected 3 columns, got {len(row)}")
                try:
                    ts = float(row[0])
                    watts = float(row[2])
                except ValueError as exc:
                    raise TraceParseError(p, line_no, str(exc)) from None
                comp = row[1].strip()
                if comp not in COMPONENTS:
                    raise TraceParseError(p, line_no, f"unknown component {comp!r}")
                if comp in last_ts and ts < last_ts[comp]:
                    raise TraceParseError(p, line_no, f"timestamp not sorted within {comp} stream")
                last_ts[comp] = ts
                try:
                    samples.append(PowerSample(ts, comp, watts))
                except ValueError as exc:
                    raise TraceParseError(p, line_no, str(exc)) from None
        return samples

    def iter_samples(self) -> Iterator[PowerSample]:
        return iter(self._samples)

    def __len__(self) -> int:
        return len(self._samples)


_RAPL_GLOB = "/sys/class/powercap/intel-rapl:*/energy_uj"


class CpuCounterSource(PowerSource):
    """CPU package power read from RAPL energy counters.

    Power is derived from consecutive energy readings; availability is probed
    at construction and a missing counter raises, never yields zeros.
    """

    def __init__(self, config: TelemetrySourceConfig):
        self.config = config
        self._paths = sorted(glob.glob(_RAPL_GLOB))
        if not self._paths:
            raise CounterUnavailableError("counter unavailable: no RAPL energy_uj files found")
        try:
            self._read_uj()
        except OSError as exc:
            raise CounterUnavailableError(f"counter unavailable: {exc}") from exc

    def _read_uj(self) -> float:
        return sum(float(Path(p).read_text()) for p in self._paths)

    def iter_samples(self) -> Iterator[PowerSample]:
        interval_s = self.config.sample_interval_ms / 1000.0
        start = time.monotonic()
        prev_e = self._read_uj()
        prev_t = start
        while True:
            time.sleep(interval_s)
            now = time.monotonic()
            energy = self._read_uj()
            delta = energy - prev_e
            if delta < 0:  # counter wrap
                delta = 0.0
            watts = (delta / 1e6) / max(now - prev_t, 1e-9)
            prev_e, prev_t = energy, now
            yield PowerSample((now - start) * 1000.0, "CPU", watts)


class GpuCounterSource(PowerSource):
    """GPU power polled from nvidia-smi; probed at construction."""

    def __init__(self, config: TelemetrySourceConfig):
        self.config = config
        self._smi = shutil.which("nvidia-smi")
        if self._smi is None:
            raise CounterUnavailableError("counter unavailable: nvidia-smi not on PATH")

    def iter_samples(self) -> Iterator[PowerSample]:
        import subprocess

        interval_s = self.config.sample_interval_ms / 1000.0
        start = time.monotonic()
        while True:
            out = subprocess.run(
                [self._smi, "--query-gpu=power.draw", "--format=csv,noheader,nounits"],
                capture_output=True, text=True, timeout=10,
            )
            if out.returncode != 0:
                raise TelemetryError(f"nvidia-smi failed: {out.stderr.strip()}")
            watts = float(out.stdout.strip().splitlines()[0])
            yield PowerSample((time.monotonic() - start) * 1000.0, "GPU", max(watts, 0.0))
            time.sleep(interval_s)


_SOURCE_CLASSES = {
    "constant": ConstantSource,
    "trace_replay": TraceReplaySource,
    "os_cpu_counter": CpuCounterSource,
    "gpu_counter": GpuCounterSource,
}


def open_source(config: TelemetrySourceConfig) -> PowerSource:
    """Open a power source, probing availability. Raises rather than yielding zeros."""
    return _SOURCE_CLASSES[config.kind](config)
