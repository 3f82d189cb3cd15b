"""Experiment grid execution: trainer supervision, telemetry wiring, run ledger.

A grid is the cross product tasks x architectures x criteria x sizes.  Each
cell launches one trainer child process speaking the line-delimited JSON wire
protocol, pumps power samples into an energy ledger, marks the ledger at every
epoch_end event, and feeds the stopping criterion.  Every launched cell yields
exactly one append-only JSONL ledger entry with terminal status complete,
failed, or degraded; a crashing cell never aborts the grid.

In deterministic mode (trace replay) sources are advanced by a fixed number of
samples per epoch boundary instead of by wall clock, so two executions of the
same grid produce identical ledgers apart from wall-clock metadata.
"""

from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import metrics
from .criteria import CriterionState, StoppingCriterion, StopReason, observe_epoch
from .metrics import EpochRecord, RunRecord
from .telemetry import (
    EnergyLedger,
    PowerSample,
    TelemetryError,
    TelemetrySourceConfig,
    open_source,
)

SCHEMA_VERSION = 1
HARNESS_VERSION = "0.1.0"
DEFAULT_SAMPLES_PER_EPOCH = 100
DEFAULT_GRACE_PERIOD_S = 5.0


class ConfigError(Exception):
    def __init__(self, diagnostics):
        super().__init__("; ".join(f"{d.field}: {d.message}" for d in diagnostics))
        self.diagnostics = diagnostics


class ProtocolError(Exception):
    pass


@dataclass(frozen=True)
class Diagnostic:
    level: str  # error | warning
    field: str
    message: str


@dataclass(frozen=True)
class ArchitectureSpec:
    label: str
    command: tuple[str, ...]  # trainer launch prefix, e.g. (python, -m, traineff.trainers)
    task_args: dict = field(default_factory=dict)  # task label -> trainer --task value

    def trainer_task(self, task: str) -> str:
        return self.task_args.get(task, task)


def builtin_trainer_command() -> tuple[str, ...]:
    return (sys.executable, "-m", "traineff.trainers")


@dataclass
class ExperimentConfig:
    architectures: list[ArchitectureSpec]
    sizes: list[int]
    criteria: list[StoppingCriterion]
    tasks: list[str]
    telemetry: list[TelemetrySourceConfig]
    seed: int = 0
    output_dir: Path = Path("traineff-out")
    deterministic: bool = False
    samples_per_epoch: int = DEFAULT_SAMPLES_PER_EPOCH
    grace_period_s: float = DEFAULT_GRACE_PERIOD_S


def criterion_to_dict(c: StoppingCriterion) -> dict:
    d = {"kind": c.kind, "safety_cap": c.safety_cap}
    if c.kind == "fixed_epochs":
        d["max_epochs"] = c.max_epochs
    elif c.kind == "accuracy_bound":
        d["target_accuracy"] = c.target_accuracy
        d["watch"] = c.watch
    elif c.kind == "early_stopping":
        d["patience"] = c.patience
    elif c.kind == "energy_budget":
        d["budget_watt_sum"] = c.budget_watt_sum
    return d


def criterion_from_dict(d: dict) -> StoppingCriterion:
    kw = {k: v for k, v in d.items() if k != "kind"}
    return StoppingCriterion(d["kind"], **kw)


def validate_config(raw: dict, base_dir: Path = Path(".")) -> tuple[Optional[ExperimentConfig], list[Diagnostic]]:
    """Static validation of a raw config mapping; returns (config, diagnostics).

    The config is None when any error-level diagnostic exists.
    """
    diags: list[Diagnostic] = []

    def err(fieldname, msg):
        diags.append(Diagnostic("error", fieldname, msg))

    archs: list[ArchitectureSpec] = []
    for i, a in enumerate(raw.get("architectures") or []):
        label = a.get("label")
        if not label:
            err(f"architectures[{i}].label", "missing label")
            continue
        if a.get("trainer") == "builtin" or "command" not in a:
            command = builtin_trainer_command()
        else:
            command = tuple(a["command"])
        archs.append(ArchitectureSpec(label, command, dict(a.get("task_args") or {})))
    if not archs:
        err("architectures", "at least one architecture is required")
    if len({a.label for a in archs}) != len(archs):
        err("architectures", "architecture labels must be distinct")

    sizes = list(raw.get("sizes") or [])
    if not sizes:
        err("sizes", "at least one size multiplier is required")
    elif len(set(sizes)) != len(sizes):
        err("sizes", f"size multipliers must be distinct, got {sizes}")
    elif any((not isinstance(s, int)) or s < 1 for s in sizes):
        err("sizes", "size multipliers must be positive integers")

    criteria: list[StoppingCriterion] = []
    for i, c in enumerate(raw.get("criteria") or []):
        try:
            criteria.append(criterion_from_dict(c))
        except (KeyError, TypeError, ValueError) as exc:
            err(f"criteria[{i}]", str(exc))
    if not criteria:
        err("criteria", "at least one stopping criterion is required")
    names = [c.name for c in criteria]
    if len(set(names)) != len(names):
        err("criteria", "criterion kinds must be distinct within one grid")

    tasks = list(raw.get("tasks") or [])
    if not tasks:
        err("tasks", "at least one task is required")

    telemetry: list[TelemetrySourceConfig] = []
    for i, t in enumerate(raw.get("telemetry") or []):
        try:
            t = dict(t)
            if t.get("trace_path"):
                p = Path(t["trace_path"])
                if not p.is_absolute():
                    p = base_dir / p
                if not p.is_file():
                    err(f"telemetry[{i}].trace_path", f"trace file not found: {p}")
                t["trace_path"] = str(p)
            telemetry.append(TelemetrySourceConfig(**t))
        except (TypeError, ValueError) as exc:
            err(f"telemetry[{i}]", str(exc))
    if not telemetry:
        err("telemetry", "at least one telemetry source is required")

    if diags:
        return None, diags
    cfg = ExperimentConfig(
        architectures=archs,
        sizes=sizes,
        criteria=criteria,
        tasks=tasks,
        telemetry=telemetry,
        seed=int(raw.get("seed", 0)),
        output_dir=Path(raw.get("output_dir", "traineff-out")),
        deterministic=bool(raw.get("deterministic", False)),
        samples_per_epoch=int(raw.get("samples_per_epoch", DEFAULT_SAMPLES_PER_EPOCH)),
        grace_period_s=float(raw.get("grace_period_s", DEFAULT_GRACE_PERIOD_S)),
    )
    return cfg, diags


def probe_config(config: ExperimentConfig) -> list[Diagnostic]:
    """Side-effect-free runtime probes: telemetry availability, trainer launchability."""
    diags: list[Diagnostic] = []
    for i, t in enumerate(config.telemetry):
        try:
            open_source(t)
        except TelemetryError as exc:
            diags.append(Diagnostic("error", f"telemetry[{i}]", str(exc)))
    import shutil

    for a in config.architectures:
        exe = a.command[0]
        if exe != sys.executable and shutil.which(exe) is None and not Path(exe).is_file():
            diags.append(Diagnostic("error", f"architectures[{a.label}]", f"trainer executable not found: {exe}"))
    return diags


class _LineReader:
    """Reads child stdout on a thread so the supervisor can apply timeouts."""

    _EOF = object()

    def __init__(self, stream):
        self._q: queue.Queue = queue.Queue()
        self._t = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._t.start()

    def _pump(self, stream):
        for line in stream:
            self._q.put(line)
        self._q.put(self._EOF)

    def next_line(self, timeout: float):
        """Returns a line, or None on EOF; raises queue.Empty on timeout."""
        item = self._q.get(timeout=timeout)
        return None if item is self._EOF else item


class _TelemetryPump:
    """Wall-clock sample pump for one source (live, non-deterministic mode)."""

    def __init__(self, source, ledger: EnergyLedger):
        self._source = source
        self._ledger = ledger
        self._stop = threading.Event()
        self.failure: Optional[Exception] = None
        self._t = threading.Thread(target=self._run, daemon=True)
        self._t.start()

    def _run(self):
        interval = self._source.config.sample_interval_ms / 1000.0
        try:
            for sample in self._source.iter_samples():
                if self._stop.is_set():
                    return
                self._ledger.append(sample)
                time.sleep(interval)
        except Exception as exc:  # source failure mid-run degrades the run
            self.failure = exc

    def stop(self):
        self._stop.set()
        self._t.join(timeout=5.0)


@dataclass
class CellResult:
    run_id: str
    status: str  # complete | failed | degraded
    record: Optional[RunRecord]
    error: Optional[str] = None
    epochs: list = field(default_factory=list)  # raw epoch dicts (kept for failed runs)
    sample_count: int = 0
    watt_sum: float = 0.0
    component_set: frozenset = frozenset()


def _parse_event(line: str) -> dict:
    line = line.strip()
    if not line:
        raise ProtocolError("blank line on trainer stdout")
    try:
        ev = json.loads(line)
    except json.JSONDecodeError:
        raise ProtocolError(f"non-JSON trainer output: {line[:120]!r}") from None
    if not isinstance(ev, dict) or "event" not in ev:
        raise ProtocolError(f"malformed event object: {line[:120]!r}")
    return ev


def run_cell(
    config: ExperimentConfig,
    arch: ArchitectureSpec,
    size: int,
    criterion: StoppingCriterion,
    task: str,
) -> CellResult:
    """Execute one grid cell and return its terminal result.

    Telemetry starts before the first epoch and ends after the stop decision.
    Each epoch_end event first marks the ledger, then drives the criterion;
    the energy budget is therefore checked only at epoch boundaries.
    """
    run_id = f"{task}__{arch.label}__{criterion.name}__s{size}"
    try:
        sources = [open_source(t) for t in config.telemetry]
    except TelemetryError as exc:
        return CellResult(run_id, "failed", None, error=f"telemetry open failed: {exc}")

    ledger = EnergyLedger()
    pumps: list[_TelemetryPump] = []
    sample_iters = []
    if config.deterministic:
        sample_iters = [iter(s.iter_samples()) for s in sources]
    else:
        pumps = [_TelemetryPump(s, ledger) for s in sources]

    degraded_reason: Optional[str] = None

    def draw_epoch_samples():
        nonlocal degraded_reason
        for src, it in zip(sources, sample_iters):
            n = src.config.samples_per_epoch or config.samples_per_epoch
            for _ in range(n):
                try:
                    ledger.append(next(it))
                except StopIteration:
                    degraded_reason = f"telemetry source {src.config.kind} exhausted mid-run"
                    return

    cmd = list(arch.command) + [
        "--size", str(size), "--task", arch.trainer_task(task), "--seed", str(config.seed),
    ]
    try:
        proc = subprocess.Popen(
            cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1,
        )
    except OSError as exc:
        for p in pumps:
            p.stop()
        return CellResult(run_id, "failed", None, error=f"trainer launch failed: {exc}")

    reader = _LineReader(proc.stdout)
    state = CriterionState()
    epoch_records: list[EpochRecord] = []
    stop_reason: Optional[StopReason] = None
    error: Optional[str] = None
    # generous ceiling per event; deterministic runs are compute-bound, not paced
    event_timeout = 300.0

    try:
        while stop_reason is None:
            try:
                line = reader.next_line(event_timeout)
            except queue.Empty:
                raise ProtocolError("trainer produced no output within the event timeout")
            if line is None:
                raise ProtocolError("trainer exited before a stop decision")
            ev = _parse_event(line)
            kind = ev["event"]
            if kind == "log":
                continue
            if kind == "final":
                raise ProtocolError("trainer sent final before a stop decision")
            if kind != "epoch_end":
                raise ProtocolError(f"unknown event kind {kind!r}")
            epoch = ev.get("epoch")
            expected = len(epoch_records)
            if epoch != expected:
                raise ProtocolError(f"out-of-order epoch: expected {expected}, got {epoch}")
            if config.deterministic:
                draw_epoch_samples()
            ledger.mark_epoch(epoch)
            energy = ledger.energy_up_to(epoch)
            state, decision = observe_epoch(
                state, criterion, epoch,
                float(ev["train_acc"]), float(ev["eval_acc"]), energy,
            )
            epoch_records.append(
                EpochRecord(epoch, float(ev["train_acc"]), float(ev["eval_acc"]), energy)
            )
            stop_reason = decision

        # stop decision reached: ask the trainer to wind down
        try:
            proc.stdin.write(json.dumps({"cmd": "stop"}) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError):
            pass
        deadline = time.monotonic() + config.grace_period_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                proc.kill()
                break
            try:
                line = reader.next_line(remaining)
            except queue.Empty:
                proc.kill()
                break
            if line is None:
                break
            # epoch_end events racing the stop command are ignored; the
            # recorded StopReason is already sealed
            try:
                ev = _parse_event(line)
            except ProtocolError:
                continue
            if ev["event"] == "final":
                break
    except (ProtocolError, ValueError) as exc:
        error = str(exc)
    finally:
        for p in pumps:
            p.stop()
        if proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=config.grace_period_s)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    for p in pumps:
        if p.failure is not None:
            degraded_reason = f"telemetry pump failed: {p.failure}"

    raw_epochs = [
        {"epoch": r.epoch, "train_acc": r.train_acc, "eval_acc": r.eval_acc,
         "energy_up_to": r.energy_up_to}
        for r in epoch_records
    ]
    common = dict(
        epochs=raw_epochs,
        sample_count=ledger.sample_count,
        watt_sum=ledger.cumulative,
        component_set=ledger.component_set(),
    )
    if error is not None or stop_reason is None:
        return CellResult(run_id, "failed", None, error=error or "no stop decision", **common)

    record = RunRecord(
        architecture=arch.label,
        size_multiplier=size,
        criterion=criterion,
        task=task,
        epochs=tuple(epoch_records),
        stop=stop_reason,
        component_set=ledger.component_set() or frozenset({"CPU"}),
    )
    if degraded_reason is not None:
        return CellResult(run_id, "degraded", record, error=degraded_reason, **common)
    return CellResult(run_id, "complete", record, **common)


def _entry_from_result(result: CellResult, config: ExperimentConfig,
                       arch: ArchitectureSpec, size: int,
                       criterion: StoppingCriterion, task: str) -> dict:
    entry = {
        "schema_version": SCHEMA_VERSION,
        "harness_version": HARNESS_VERSION,
        "run_id": result.run_id,
        "status": result.status,
        "error": result.error,
        "task": task,
        "architecture": arch.label,
        "size_multiplier": size,
        "criterion": criterion_to_dict(criterion),
        "seed": config.seed,
        "deterministic": config.deterministic,
        "component_set": sorted(result.component_set),
        "epochs": result.epochs,
        "sample_count": result.sample_count,
        "watt_sum": result.watt_sum,
        "stop": None,
        "timestamps": {"finished_at": time.time()},
    }
    if result.record is not None:
        entry["stop"] = {
            "kind": result.record.stop.kind,
            "at_epoch": result.record.stop.at_epoch,
            "trigger_value": result.record.stop.trigger_value,
        }
    return entry


def record_from_entry(entry: dict) -> Optional[RunRecord]:
    """Rebuild a RunRecord from a ledger entry; None for runs without one."""
    if entry.get("stop") is None or not entry.get("epochs"):
        return None
    return RunRecord(
        architecture=entry["architecture"],
        size_multiplier=entry["size_multiplier"],
        criterion=criterion_from_dict(entry["criterion"]),
        task=entry["task"],
        epochs=tuple(
            EpochRecord(e["epoch"], e["train_acc"], e["eval_acc"], e["energy_up_to"])
            for e in entry["epochs"]
        ),
        stop=StopReason(entry["stop"]["kind"], entry["stop"]["at_epoch"],
                        entry["stop"]["trigger_value"]),
        component_set=frozenset(entry["component_set"]) or frozenset({"CPU"}),
    )


def grid_cells(config: ExperimentConfig):
    """Deterministic cell order: task, architecture, criterion, size."""
    for task in config.tasks:
        for arch in config.architectures:
            for criterion in config.criteria:
                for size in config.sizes:
                    yield task, arch, criterion, size


def run_grid(config: ExperimentConfig, resume: bool = False) -> list[dict]:
    """Execute every cell, appending one JSONL ledger entry per cell.

    With resume=True, run_ids already present with terminal status complete
    are skipped.  A failing cell records a failed entry and the grid goes on.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledger_path = out / "runs.jsonl"
    done: set[str] = set()
    entries: list[dict] = []
    if resume and ledger_path.is_file():
        with ledger_path.open(encoding="utf-8") as f:
            for line in f:
                entry = json.loads(line)
                entries.append(entry)
                if entry["status"] == "complete":
                    done.add(entry["run_id"])
    elif ledger_path.is_file() and not resume:
        ledger_path.unlink()

    with ledger_path.open("a", encoding="utf-8") as ledger_file:
        for task, arch, criterion, size in grid_cells(config):
            run_id = f"{task}__{arch.label}__{criterion.name}__s{size}"
            if run_id in done:
                continue
            try:
                result = run_cell(config, arch, size, criterion, task)
            except Exception as exc:  # isolation: a crashing cell stays one failed entry
                result = CellResult(run_id, "failed", None, error=f"cell crashed: {exc}")
            entry = _entry_from_result(result, config, arch, size, criterion, task)
            ledger_file.write(json.dumps(entry) + "\n")
            ledger_file.flush()
            entries.append(entry)
    return entries


def load_ledger(path) -> list[dict]:
    entries = []
    with Path(path).open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            entry = json.loads(line)
            if entry.get("schema_version") != SCHEMA_VERSION:
                raise ValueError(
                    f"{path}:{line_no}: schema_version {entry.get('schema_version')} "
                    f"not supported (expected {SCHEMA_VERSION})"
                )
            entries.append(entry)
    return entries


def summarize(entries: list[dict]):
    """Aggregate a run ledger into an EfficiencyReport.

    Groups complete (and degraded) runs by architecture/task/criterion,
    applies the size-mean and criterion-mean aggregations, derives ratios,
    per-epoch curves, and overtraining verdicts when a short and an extended
    fixed-epoch horizon both exist.
    """
    from .report import EfficiencyReport

    runs: list[RunRecord] = []
    warnings: list[str] = []
    for entry in entries:
        if entry["status"] in ("complete", "degraded"):
            rec = record_from_entry(entry)
            if rec is not None:
                runs.append(rec)
        else:
            warnings.append(f"run {entry['run_id']} excluded: status {entry['status']}"
                            + (f" ({entry['error']})" if entry.get("error") else ""))

    by_group: dict[tuple[str, str, str], list[RunRecord]] = {}
    for r in runs:
        by_group.setdefault((r.architecture, r.task, r.criterion.name), []).append(r)

    per_criterion: dict[tuple[str, str, str], metrics.EfficiencyValue] = {}
    for key, group in sorted(by_group.items()):
        try:
            per_criterion[key] = metrics.efficiency_per_size(group)
        except metrics.MetricError as exc:
            warnings.append(f"group {key}: {exc}")

    by_arch_task: dict[tuple[str, str], dict[str, metrics.EfficiencyValue]] = {}
    for (arch, task, crit), val in per_criterion.items():
        by_arch_task.setdefault((arch, task), {})[crit] = val
    overall = {key: metrics.efficiency_overall(vals) for key, vals in sorted(by_arch_task.items())}

    ratios = []
    try:
        ratios = metrics.efficiency_ratios(overall)
    except metrics.MetricError as exc:
        warnings.append(f"ratios unavailable: {exc}")

    curves = {}
    distributions = []
    for r in runs:
        run_id = f"{r.task}__{r.architecture}__{r.criterion.name}__s{r.size_multiplier}"
        curves[run_id] = list(zip((rec.epoch for rec in r.epochs), metrics.efficiency_curve(r)))
        distributions.append({
            "criterion": r.criterion.name, "architecture": r.architecture,
            "size": r.size_multiplier, "task": r.task,
            "efficiency": metrics.efficiency_at_epoch(r, r.epochs[-1].epoch).value,
        })

    verdicts = _overtraining_verdicts(runs, warnings)

    return EfficiencyReport(
        runs=runs,
        per_criterion=per_criterion,
        overall=overall,
        ratios=ratios,
        curves=curves,
        distributions=distributions,
        verdicts=verdicts,
        warnings=warnings,
    )


def _overtraining_verdicts(runs, warnings):
    fixed = [r for r in runs if r.criterion.kind == "fixed_epochs"]
    horizons = sorted({r.criterion.max_epochs for r in fixed})
    if len(horizons) < 2:
        return []
    short_h, ext_h = horizons[0], horizons[-1]
    short = {(r.architecture, r.task, r.size_multiplier): r
             for r in fixed if r.criterion.max_epochs == short_h}
    extended = {(r.architecture, r.task, r.size_multiplier): r
                for r in fixed if r.criterion.max_epochs == ext_h}
    verdicts = []
    for key in sorted(short):
        if key not in extended:
            warnings.append(f"overtraining: no extended-horizon run for {key}")
            continue
        s, e = short[key], extended[key]
        verdicts.append(metrics.overtraining_analysis(
            key[0], key[2], key[1],
            s.final_epoch.train_acc, s.final_epoch.eval_acc,
            e.final_epoch.train_acc, e.final_epoch.eval_acc,
        ))
    return verdicts
