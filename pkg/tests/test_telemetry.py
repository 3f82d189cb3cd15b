"""Energy ledger arithmetic and power-source behavior."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from traineff import telemetry
from traineff.telemetry import (
    ConstantSource,
    CounterUnavailableError,
    CpuCounterSource,
    EnergyLedger,
    GpuCounterSource,
    PowerSample,
    TelemetrySourceConfig,
    TraceParseError,
    TraceReplaySource,
    open_source,
)


def test_power_sample_validates_component_and_watts():
    PowerSample(0.0, "GPU", 40.0)
    with pytest.raises(ValueError):
        PowerSample(0.0, "SSD", 40.0)
    with pytest.raises(ValueError):
        PowerSample(0.0, "RAM", -1.0)


class TestLedger:
    def test_append_accumulates(self):
        ledger = EnergyLedger()
        ledger.append(PowerSample(0.0, "GPU", 40.0))
        assert ledger.cumulative == 40.0
        ledger.append(PowerSample(5.0, "CPU", 7.5))
        assert ledger.cumulative == 47.5

    def test_negative_watts_rejected_at_construction(self):
        with pytest.raises(ValueError):
            PowerSample(6.0, "RAM", -1.0)

    def test_mark_epoch_records_sample_counts(self):
        ledger = EnergyLedger()
        for t in range(3):
            ledger.append(PowerSample(float(t), "GPU", 10.0))
        ledger.mark_epoch(0)
        assert ledger.epoch_marks == {0: 3}
        for t in range(3, 5):
            ledger.append(PowerSample(float(t), "GPU", 10.0))
        ledger.mark_epoch(1)
        assert ledger.epoch_marks == {0: 3, 1: 5}

    def test_remarking_an_epoch_is_rejected(self):
        ledger = EnergyLedger()
        ledger.mark_epoch(0)
        with pytest.raises(ValueError):
            ledger.mark_epoch(0)

    def test_energy_up_to_sums_watts(self):
        ledger = EnergyLedger()
        for w in (40.0, 7.5, 3.0):
            ledger.append(PowerSample(0.0, "CPU", w))
        ledger.mark_epoch(0)
        assert ledger.energy_up_to(0) == 50.5

    def test_energy_up_to_unmarked_epoch_raises(self):
        with pytest.raises(KeyError):
            EnergyLedger().energy_up_to(0)

    def test_timestamps_must_not_decrease_within_a_component(self):
        ledger = EnergyLedger()
        ledger.append(PowerSample(10.0, "GPU", 1.0))
        with pytest.raises(ValueError):
            ledger.append(PowerSample(5.0, "GPU", 1.0))
        # other components keep their own clocks
        ledger.append(PowerSample(0.0, "CPU", 1.0))

    def test_joules_is_watt_sum_times_interval(self):
        ledger = EnergyLedger()
        for _ in range(10):
            ledger.append(PowerSample(0.0, "CPU", 10.0))
        assert ledger.joules(sample_interval_ms=10.0) == pytest.approx(1.0)

    def test_cumulative_series_and_marks_use_kernels(self):
        ledger = EnergyLedger()
        watts = [1.0, 2.0, 3.0, 4.0]
        for i, w in enumerate(watts):
            ledger.append(PowerSample(float(i), "RAM", w))
            ledger.mark_epoch(i)
        np.testing.assert_allclose(ledger.cumulative_series(), np.cumsum(watts))
        np.testing.assert_allclose(ledger.energies_at_marks(), np.cumsum(watts))


@given(st.lists(st.floats(min_value=0.0, max_value=1e3, allow_nan=False),
                min_size=1, max_size=100),
       st.data())
def test_additivity_between_marks(watts, data):
    """energy(i) plus the samples strictly between marks i and j equals energy(j)."""
    n = len(watts)
    cut = data.draw(st.integers(min_value=0, max_value=n))
    ledger = EnergyLedger()
    for k, w in enumerate(watts):
        if k == cut:
            ledger.mark_epoch(0)
        ledger.append(PowerSample(float(k), "GPU", w))
    if cut == n:
        ledger.mark_epoch(0)
    ledger.mark_epoch(1)
    between = sum(watts[cut:])
    assert ledger.energy_up_to(0) + between == pytest.approx(
        ledger.energy_up_to(1), rel=1e-9, abs=1e-9
    )


@given(st.lists(st.tuples(st.sampled_from(telemetry.COMPONENTS),
                          st.floats(min_value=0.0, max_value=1e3, allow_nan=False)),
                min_size=1, max_size=60),
       st.randoms())
def test_component_concatenation_total_is_interleaving_invariant(samples, rnd):
    sequential = EnergyLedger()
    clock = {c: 0.0 for c in telemetry.COMPONENTS}
    stamped = []
    for comp, w in samples:
        stamped.append(PowerSample(clock[comp], comp, w))
        clock[comp] += 1.0
    for s in stamped:
        sequential.append(s)

    shuffled = EnergyLedger()
    by_comp = {c: [s for s in stamped if s.component == c] for c in telemetry.COMPONENTS}
    order = [c for c, w in samples]
    rnd.shuffle(order)
    cursors = {c: 0 for c in telemetry.COMPONENTS}
    for comp in order:
        shuffled.append(by_comp[comp][cursors[comp]])
        cursors[comp] += 1
    assert shuffled.cumulative == pytest.approx(sequential.cumulative, rel=1e-12)


class TestConstantSource:
    def test_hundred_ms_window_at_ten_ms_interval(self):
        cfg = TelemetrySourceConfig("constant", sample_interval_ms=10.0, watts=50.0)
        window = ConstantSource(cfg).sample_window(100.0)
        assert len(window) == 10
        assert all(s.watts == 50.0 for s in window)

    def test_requires_watts(self):
        with pytest.raises(ValueError):
            TelemetrySourceConfig("constant")


class TestTraceReplay:
    def _write(self, tmp_path, text):
        p = tmp_path / "trace.csv"
        p.write_text(text, encoding="utf-8")
        return p

    def test_replay_identity(self, tmp_path):
        p = self._write(tmp_path, "timestamp_ms,component,watts\n0,GPU,30\n10,GPU,32\n")
        src = TraceReplaySource(TelemetrySourceConfig("trace_replay", trace_path=str(p)))
        got = list(src.iter_samples())
        assert got == [PowerSample(0.0, "GPU", 30.0), PowerSample(10.0, "GPU", 32.0)]

    def test_replay_determinism_is_bit_identical(self, tmp_path):
        rows = "".join(f"{t},CPU,{t * 0.37}\n" for t in range(500))
        p = self._write(tmp_path, "timestamp_ms,component,watts\n" + rows)
        cfg = TelemetrySourceConfig("trace_replay", trace_path=str(p))

        def run():
            ledger = EnergyLedger()
            for s in TraceReplaySource(cfg).iter_samples():
                ledger.append(s)
            ledger.mark_epoch(0)
            return ledger

        a, b = run(), run()
        assert a.cumulative == b.cumulative
        assert a.energy_up_to(0) == b.energy_up_to(0)
        assert np.array_equal(a.watts_array(), b.watts_array())

    def test_bad_header_reports_line_one(self, tmp_path):
        p = self._write(tmp_path, "time,comp,watts\n")
        with pytest.raises(TraceParseError) as exc:
            TraceReplaySource(TelemetrySourceConfig("trace_replay", trace_path=str(p)))
        assert exc.value.line_no == 1

    def test_bad_row_reports_its_line_number(self, tmp_path):
        p = self._write(tmp_path, "timestamp_ms,component,watts\n0,GPU,30\n10,GPU\n")
        with pytest.raises(TraceParseError) as exc:
            TraceReplaySource(TelemetrySourceConfig("trace_replay", trace_path=str(p)))
        assert exc.value.line_no == 3

    def test_unknown_component_rejected(self, tmp_path):
        p = self._write(tmp_path, "timestamp_ms,component,watts\n0,TPU,30\n")
        with pytest.raises(TraceParseError):
            TraceReplaySource(TelemetrySourceConfig("trace_replay", trace_path=str(p)))

    def test_unsorted_component_stream_rejected(self, tmp_path):
        p = self._write(tmp_path, "timestamp_ms,component,watts\n10,GPU,30\n0,GPU,31\n")
        with pytest.raises(TraceParseError):
            TraceReplaySource(TelemetrySourceConfig("trace_replay", trace_path=str(p)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(telemetry.TelemetryError):
            TraceReplaySource(TelemetrySourceConfig(
                "trace_replay", trace_path=str(tmp_path / "nope.csv")))


def test_cpu_counter_unavailable_raises(monkeypatch, tmp_path):
    monkeypatch.setattr(telemetry, "_RAPL_GLOB", str(tmp_path / "none*/energy_uj"))
    with pytest.raises(CounterUnavailableError, match="counter unavailable"):
        CpuCounterSource(TelemetrySourceConfig("os_cpu_counter"))


def test_gpu_counter_unavailable_raises(monkeypatch):
    monkeypatch.setattr(telemetry.shutil, "which", lambda _: None)
    with pytest.raises(CounterUnavailableError, match="counter unavailable"):
        GpuCounterSource(TelemetrySourceConfig("gpu_counter"))


def test_open_source_dispatches_on_kind(tmp_path):
    cfg = TelemetrySourceConfig("constant", watts=5.0)
    assert isinstance(open_source(cfg), ConstantSource)
