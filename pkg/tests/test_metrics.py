"""Efficiency metrics: worked table examples, oracles, and properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from traineff import metrics
from traineff.criteria import StopReason, StoppingCriterion
from traineff.metrics import (
    EpochRecord,
    MetricError,
    OvertrainingRule,
    RunRecord,
    efficiency_at_epoch,
    efficiency_curve,
    efficiency_overall,
    efficiency_per_size,
    efficiency_ratios,
    mean_efficiency,
    overtraining_analysis,
)


def make_run(effs_or_epochs, architecture="LeNet", size=1, task="mnist",
             criterion=None, energies=None):
    """Build a RunRecord whose eval accuracies / energies are given directly."""
    criterion = criterion or StoppingCriterion.fixed_epochs(len(effs_or_epochs))
    records = []
    for i, item in enumerate(effs_or_epochs):
        if isinstance(item, EpochRecord):
            records.append(item)
        else:
            train, ev = item
            records.append(EpochRecord(i, train, ev, energies[i]))
    stop = StopReason(criterion.kind, len(records) - 1, 0.0)
    return RunRecord(architecture, size, criterion, task, tuple(records), stop)


class TestEfficiencyAtEpoch:
    def test_published_single_run_value_within_one_percent(self):
        run = make_run([(0.991, 0.991)], energies=[0.97e5])
        got = efficiency_at_epoch(run, 0).value
        assert got == pytest.approx(10.15e-6, rel=0.01)

    def test_zero_accuracy_gives_zero(self):
        run = make_run([(0.0, 0.0)], energies=[100.0])
        assert efficiency_at_epoch(run, 0).value == 0.0

    def test_zero_energy_is_an_error_not_infinity(self):
        run = make_run([(0.5, 0.5)], energies=[0.0])
        with pytest.raises(MetricError):
            efficiency_at_epoch(run, 0)

    def test_missing_epoch(self):
        run = make_run([(0.5, 0.5)], energies=[1.0])
        with pytest.raises(MetricError):
            efficiency_at_epoch(run, 3)


class TestPerSizeMean:
    def test_published_lenet_mnist_mean(self):
        finals = [10.15e-6, 11.02e-6, 6.83e-6, 6.52e-6, 5.94e-6]
        got = mean_efficiency(finals, "per_size_mean")
        assert got.value == pytest.approx(8.09e-6, abs=0.005e-6)

    def test_published_bcnn_cifar_mean(self):
        finals = [1.51e-6, 1.59e-6, 1.55e-6, 1.54e-6, 1.52e-6]
        got = mean_efficiency(finals, "per_size_mean")
        assert got.value == pytest.approx(1.54e-6, abs=0.005e-6)

    def test_single_run_mean_is_identity(self):
        run = make_run([(0.8, 0.8)], energies=[1000.0])
        assert efficiency_per_size([run]).value == pytest.approx(0.8 / 1000.0)

    def test_mixed_architectures_rejected(self):
        a = make_run([(0.8, 0.8)], energies=[1.0], architecture="LeNet", size=1)
        b = make_run([(0.8, 0.8)], energies=[1.0], architecture="BCNN", size=2)
        with pytest.raises(MetricError):
            efficiency_per_size([a, b])

    def test_duplicate_sizes_rejected(self):
        a = make_run([(0.8, 0.8)], energies=[1.0], size=1)
        b = make_run([(0.8, 0.8)], energies=[1.0], size=1)
        with pytest.raises(MetricError):
            efficiency_per_size([a, b])


class TestOverallMean:
    def test_published_lenet_mnist_overall(self):
        per = {k: metrics.EfficiencyValue(v, "per_size_mean")
               for k, v in [("fe", 8.09e-6), ("es", 8.77e-6), ("eb", 8.48e-6), ("ab", 26.10e-6)]}
        assert efficiency_overall(per).value == pytest.approx(12.86e-6, abs=0.005e-6)

    def test_published_bcnn_mnist_overall(self):
        per = {k: metrics.EfficiencyValue(v, "per_size_mean")
               for k, v in [("fe", 2.59e-6), ("es", 1.00e-6), ("eb", 6.18e-6), ("ab", 1.74e-6)]}
        assert efficiency_overall(per).value == pytest.approx(2.88e-6, abs=0.005e-6)

    def test_identical_inputs_are_a_fixed_point(self):
        per = {k: metrics.EfficiencyValue(3.3e-6, "per_size_mean") for k in "abcd"}
        assert efficiency_overall(per).value == pytest.approx(3.3e-6)

    def test_empty_map_rejected(self):
        with pytest.raises(MetricError):
            efficiency_overall({})


class TestRatios:
    def summary(self):
        vals = {("LeNet", "mnist"): 12.86e-6, ("BCNN", "mnist"): 2.88e-6,
                ("LeNet", "cifar"): 7.06e-6, ("BCNN", "cifar"): 1.36e-6}
        return {k: metrics.EfficiencyValue(v, "per_criterion_mean") for k, v in vals.items()}

    def test_published_cross_architecture_and_cross_task_ratios(self):
        entries = {(e.kind, e.fixed): e for e in efficiency_ratios(self.summary())}
        assert entries[("cross_architecture", "mnist")].ratio == pytest.approx(4.46, abs=0.01)
        assert entries[("cross_architecture", "cifar")].ratio == pytest.approx(5.19, abs=0.01)
        assert entries[("cross_task", "LeNet")].ratio == pytest.approx(1.82, abs=0.01)
        assert entries[("cross_task", "BCNN")].ratio == pytest.approx(2.12, abs=0.01)

    def test_numerator_is_always_the_larger_efficiency(self):
        for e in efficiency_ratios(self.summary()):
            assert e.ratio >= 1.0

    def test_equal_efficiencies_give_ratio_one(self):
        summary = {("A", "t"): metrics.EfficiencyValue(5e-6, "per_criterion_mean"),
                   ("B", "t"): metrics.EfficiencyValue(5e-6, "per_criterion_mean")}
        (entry,) = efficiency_ratios(summary)
        assert entry.ratio == 1.0

    def test_single_cell_rejected(self):
        with pytest.raises(MetricError):
            efficiency_ratios({("A", "t"): metrics.EfficiencyValue(1e-6, "per_criterion_mean")})


class TestOvertraining:
    def test_lenet1_mnist_is_overtrained(self):
        v = overtraining_analysis("LeNet", 1, "mnist",
                                  0.99071102, 0.98506103, 0.99524102, 0.98694648)
        assert (v.A, v.B) == (0.00, 0.00)
        assert v.verdict == "overtrained"

    def test_bcnn1_cifar_is_not_overtrained(self):
        v = overtraining_analysis("BCNN", 1, "cifar",
                                  0.33502488, 0.33920898, 0.43809589, 0.43243262)
        assert (v.A, v.B) == (0.09, 0.01)
        assert v.verdict == "not_overtrained"

    def test_identical_horizons_are_overtrained(self):
        v = overtraining_analysis("A", 1, "t", 0.9, 0.85, 0.9, 0.85)
        assert (v.A, v.B) == (0.00, 0.00)
        assert v.verdict == "overtrained"

    def test_regression_counts_as_overtrained(self):
        v = overtraining_analysis("A", 1, "t", 0.9, 0.85, 0.95, 0.80)
        assert v.A < 0
        assert v.verdict == "overtrained"

    def test_rounding_is_half_away_from_zero(self):
        v = overtraining_analysis("A", 1, "t", 0.5, 0.5, 0.5, 0.505)
        assert v.A == 0.01

    def test_out_of_range_rejected(self):
        with pytest.raises(MetricError):
            overtraining_analysis("A", 1, "t", 1.5, 0.5, 0.5, 0.5)


run_logs = st.lists(
    st.tuples(
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        st.floats(min_value=0.01, max_value=1e4, allow_nan=False),
    ),
    min_size=1,
    max_size=100,
)


def log_to_run(log, **kwargs):
    energies = np.cumsum([w for _, _, w in log]).tolist()
    return make_run([(t, e) for t, e, _ in log], energies=energies, **kwargs)


@given(run_logs)
def test_per_epoch_matches_brute_force(log):
    run = log_to_run(log)
    curve = efficiency_curve(run)
    for i, (_, ev, _) in enumerate(log):
        expected = ev / sum(w for _, _, w in log[: i + 1])
        assert efficiency_at_epoch(run, i).value == pytest.approx(expected, rel=1e-12)
        assert curve[i] == pytest.approx(expected, rel=1e-12)


shared_criterion = StoppingCriterion.accuracy_bound()


@settings(max_examples=50)
@given(st.lists(run_logs, min_size=1, max_size=5))
def test_per_size_and_overall_match_brute_force(logs):
    runs = [log_to_run(log, size=i + 1, criterion=shared_criterion)
            for i, log in enumerate(logs)]
    finals = [log[-1][1] / sum(w for _, _, w in log) for log in logs]
    expected = sum(finals) / len(finals)
    assert efficiency_per_size(runs).value == pytest.approx(expected, rel=1e-12)
    per = {"k": efficiency_per_size(runs)}
    assert efficiency_overall(per).value == pytest.approx(expected, rel=1e-12)


@given(run_logs, st.integers(min_value=0, max_value=98))
def test_plateau_decay(log, i):
    """Non-increasing accuracy plus positive energy strictly lowers efficiency."""
    if i + 1 >= len(log):
        return
    if log[i + 1][1] > log[i][1] or log[i][1] == 0.0:
        return
    run = log_to_run(log)
    assert efficiency_at_epoch(run, i + 1).value < efficiency_at_epoch(run, i).value


@given(run_logs, st.floats(min_value=0.1, max_value=100.0, allow_nan=False))
def test_scale_covariance(log, c):
    base = log_to_run(log)
    scaled = log_to_run([(t, e, w * c) for t, e, w in log])
    for i in range(len(log)):
        assert efficiency_at_epoch(scaled, i).value == pytest.approx(
            efficiency_at_epoch(base, i).value / c, rel=1e-9
        )


@settings(max_examples=50)
@given(st.lists(run_logs, min_size=2, max_size=4))
def test_mean_bounds(logs):
    runs = [log_to_run(log, size=i + 1, criterion=shared_criterion)
            for i, log in enumerate(logs)]
    finals = [efficiency_at_epoch(r, r.epochs[-1].epoch).value for r in runs]
    mean = efficiency_per_size(runs).value
    assert min(finals) - 1e-15 <= mean <= max(finals) + 1e-15


def test_run_record_validation():
    with pytest.raises(ValueError):
        RunRecord("A", 1, StoppingCriterion.fixed_epochs(1), "t", (), StopReason("fixed_epochs", 0, 1.0))
    recs = (EpochRecord(0, 0.5, 0.5, 1.0), EpochRecord(2, 0.5, 0.5, 2.0))
    with pytest.raises(ValueError):
        RunRecord("A", 1, StoppingCriterion.fixed_epochs(2), "t", recs, StopReason("fixed_epochs", 2, 2.0))
    recs = (EpochRecord(0, 0.5, 0.5, 2.0), EpochRecord(1, 0.5, 0.5, 1.0))
    with pytest.raises(ValueError):
        RunRecord("A", 1, StoppingCriterion.fixed_epochs(2), "t", recs, StopReason("fixed_epochs", 1, 2.0))
