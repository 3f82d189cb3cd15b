"""Hot numeric kernels for energy-ledger arithmetic.

The ledger math is trivial (prefix sums over power samples, segment totals
between epoch marks) but traces from live counters run to millions of samples,
so the inner loops are JIT-compiled with numba when available.  Setting the
environment variable ``TRAINEFF_DISABLE_NUMBA=1`` (or not having numba
installed) selects the pure-numpy path; both paths are bit-identical for
float64 inputs because they accumulate in the same order.

``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "USING_NUMBA",
    "running_sum",
    "sums_at_marks",
    "efficiency_series",
]


def _running_sum_py(watts: np.ndarray) -> np.ndarray:
    out = np.empty_like(watts)
    acc = 0.0
    for i in range(watts.shape[0]):
        acc += watts[i]
        out[i] = acc
    return out


def _sums_at_marks_py(watts: np.ndarray, marks: np.ndarray) -> np.ndarray:
    out = np.empty(marks.shape[0], dtype=np.float64)
    acc = 0.0
    pos = 0
    for m in range(marks.shape[0]):
        stop = marks[m]
        while pos < stop:
            acc += watts[pos]
            pos += 1
        out[m] = acc
    return out


def _efficiency_series_py(accs: np.ndarray, energy: np.ndarray) -> np.ndarray:
    out = np.empty_like(accs)
    for i in range(accs.shape[0]):
        out[i] = accs[i] / energy[i]
    return out


_disabled = os.environ.get("TRAINEFF_DISABLE_NUMBA", "").strip() in ("1", "true", "yes")

if not _disabled:
    try:
        from numba import njit

        _running_sum = njit(cache=True)(_running_sum_py)
        _sums_at_marks = njit(cache=True)(_sums_at_marks_py)
        _efficiency_series = njit(cache=True)(_efficiency_series_py)
        USING_NUMBA = True
    except ImportError:
        _disabled = True

if _disabled:
    _running_sum = _running_sum_py
    _sums_at_marks = _sums_at_marks_py
    _efficiency_series = _efficiency_series_py
    USING_NUMBA = False


def running_sum(watts: np.ndarray) -> np.ndarray:
    """Prefix sums of a watt-sample array (the ledger's cumulative column)."""
    return _running_sum(np.ascontiguousarray(watts, dtype=np.float64))


def sums_at_marks(watts: np.ndarray, marks: np.ndarray) -> np.ndarray:
    """Cumulative watt-sum at each epoch mark.

    ``marks[m]`` is the number of samples recorded up to the end of epoch m;
    marks must be non-decreasing and bounded by ``len(watts)``.
    """
    watts = np.ascontiguousarray(watts, dtype=np.float64)
    marks = np.ascontiguousarray(marks, dtype=np.int64)
    if marks.size and (marks[-1] > watts.size or np.any(np.diff(marks) < 0)):
        raise ValueError("epoch marks must be non-decreasing and within the sample count")
    return _sums_at_marks(watts, marks)


def efficiency_series(accs: np.ndarray, energy: np.ndarray) -> np.ndarray:
    """Element-wise accuracy / cumulative-energy, the per-epoch efficiency curve."""
    accs = np.ascontiguousarray(accs, dtype=np.float64)
    energy = np.ascontiguousarray(energy, dtype=np.float64)
    if accs.shape != energy.shape:
        raise ValueError("accuracy and energy series must have equal length")
    if np.any(energy <= 0):
        raise ValueError("cumulative energy must be strictly positive")
    return _efficiency_series(accs, energy)
