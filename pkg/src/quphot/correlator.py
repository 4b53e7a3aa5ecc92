"""Second-order coincidence histograms from time-tagged streams.

Lags are ``tau = t_B - t_A``. Fine histograms tile ``(-W, W)`` with bins of
equal width; bins at positive lag are closed on the left, bins at negative
lag are closed on the right, which makes autocorrelation histograms exactly
mirror symmetric. Per-period histograms use half-open windows
``[n T - T/2, n T + T/2)`` around each multiple of the repetition period.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from ._validation import check_positive, check_timestamps
from .streams import PhotonStream

ALL_PAIRS = "all_pairs"
START_STOP = "start_stop"
PAIR_MODES = (ALL_PAIRS, START_STOP)

DEFAULT_BIN_WIDTH_PS = 1280
DEFAULT_TAIL_START_PS = 1_300_000
DEFAULT_PERIOD_PS = 25_000
DEFAULT_TAIL_PERIODS = 256
DEFAULT_MEMORY_BUDGET = 2 * 1024**3


def default_window_ps(bin_width_ps=DEFAULT_BIN_WIDTH_PS, period_ps=DEFAULT_PERIOD_PS):
    """Smallest multiple of the bin width covering 1.3 us plus a 256-period tail."""
    span = DEFAULT_TAIL_START_PS + DEFAULT_TAIL_PERIODS * period_ps
    return math.ceil(span / bin_width_ps) * bin_width_ps


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    """Pair counts per lag bin.

    ``counts`` is integral for raw histograms and float after
    :func:`start_stop_correction`. ``source`` records stream channels, event
    counts and durations.
    """

    edges_ps: np.ndarray
    counts: np.ndarray
    pair_mode: str
    binning: str
    source: Mapping[str, float] = field(default_factory=dict)
    corrected: bool = False

    def __post_init__(self):
        edges = np.asarray(self.edges_ps, dtype=np.float64)
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or edges.shape != (counts.size + 1,):
            raise ValueError("histogram needs len(edges) == len(counts) + 1")
        if np.any(counts < 0):
            raise ValueError("histogram counts must be non-negative")
        if self.pair_mode not in PAIR_MODES:
            raise ValueError(f"pair_mode must be one of {PAIR_MODES}")
        edges.flags.writeable = False
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "edges_ps", edges)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "source", MappingProxyType(dict(self.source)))

    @property
    def bin_width_ps(self):
        return float(self.edges_ps[1] - self.edges_ps[0])

    @property
    def window_ps(self):
        return float(self.edges_ps[-1] - self.edges_ps[0]) / 2

    @property
    def centers_ps(self):
        return 0.5 * (self.edges_ps[1:] + self.edges_ps[:-1])

    @property
    def total(self):
        return self.counts.sum()

    def __len__(self):
        return int(self.counts.size)


@dataclass(frozen=True, eq=False)
class CorrelationCurve:
    """Tail-normalized g2(tau) with Poisson uncertainties."""

    lag_ps: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray
    normalization: float
    bin_width_ps: float
    binning: str = "fine"

    def __post_init__(self):
        for name in ("lag_ps", "g2", "sigma"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (self.lag_ps.shape == self.g2.shape == self.sigma.shape):
            raise ValueError("lag_ps, g2 and sigma must have equal length")

    def __len__(self):
        return int(self.g2.size)

    def at(self, lag_ps):
        """Index of the bin whose center is closest to `lag_ps`."""
        return int(np.argmin(np.abs(self.lag_ps - lag_ps)))


def _as_stamps(stream, name):
    if isinstance(stream, PhotonStream):
        return stream.timestamps.astype(np.int64), len(stream), stream.duration_ps, stream.channel
    ts = check_timestamps(stream, name)
    duration = int(ts[-1]) + 1 if ts.size else 1
    return ts.astype(np.int64), int(ts.size), duration, -1


def _count(kernel, stream_a, stream_b, p1, p2, nbins, span_ps, *, n_jobs, chunks,
           memory_budget_bytes):
    auto = stream_b is None or stream_b is stream_a
    a, n_a, dur_a, ch_a = _as_stamps(stream_a, "stream_a")
    if auto:
        b, n_b, dur_b, ch_b = a, n_a, dur_a, ch_a
    else:
        b, n_b, dur_b, ch_b = _as_stamps(stream_b, "stream_b")
    n_chunks = max(1, int(chunks if chunks is not None else n_jobs))
    need = 8 * nbins * n_chunks
    if need > memory_budget_bytes:
        raise MemoryError(
            f"{nbins} bins x {n_chunks} chunks need {need} bytes of accumulators, "
            f"over the {memory_budget_bytes}-byte budget"
        )
    # Chunks partition A-events by time; each chunk owns the pairs its
    # A-events start, so summing chunk histograms reproduces one pass.
    bounds = np.linspace(0, a.size, n_chunks + 1).astype(np.int64)

    def run(k):
        start, stop = bounds[k], bounds[k + 1]
        out = np.zeros(nbins, dtype=np.int64)
        if stop > start:
            lo = int(np.searchsorted(b, a[start] - span_ps, side="left"))
            kernel(a[start:stop], b, p1, p2, auto, start, lo, out)
        return out

    if n_jobs > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=int(n_jobs)) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    else:
        parts = [run(k) for k in range(n_chunks)]
    counts = np.zeros(nbins, dtype=np.int64)
    for part in parts:
        counts += part
    source = {
        "channel_a": ch_a, "channel_b": ch_b, "events_a": n_a, "events_b": n_b,
        "duration_a_ps": dur_a, "duration_b_ps": dur_b, "auto": int(auto),
    }
    return counts, source


def cross_correlate(stream_a, stream_b=None, bin_width_ps=DEFAULT_BIN_WIDTH_PS, window_ps=None,
                    mode=ALL_PAIRS, *, n_jobs=1, chunks=None,
                    memory_budget_bytes=DEFAULT_MEMORY_BUDGET):
    """Coincidence histogram of ``tau = t_B - t_A`` over ``|tau| < window_ps``.

    Parameters
    ----------
    stream_a, stream_b : PhotonStream or array of int picoseconds
        Sorted event times. ``stream_b=None`` (or the same object as
        `stream_a`) autocorrelates `stream_a` with self pairs excluded.
    bin_width_ps, window_ps : int
        `window_ps` must be a multiple of `bin_width_ps`; it defaults to
        :func:`default_window_ps`.
    mode : {"all_pairs", "start_stop"}
        ``all_pairs`` counts every pair in the window. ``start_stop`` counts,
        per A-event, only the first B-event after ``t_A - window_ps``, which
        is a start-stop measurement with the stop channel delayed by the
        window.
    n_jobs, chunks : int
        Worker threads and time chunks; the result does not depend on either.
    """
    check_positive(bin_width_ps, "bin_width_ps", integer=True)
    if window_ps is None:
        window_ps = default_window_ps(bin_width_ps)
    check_positive(window_ps, "window_ps", integer=True)
    if window_ps < bin_width_ps or window_ps % bin_width_ps:
        raise ValueError(
            f"window_ps ({window_ps}) must be a positive multiple of bin_width_ps ({bin_width_ps})"
        )
    if mode not in PAIR_MODES:
        raise ValueError(f"mode must be one of {PAIR_MODES}, got {mode!r}")
    nhalf = window_ps // bin_width_ps
    kernel = _kernels.all_pairs_fine if mode == ALL_PAIRS else _kernels.start_stop_fine
    counts, source = _count(kernel, stream_a, stream_b, int(bin_width_ps), int(nhalf),
                            2 * nhalf, window_ps, n_jobs=n_jobs, chunks=chunks,
                            memory_budget_bytes=memory_budget_bytes)
    edges = np.arange(-nhalf, nhalf + 1, dtype=np.float64) * bin_width_ps
    return CorrelationHistogram(edges, counts, mode, "fine", source)


def rebin_to_periods(stream_a, stream_b=None, period_ps=DEFAULT_PERIOD_PS, period_count=None,
                     mode=ALL_PAIRS, *, n_jobs=1, chunks=None,
                     memory_budget_bytes=DEFAULT_MEMORY_BUDGET):
    """One bin per laser period: lags in ``[n T - T/2, n T + T/2)`` for ``|n| <= period_count``.

    Counted directly from the raw timestamps. `period_count` defaults to the
    number of periods covering 1.3 us plus the 256-period tail.
    """
    check_positive(period_ps, "period_ps", integer=True)
    if period_count is None:
        period_count = math.ceil(DEFAULT_TAIL_START_PS / period_ps) + DEFAULT_TAIL_PERIODS
    check_positive(period_count, "period_count", integer=True, strict=False)
    if mode not in PAIR_MODES:
        raise ValueError(f"mode must be one of {PAIR_MODES}, got {mode!r}")
    kernel = _kernels.all_pairs_period if mode == ALL_PAIRS else _kernels.start_stop_period
    nbins = 2 * period_count + 1
    span = (period_count + 1) * period_ps
    counts, source = _count(kernel, stream_a, stream_b, int(period_ps), int(period_count), nbins,
                            span, n_jobs=n_jobs, chunks=chunks,
                            memory_budget_bytes=memory_budget_bytes)
    edges = (np.arange(-period_count, period_count + 2, dtype=np.float64) - 0.5) * period_ps
    source["period_ps"] = period_ps
    return CorrelationHistogram(edges, counts, mode, "period", source)


def merge_histograms(histograms):
    """Sum histograms built on identical bins (e.g. from disjoint time chunks)."""
    first = histograms[0]
    counts = np.zeros_like(first.counts)
    for hist in histograms:
        if (not np.array_equal(hist.edges_ps, first.edges_ps)
                or hist.pair_mode != first.pair_mode or hist.binning != first.binning):
            raise ValueError("histograms have different binning or pair mode")
        counts = counts + hist.counts
    return replace(first, counts=counts, source={"merged": len(histograms)})


def normalize(hist, tail_start_ps=DEFAULT_TAIL_START_PS,
              tail_span_ps=DEFAULT_TAIL_PERIODS * DEFAULT_PERIOD_PS):
    """Divide by the mean count of bins centered at ``start <= |tau| < start + span``."""
    centers = hist.centers_ps
    tail = (np.abs(centers) >= tail_start_ps) & (np.abs(centers) < tail_start_ps + tail_span_ps)
    if not tail.any():
        raise ValueError(
            f"no bin centers in the tail region [{tail_start_ps}, {tail_start_ps + tail_span_ps}) ps"
        )
    norm = float(np.mean(hist.counts[tail]))
    if norm <= 0:
        raise ValueError("tail region holds no counts; cannot normalize")
    counts = hist.counts.astype(np.float64)
    return CorrelationCurve(centers, counts / norm, np.sqrt(counts) / norm, norm,
                            hist.bin_width_ps, hist.binning)


def start_stop_correction(hist):
    """Undo the exponential start-stop envelope using the measured stop rate.

    A start-stop bin at lag tau only registers a pair if no earlier stop
    arrived since the window opened, which for a stop rate r happens with
    probability ``exp(-r (tau - tau_min))``. Dividing each bin by that
    survival factor averaged over the bin estimates the all-pairs histogram.
    """
    if hist.pair_mode == ALL_PAIRS or hist.corrected:
        return hist
    rate = hist.source["events_b"] / hist.source["duration_b_ps"]
    lo = hist.edges_ps[:-1] - hist.edges_ps[0]
    hi = hist.edges_ps[1:] - hist.edges_ps[0]
    width = hi - lo
    if rate > 0:
        survival = (np.exp(-rate * lo) - np.exp(-rate * hi)) / (rate * width)
    else:
        survival = np.ones_like(width)
    return replace(hist, counts=hist.counts / survival, corrected=True)


class Correlator(BaseEstimator):
    """Estimator wrapper: correlate two streams and tail-normalize the result.

    Set `period_ps` to count per laser period instead of in fine bins.

    Attributes
    ----------
    histogram_ : CorrelationHistogram
    curve_ : CorrelationCurve
    """

    def __init__(self, bin_width_ps=DEFAULT_BIN_WIDTH_PS, window_ps=None, mode=ALL_PAIRS,
                 period_ps=None, period_count=None, tail_start_ps=DEFAULT_TAIL_START_PS,
                 tail_span_ps=DEFAULT_TAIL_PERIODS * DEFAULT_PERIOD_PS, correct_start_stop=True,
                 n_jobs=1):
        self.bin_width_ps = bin_width_ps
        self.window_ps = window_ps
        self.mode = mode
        self.period_ps = period_ps
        self.period_count = period_count
        self.tail_start_ps = tail_start_ps
        self.tail_span_ps = tail_span_ps
        self.correct_start_stop = correct_start_stop
        self.n_jobs = n_jobs

    def fit(self, stream_a, stream_b=None):
        if self.period_ps is None:
            hist = cross_correlate(stream_a, stream_b, self.bin_width_ps, self.window_ps,
                                   self.mode, n_jobs=self.n_jobs)
        else:
            hist = rebin_to_periods(stream_a, stream_b, self.period_ps, self.period_count,
                                    self.mode, n_jobs=self.n_jobs)
        self.histogram_ = hist
        if self.correct_start_stop:
            hist = start_stop_correction(hist)
        self.curve_ = normalize(hist, self.tail_start_ps, self.tail_span_ps)
        return self

    def transform(self, stream_a, stream_b=None):
        """Return the normalized g2 values for a new pair of streams."""
        return self.fit(stream_a, stream_b).curve_.g2

    def fit_transform(self, stream_a, stream_b=None):
        return self.transform(stream_a, stream_b)

    @property
    def g2_(self):
        check_is_fitted(self, "curve_")
        return self.curve_.g2
