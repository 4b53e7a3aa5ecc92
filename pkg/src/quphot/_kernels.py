"""Compiled coincidence-counting kernels.

All kernels take int64 picosecond timestamps (sorted ascending) and add
pair counts into a caller-owned int64 histogram. Each A-event scans only
the B-events inside the lag window, so the cost is linear in events plus
pairs. ``offset`` is the index of ``a[0]`` inside ``b`` for
autocorrelations (``auto=True``), where the self pair ``j == i + offset``
is skipped; it is ignored otherwise.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _fine_index(tau, width, nhalf):
    # Positive lags fill [k w, (k+1) w); negative lags mirror onto
    # (-(k+1) w, -k w] so that auto-histograms are exactly symmetric.
    if tau >= 0:
        return nhalf + tau // width
    return nhalf - 1 - (-tau) // width


@njit(cache=True, nogil=True)
def all_pairs_fine(a, b, width, nhalf, auto, offset, lo, out):
    window = width * nhalf
    nb = b.size
    for i in range(a.size):
        ta = a[i]
        while lo < nb and b[lo] - ta <= -window:
            lo += 1
        j = lo
        while j < nb:
            tau = b[j] - ta
            if tau >= window:
                break
            if not (auto and j == i + offset):
                out[_fine_index(tau, width, nhalf)] += 1
            j += 1


@njit(cache=True, nogil=True)
def start_stop_fine(a, b, width, nhalf, auto, offset, lo, out):
    window = width * nhalf
    nb = b.size
    for i in range(a.size):
        ta = a[i]
        while lo < nb and b[lo] - ta <= -window:
            lo += 1
        j = lo
        if auto and j == i + offset:
            j += 1
        if j < nb:
            tau = b[j] - ta
            if tau < window:
                out[_fine_index(tau, width, nhalf)] += 1


@njit(cache=True, nogil=True)
def all_pairs_period(a, b, period, nperiods, auto, offset, lo, out):
    # Bin n collects 2*tau in [(2n-1) T, (2n+1) T); index n + nperiods.
    lo2 = -(2 * nperiods + 1) * period
    hi2 = (2 * nperiods + 1) * period
    nb = b.size
    for i in range(a.size):
        ta = a[i]
        while lo < nb and 2 * (b[lo] - ta) < lo2:
            lo += 1
        j = lo
        while j < nb:
            tau2 = 2 * (b[j] - ta)
            if tau2 >= hi2:
                break
            if not (auto and j == i + offset):
                out[(tau2 - lo2) // (2 * period)] += 1
            j += 1


@njit(cache=True, nogil=True)
def start_stop_period(a, b, period, nperiods, auto, offset, lo, out):
    lo2 = -(2 * nperiods + 1) * period
    hi2 = (2 * nperiods + 1) * period
    nb = b.size
    for i in range(a.size):
        ta = a[i]
        while lo < nb and 2 * (b[lo] - ta) < lo2:
            lo += 1
        j = lo
        if auto and j == i + offset:
            j += 1
        if j < nb:
            tau2 = 2 * (b[j] - ta)
            if tau2 < hi2:
                out[(tau2 - lo2) // (2 * period)] += 1


@njit(cache=True)
def dead_time_mask(stamps, dead_time):
    keep = np.zeros(stamps.size, dtype=np.bool_)
    last = -dead_time - 1
    for i in range(stamps.size):
        if stamps[i] - last >= dead_time:
            keep[i] = True
            last = stamps[i]
    return keep
