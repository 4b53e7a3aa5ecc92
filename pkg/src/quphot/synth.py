"""Monte Carlo photon streams and synthetic spectra used as analysis fixtures.

All random draws come from numpy's ``PCG64`` bit generator seeded through
``SeedSequence``; both are platform independent, so a (parameters, seed)
pair always reproduces the same streams bit for bit. The draw order inside
each routine is part of that contract and must not be reshuffled.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import __version__
from ._validation import check_grid, check_positive, check_probability
from .spectra import Spectrum, TransmissionTrace
from .streams import AFTERPULSE, BACKGROUND, EMITTER, PhotonStream

RNG_ALGORITHM = "numpy.PCG64/SeedSequence"
MIN_MEAN_GAP_PS = 10.0
_MAX_BLOCK = 1 << 20


@dataclass(frozen=True)
class EmitterModel:
    """Level scheme of the simulated emitter.

    ``excited_lifetime_ps`` is the total decay time of the excited state. A
    fraction ``shelving_rate_per_s * excited_lifetime`` of decays goes
    non-radiatively to a metastable shelf that empties after
    ``shelf_lifetime_ps`` on average; that path produces the bunching
    shoulder. The 20 ns default is a fixture value, not a measured one.
    """

    excited_lifetime_ps: float = 20_000.0
    pump_rate_per_s: float = 0.0
    excitation_probability: float = 0.0
    detected_fraction: float = 1.0
    shelving_rate_per_s: float = 0.0
    shelf_lifetime_ps: float = 300_000.0

    def __post_init__(self):
        check_positive(self.excited_lifetime_ps, "excited_lifetime_ps")
        check_positive(self.pump_rate_per_s, "pump_rate_per_s", strict=False)
        check_positive(self.shelving_rate_per_s, "shelving_rate_per_s", strict=False)
        check_positive(self.shelf_lifetime_ps, "shelf_lifetime_ps")
        check_probability(self.excitation_probability, "excitation_probability")
        check_probability(self.detected_fraction, "detected_fraction")
        check_probability(self.shelving_fraction, "shelving_rate_per_s * excited_lifetime")

    @property
    def shelving_fraction(self):
        return self.shelving_rate_per_s * 1e-12 * self.excited_lifetime_ps

    @property
    def correlation_time_ps(self):
        """Antibunching time 1/(pump + decay rate) of the two-level scheme."""
        return 1.0 / (self.pump_rate_per_s * 1e-12 + 1.0 / self.excited_lifetime_ps)

    def cw_detected_rate_per_s(self):
        """Mean detected emitter count rate under cw pumping."""
        if self.pump_rate_per_s == 0:
            return 0.0
        q = self.shelving_fraction
        cycle_ps = (
            1e12 / self.pump_rate_per_s
            + self.excited_lifetime_ps
            + q * self.shelf_lifetime_ps
        )
        return (1.0 - q) * self.detected_fraction / (cycle_ps * 1e-12)


@dataclass(frozen=True)
class PulseTrain:
    repetition_period_ps: int = 25_000
    pulse_count: int = 1_000_000

    def __post_init__(self):
        check_positive(self.repetition_period_ps, "repetition_period_ps", integer=True)
        check_positive(self.pulse_count, "pulse_count", integer=True)

    @property
    def duration_ps(self):
        return self.repetition_period_ps * self.pulse_count


def two_level_g2(tau_ps, emitter):
    """Analytic g2(tau) = 1 - exp(-|tau|/tau_c) of a cw-pumped two-level emitter."""
    tau = np.abs(np.asarray(tau_ps, dtype=np.float64))
    return 1.0 - np.exp(-tau / emitter.correlation_time_ps)


def _generator(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _check_gap(total_rate_per_s, what):
    if total_rate_per_s > 0 and 1e12 / total_rate_per_s < MIN_MEAN_GAP_PS:
        raise ValueError(
            f"{what}: mean inter-event gap {1e12 / total_rate_per_s:.3g} ps is below "
            f"the {MIN_MEAN_GAP_PS:g} ps timestamp resolution limit"
        )


def _cw_emitter_times(rng, emitter, duration_ps):
    """Detected emission times (float ps) of the rate-equation cycle Monte Carlo."""
    if emitter.pump_rate_per_s == 0:
        return np.empty(0)
    pump_wait = 1e12 / emitter.pump_rate_per_s
    q = emitter.shelving_fraction
    mean_cycle = pump_wait + emitter.excited_lifetime_ps + q * emitter.shelf_lifetime_ps
    block = int(min(_MAX_BLOCK, max(64, math.ceil(1.05 * duration_ps / mean_cycle) + 64)))
    chunks = []
    t0 = 0.0
    while t0 < duration_ps:
        ground = rng.exponential(pump_wait, block)
        excited = rng.exponential(emitter.excited_lifetime_ps, block)
        shelved = rng.random(block) < q
        shelf = rng.exponential(emitter.shelf_lifetime_ps, block)
        detected = rng.random(block) < emitter.detected_fraction
        cycle = ground + excited + np.where(shelved, shelf, 0.0)
        ends = t0 + np.cumsum(cycle)
        emit = (ends - cycle) + ground + excited
        chunks.append(emit[detected & ~shelved])
        t0 = float(ends[-1])
    times = np.concatenate(chunks)
    return times[times < duration_ps]


def _route(rng, times, origin, duration_ps, *, dead_time_ps, afterpulse_probability,
           afterpulse_delay_ps, metadata):
    """Split events at a 50/50 beamsplitter and build the two channel streams."""
    order = np.argsort(times, kind="stable")
    times = times[order]
    origin = origin[order]
    to_one = rng.random(times.size) < 0.5
    streams = []
    for channel, mask in ((0, ~to_one), (1, to_one)):
        t = times[mask]
        o = origin[mask]
        if afterpulse_probability > 0:
            spawn = rng.random(t.size) < afterpulse_probability
            delays = rng.exponential(afterpulse_delay_ps, int(spawn.sum()))
            t = np.concatenate([t, t[spawn] + delays])
            o = np.concatenate([o, np.full(delays.size, AFTERPULSE, dtype=np.uint8)])
            keep = np.argsort(t, kind="stable")
            t, o = t[keep], o[keep]
        stamps = np.floor(t).astype(np.uint64)
        inside = stamps < np.uint64(duration_ps)
        stamps, o = stamps[inside], o[inside]
        # Two clicks on one detector inside the same picosecond register once.
        first = np.ones(stamps.size, dtype=bool)
        first[1:] = stamps[1:] != stamps[:-1]
        stamps, o = stamps[first], o[first]
        if dead_time_ps > 0:
            from ._kernels import dead_time_mask

            keep = dead_time_mask(stamps.astype(np.int64), int(dead_time_ps))
            stamps, o = stamps[keep], o[keep]
        streams.append(PhotonStream(channel, stamps, duration_ps, o, metadata))
    return streams[0], streams[1]


def simulate_cw(emitter, background_rate_per_s, duration_ps, seed, *, dead_time_ps=0,
                afterpulse_probability=0.0, afterpulse_delay_ps=50_000.0):
    """Simulate an HBT measurement of a cw-pumped emitter plus Poisson background.

    Emitter photons follow the excitation/decay/shelving cycle of `emitter`;
    background photons form a homogeneous Poisson process. Each detected
    photon is routed to channel 0 or 1 with probability 1/2. Dead time and
    afterpulsing are off unless requested.

    Returns
    -------
    (PhotonStream, PhotonStream)
        Channel 0 and channel 1.
    """
    check_positive(duration_ps, "duration_ps")
    check_positive(background_rate_per_s, "background_rate_per_s", strict=False)
    check_positive(dead_time_ps, "dead_time_ps", strict=False)
    check_probability(afterpulse_probability, "afterpulse_probability")
    duration_ps = int(duration_ps)
    _check_gap(emitter.cw_detected_rate_per_s() + background_rate_per_s, "simulate_cw")

    rng = _generator(seed)
    detected = _cw_emitter_times(rng, emitter, duration_ps)
    n_bg = int(rng.poisson(background_rate_per_s * duration_ps * 1e-12))
    background = np.sort(rng.random(n_bg) * duration_ps)
    times = np.concatenate([detected, background])
    origin = np.concatenate([
        np.full(detected.size, EMITTER, dtype=np.uint8),
        np.full(background.size, BACKGROUND, dtype=np.uint8),
    ])
    metadata = {
        "generator": "simulate_cw",
        "rng": RNG_ALGORITHM,
        "seed": seed,
        "version": __version__,
    }
    return _route(rng, times, origin, duration_ps, dead_time_ps=dead_time_ps,
                  afterpulse_probability=afterpulse_probability,
                  afterpulse_delay_ps=afterpulse_delay_ps, metadata=metadata)


def simulate_pulsed(emitter, pulses, background_per_pulse, seed, *, dead_time_ps=0,
                    afterpulse_probability=0.0, afterpulse_delay_ps=50_000.0):
    """Simulate an HBT measurement under pulsed excitation.

    Pulse k fires at ``k * repetition_period_ps``. The emitter emits at most
    one photon per pulse, detected with probability
    ``excitation_probability * detected_fraction``. Background counts per
    pulse are Poisson with mean `background_per_pulse`. Emitter and
    background photons share the exponential delay envelope of
    ``excited_lifetime_ps`` but are drawn independently.
    """
    check_positive(background_per_pulse, "background_per_pulse", strict=False)
    check_positive(dead_time_ps, "dead_time_ps", strict=False)
    check_probability(afterpulse_probability, "afterpulse_probability")
    period = pulses.repetition_period_ps
    p_detect = emitter.excitation_probability * emitter.detected_fraction
    _check_gap((p_detect + background_per_pulse) / (period * 1e-12), "simulate_pulsed")

    rng = _generator(seed)
    times, origin = [], []
    for start in range(0, pulses.pulse_count, _MAX_BLOCK):
        stop = min(start + _MAX_BLOCK, pulses.pulse_count)
        index = np.arange(start, stop, dtype=np.float64)
        hit = rng.random(index.size) < p_detect
        em = index[hit] * period + rng.exponential(emitter.excited_lifetime_ps, int(hit.sum()))
        n_bg = rng.poisson(background_per_pulse, index.size)
        bg_index = np.repeat(index, n_bg)
        bg = bg_index * period + rng.exponential(emitter.excited_lifetime_ps, bg_index.size)
        times += [em, bg]
        origin += [np.full(em.size, EMITTER, dtype=np.uint8),
                   np.full(bg.size, BACKGROUND, dtype=np.uint8)]
    metadata = {
        "generator": "simulate_pulsed",
        "rng": RNG_ALGORITHM,
        "seed": seed,
        "repetition_period_ps": period,
        "version": __version__,
    }
    return _route(rng, np.concatenate(times), np.concatenate(origin), pulses.duration_ps,
                  dead_time_ps=dead_time_ps, afterpulse_probability=afterpulse_probability,
                  afterpulse_delay_ps=afterpulse_delay_ps, metadata=metadata)


def lorentzian(wavelength_nm, center_nm, fwhm_nm):
    """Unit-height Lorentzian profile."""
    half = 0.5 * fwhm_nm
    return half**2 / ((np.asarray(wavelength_nm) - center_nm) ** 2 + half**2)


def synth_transmission(resonances: Sequence[tuple[float, float, float]], baseline_slope_per_nm,
                       noise_rms, grid, seed=None):
    """Taper transmission with Lorentzian dips on a sloped unit baseline.

    ``resonances`` holds ``(center_nm, q, depth)`` triples; each dip has
    FWHM ``center_nm / q``. The slope is taken about the grid midpoint.
    """
    grid = check_grid(grid)
    check_positive(noise_rms, "noise_rms", strict=False)
    dips = sorted((float(c), float(q), float(d)) for c, q, d in resonances)
    shape = np.ones_like(grid)
    for center, q, depth in dips:
        check_positive(q, "Q")
        if not 0 < depth <= 1:
            raise ValueError(f"dip depth must lie in (0, 1], got {depth}")
        shape *= 1.0 - depth * lorentzian(grid, center, center / q)
    for (c1, q1, _), (c2, q2, _) in zip(dips, dips[1:]):
        if c2 - c1 < 3 * max(c1 / q1, c2 / q2):
            warnings.warn(f"resonances at {c1} nm and {c2} nm overlap (< 3 FWHM apart)",
                          stacklevel=2)
    mid = 0.5 * (grid[0] + grid[-1])
    trace = (1.0 + baseline_slope_per_nm * (grid - mid)) * shape
    if noise_rms > 0:
        trace = trace + _generator(seed).normal(0.0, noise_rms, grid.size)
    return TransmissionTrace(grid, trace)


def modulation_phase(wavelength_nm, fsr_at):
    """Mode-order phase that advances by one per local FSR, with FSR ~ lambda**2."""
    ref_nm, fsr_ref_nm = fsr_at
    scale = ref_nm**2 / fsr_ref_nm
    return scale * (1.0 / ref_nm - 1.0 / np.asarray(wavelength_nm, dtype=np.float64))


def synth_modulated_spectrum(envelope: Callable | np.ndarray, fsr_at, contrast, grid, *,
                             harmonics=(1.0,), noise_rms=0.0, seed=None):
    """Broadband spectrum carrying the periodic WGM modulation.

    The envelope is multiplied by ``1 + contrast * sum_k h_k cos(2 pi k phase)``
    with the harmonic weights ``h_k`` from `harmonics`. The local FSR scales
    as ``fsr_ref * (lambda / lambda_ref)**2``.
    """
    grid = check_grid(grid)
    if not 0 <= contrast <= 1:
        raise ValueError(f"contrast must lie in [0, 1], got {contrast}")
    check_positive(fsr_at[1], "FSR")
    base = envelope(grid) if callable(envelope) else np.asarray(envelope, dtype=np.float64)
    base = np.broadcast_to(base, grid.shape).astype(np.float64)
    if contrast == 0:
        values = base.copy()
    else:
        phase = modulation_phase(grid, fsr_at)
        mod = sum(h * np.cos(2 * np.pi * (k + 1) * phase) for k, h in enumerate(harmonics))
        values = base * (1.0 + contrast * mod)
    if noise_rms > 0:
        values = values + _generator(seed).normal(0.0, noise_rms, grid.size)
    return Spectrum(grid, values)


def nv_like_envelope(wavelength_nm, peak_nm=690.0, fwhm_nm=110.0, skew=0.25):
    """Smooth, red-skewed phonon-sideband shape spanning roughly 600-800 nm."""
    x = (np.asarray(wavelength_nm, dtype=np.float64) - peak_nm) / fwhm_nm
    width = 1.0 + skew * np.tanh(x)
    return np.exp(-4.0 * math.log(2.0) * (x / width) ** 2)
