import warnings

import numpy as np
import pytest
from scipy import stats

from quphot import EmitterModel, PulseTrain, simulate_cw, simulate_pulsed
from quphot.correlator import cross_correlate, normalize, rebin_to_periods
from quphot.streams import AFTERPULSE, BACKGROUND, EMITTER
from quphot.synth import (
    modulation_phase,
    nv_like_envelope,
    synth_modulated_spectrum,
    synth_transmission,
    two_level_g2,
)

EMITTER_2L = EmitterModel(excited_lifetime_ps=20_000, pump_rate_per_s=5e7, detected_fraction=0.2)


def test_same_seed_same_streams():
    first = simulate_cw(EMITTER_2L, 1e5, 1e10, seed=3)
    second = simulate_cw(EMITTER_2L, 1e5, 1e10, seed=3)
    other = simulate_cw(EMITTER_2L, 1e5, 1e10, seed=4)
    assert first[0] == second[0] and first[1] == second[1]
    assert not first[0] == other[0]
    assert first[0].metadata["seed"] == "3"


def test_cw_rates_and_origin_split():
    a, b = simulate_cw(EMITTER_2L, 2e5, 2e11, seed=1)
    duration_s = 0.2
    emitter = (a.count(EMITTER) + b.count(EMITTER)) / duration_s
    background = (a.count(BACKGROUND) + b.count(BACKGROUND)) / duration_s
    expected = EMITTER_2L.cw_detected_rate_per_s()
    assert emitter == pytest.approx(expected, rel=0.02)
    assert background == pytest.approx(2e5, rel=0.02)
    assert len(a) / (len(a) + len(b)) == pytest.approx(0.5, abs=0.01)


def test_cw_two_level_matches_analytic_g2():
    a, b = simulate_cw(EMITTER_2L, 0.0, 5e11, seed=2)
    curve = normalize(cross_correlate(a, b))
    core = np.abs(curve.lag_ps) < 150_000
    model = two_level_g2(curve.lag_ps[core], EMITTER_2L)
    chi2 = np.sum(((curve.g2[core] - model) / curve.sigma[core]) ** 2)
    dof = int(core.sum())
    assert stats.chi2.sf(chi2, dof) > 1e-3


def test_shelving_produces_bunching_shoulder():
    em = EmitterModel(excited_lifetime_ps=20_000, pump_rate_per_s=5e7, detected_fraction=0.2,
                      shelving_rate_per_s=5e6, shelf_lifetime_ps=200_000)
    a, b = simulate_cw(em, 0.0, 5e11, seed=6)
    curve = normalize(cross_correlate(a, b))
    shoulder = curve.g2[(np.abs(curve.lag_ps) > 60_000) & (np.abs(curve.lag_ps) < 120_000)]
    assert shoulder.mean() > 1.05


def test_pulsed_counts_and_timing():
    em = EmitterModel(excited_lifetime_ps=2_000, excitation_probability=0.5, detected_fraction=0.2)
    pulses = PulseTrain(25_000, 400_000)
    a, b = simulate_pulsed(em, pulses, 0.05, seed=9)
    n_em = a.count(EMITTER) + b.count(EMITTER)
    n_bg = a.count(BACKGROUND) + b.count(BACKGROUND)
    assert n_em == pytest.approx(0.1 * 400_000, rel=0.03)
    assert n_bg == pytest.approx(0.05 * 400_000, rel=0.05)
    phase = np.concatenate([a.timestamps, b.timestamps]) % 25_000
    assert np.mean(phase) == pytest.approx(2_000, rel=0.05)


def test_pulsed_single_emitter_never_coincides():
    em = EmitterModel(excited_lifetime_ps=1_000, excitation_probability=1.0, detected_fraction=0.5)
    a, b = simulate_pulsed(em, PulseTrain(25_000, 200_000), 0.0, seed=1)
    hist = rebin_to_periods(a, b, 25_000, 4)
    assert hist.counts[4] == 0 and hist.counts[5] > 0


def test_dead_time_and_afterpulses():
    a, _ = simulate_cw(EMITTER_2L, 1e6, 1e10, seed=5, dead_time_ps=50_000)
    assert np.diff(a.timestamps.astype(np.int64)).min() >= 50_000
    a, _ = simulate_cw(EMITTER_2L, 1e6, 1e10, seed=5, afterpulse_probability=0.1)
    assert a.count(AFTERPULSE) > 0


def test_rejects_unresolvable_rates():
    with pytest.raises(ValueError, match="resolution"):
        simulate_cw(EmitterModel(), 2e11, 1e9, seed=0)
    with pytest.raises(ValueError):
        EmitterModel(detected_fraction=1.5)
    with pytest.raises(ValueError):
        EmitterModel(excited_lifetime_ps=20_000, shelving_rate_per_s=1e11)


def test_transmission_dip_shape():
    grid = np.linspace(769, 771, 2001)
    trace = synth_transmission([(770.0, 10_000.0, 0.5)], 0.0, 0.0, grid)
    assert trace.transmission.min() == pytest.approx(0.5)
    half = grid[trace.transmission < 0.75]
    assert half[-1] - half[0] == pytest.approx(0.077, abs=0.002)


def test_transmission_overlap_warning():
    grid = np.linspace(769, 771, 2001)
    with pytest.warns(UserWarning, match="overlap"):
        synth_transmission([(770.0, 10_000.0, 0.5), (770.05, 10_000.0, 0.5)], 0.0, 0.0, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        synth_transmission([(769.5, 10_000.0, 0.5), (770.5, 10_000.0, 0.5)], 0.0, 0.0, grid)


def test_modulation_phase_advances_one_per_fsr():
    fsr = 6.5
    # one full order above 770 nm sits at 770 / (1 - fsr / 770)
    assert modulation_phase(770.0 / (1 - fsr / 770.0), (770.0, fsr)) == pytest.approx(1, rel=1e-12)
    assert modulation_phase(770.0, (770.0, fsr)) == 0


def test_modulated_spectrum_contrast():
    grid = np.arange(600.0, 800.0, 0.05)
    flat = synth_modulated_spectrum(1.0, (770.0, 6.5), 0.2, grid)
    assert flat.intensity.max() == pytest.approx(1.2, abs=1e-3)
    assert flat.intensity.min() == pytest.approx(0.8, abs=1e-3)
    env = nv_like_envelope(grid)
    assert grid[np.argmax(env)] == pytest.approx(690, abs=0.1)
