import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from quphot import (
    LorentzianDipModel,
    ResonatorGeometry,
    SegmentedFourier,
    Spectrum,
    TransmissionTrace,
    find_dips,
    fit_dip,
    fsr_geometric,
    normalize_transmission,
    segmented_fourier,
    synth_modulated_spectrum,
    synth_transmission,
)
from quphot.g2 import FitError
from quphot.synth import nv_like_envelope
from quphot.wgm import LowConfidenceWarning

GRID = np.arange(768.0, 772.0 + 5e-4, 0.001)


def test_noise_free_fit_is_exact():
    trace = synth_transmission([(770.0, 12_000.0, 0.6)], 0.0, 0.0, GRID)
    fit = fit_dip(trace, (769.5, 770.5))
    assert fit.q == pytest.approx(12_000, rel=1e-9)
    assert fit.center_nm == pytest.approx(770.0, abs=1e-9)
    assert fit.depth == pytest.approx(0.6, rel=1e-9)
    # A multiplicative baseline slope is close to, not exactly, the additive model.
    sloped = fit_dip(synth_transmission([(770.0, 12_000.0, 0.6)], 0.01, 0.0, GRID),
                     (769.5, 770.5))
    assert sloped.q == pytest.approx(12_000, rel=1e-3)


@given(st.floats(3_000, 30_000), st.floats(0.2, 0.9), st.floats(-0.02, 0.02))
def test_property_q_recovered_without_noise(q, depth, slope):
    trace = synth_transmission([(770.0, q, depth)], slope, 0.0, GRID)
    (window,) = find_dips(trace, 0.1)
    assert fit_dip(trace, window).q == pytest.approx(q, rel=1e-4)


def test_low_confidence_flag():
    coarse = np.arange(768.0, 772.0, 0.03)
    trace = synth_transmission([(770.0, 12_000.0, 0.6)], 0.0, 0.0, coarse)
    with pytest.warns(LowConfidenceWarning):
        fit = fit_dip(trace, (769.0, 771.0))
    assert fit.low_confidence


def test_fit_window_checks():
    trace = synth_transmission([(770.0, 12_000.0, 0.6)], 0.0, 0.0, GRID)
    with pytest.raises(ValueError, match="samples"):
        fit_dip(trace, (770.0, 770.005))
    with pytest.raises(FitError):
        fit_dip(trace, (768.0, 768.5))


def test_find_dips_comb_spacing():
    centers = 700.0 + 6.5 * np.arange(10)
    grid = np.arange(695.0, 765.0, 0.002)
    trace = synth_transmission([(c, 8_000.0, 0.5) for c in centers], 0.0, 0.002, grid, seed=1)
    windows = find_dips(trace, 0.1)
    assert len(windows) == 10
    np.testing.assert_allclose(np.diff([w.center_nm for w in windows]), 6.5, atol=0.01)
    assert not any(w.merged for w in windows)


@pytest.mark.parametrize("separation", [0.5, 0.8])
def test_close_dips_are_merged(separation):
    fwhm = 770.0 / 12_000
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trace = synth_transmission([(770.0, 12_000.0, 0.5),
                                    (770.0 + separation * fwhm, 12_000.0, 0.5)], 0.0, 0.0, GRID)
    windows = find_dips(trace, 0.1)
    assert len(windows) == 1 and windows[0].merged


def test_normalize_transmission():
    coupled = TransmissionTrace(GRID, np.full(GRID.size, 0.5), reference=np.full(GRID.size, 2.0))
    np.testing.assert_allclose(normalize_transmission(coupled).transmission, 0.25)
    with pytest.raises(ValueError, match="positive"):
        normalize_transmission(coupled, TransmissionTrace(GRID, np.zeros(GRID.size)))
    with pytest.raises(ValueError, match="reference"):
        normalize_transmission(TransmissionTrace(GRID, np.ones(GRID.size)))


def test_fsr_scaling_laws():
    geo = ResonatorGeometry(20.0, 1.5)
    assert fsr_geometric(geo, 770.0) == pytest.approx(6.290864, abs=1e-6)
    assert fsr_geometric(ResonatorGeometry(40.0, 1.5), 770.0) == pytest.approx(
        fsr_geometric(geo, 770.0) / 2)
    assert fsr_geometric(geo, 2 * 770.0) == pytest.approx(4 * fsr_geometric(geo, 770.0))
    np.testing.assert_allclose(fsr_geometric(geo, np.array([700.0, 770.0])),
                               [fsr_geometric(geo, 700.0), fsr_geometric(geo, 770.0)])


def _nv(contrast, harmonics=(1.0,), noise=0.0, seed=0):
    grid = np.arange(600.0, 800.0, 0.05)
    return synth_modulated_spectrum(nv_like_envelope, (770.0, 6.5), contrast, grid,
                                    harmonics=harmonics, noise_rms=noise, seed=seed)


def test_mode_map_tracks_follow_lambda_squared():
    modes = segmented_fourier(_nv(0.3), 25.0, 0.5)
    track = modes.track(1)
    assert len(track.segment_centers_nm) == len(modes.segment_centers_nm)
    expected = 770.0**2 / 6.5 / track.segment_centers_nm**2
    np.testing.assert_allclose(track.frequencies_inv_nm, expected, atol=modes.frequency_bin_inv_nm)
    assert track.fsr_at(770.0) == pytest.approx(6.5, rel=0.02)
    assert modes.amplitude.shape == (modes.frequencies_inv_nm.size, modes.segment_centers_nm.size)
    assert modes.amplitude[1:].max() == pytest.approx(1.0)


@pytest.mark.parametrize("noise", [0.0, 0.002])
def test_no_bands_without_modulation(noise):
    assert segmented_fourier(_nv(0.0, noise=noise, seed=3), 25.0, 0.0).tracks == []


def test_segment_validation():
    with pytest.raises(ValueError, match="exceeds"):
        segmented_fourier(_nv(0.3), 500.0)
    with pytest.raises(ValueError, match="overlap"):
        segmented_fourier(_nv(0.3), 25.0, 1.0)


def test_estimators():
    trace = synth_transmission([(770.0, 12_000.0, 0.6)], 0.01, 0.0, GRID)
    model = LorentzianDipModel(window=(769.5, 770.5)).fit(GRID, trace.transmission)
    assert model.q_ == pytest.approx(12_000, rel=1e-6)
    assert model.score(GRID, trace.transmission) == pytest.approx(1.0)
    assert clone(model).get_params()["window"] == (769.5, 770.5)

    spectrum = _nv(0.3)
    est = SegmentedFourier(overlap_fraction=0.0)
    amp = est.fit_transform(spectrum)
    assert est.tracks_[0].order == 1
    np.testing.assert_array_equal(est.transform(spectrum.wavelength_nm, spectrum.intensity), amp)
    assert isinstance(spectrum, Spectrum)
