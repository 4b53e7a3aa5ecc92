import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from oracles import mc_corrected_std
from quphot import (
    AntibunchingModel,
    BackgroundCorrector,
    BackgroundMix,
    cw_correct,
    fit_antibunching,
    propagate_error,
    pulsed_correct,
)
from quphot.correlator import CorrelationCurve
from quphot.g2 import antibunching_model, error_budget, joint_g2

intensity = st.floats(0.01, 10.0)
g2_value = st.floats(0.0, 3.0)


def _brute_joint(g2_a, a, b, g2_b=1.0):
    # Coincidence rates of the two independent sources, summed directly.
    rate = a * a * g2_a + b * b * g2_b + a * b + b * a
    return rate / (a + b) ** 2


@given(intensity, intensity, g2_value, g2_value)
def test_forward_matches_direct_sum(a, b, g2_a, g2_b):
    mix = BackgroundMix(a, b)
    assert joint_g2(g2_a, mix, g2_b) == pytest.approx(_brute_joint(g2_a, a, b, g2_b), rel=1e-12)


@given(intensity, intensity, g2_value)
def test_roundtrip(a, b, g2_ab):
    mix = BackgroundMix(a, b)
    back = joint_g2(cw_correct(g2_ab, mix).g2_a, mix)
    assert back == pytest.approx(g2_ab, rel=1e-9, abs=1e-9)


@given(intensity, intensity, g2_value, st.floats(0.001, 1.0))
def test_correction_is_increasing_in_measured_value(a, b, g2_ab, step):
    mix = BackgroundMix(a, b)
    assert cw_correct(g2_ab + step, mix).g2_a > cw_correct(g2_ab, mix).g2_a


def test_known_values():
    mix = BackgroundMix(1 / 3, 2 / 3)
    assert cw_correct(8 / 9, mix).g2_a == pytest.approx(0.0, abs=1e-12)
    assert cw_correct(1.0, mix).g2_a == pytest.approx(1.0, abs=1e-12)
    assert cw_correct(0.869, mix).g2_a == pytest.approx(-0.179, abs=1e-9)


def test_mix_normalization_and_errors():
    mix = BackgroundMix(2.0, 6.0, 0.4, 0.8, 0.1)
    assert (mix.a, mix.b, mix.da, mix.db, mix.dr) == pytest.approx((0.25, 0.75, 0.05, 0.1, 0.1))
    assert BackgroundMix.from_ratio(2.0).ratio == pytest.approx(2.0)
    assert BackgroundMix.from_background_fraction(0.169).background_fraction == pytest.approx(0.169)
    with pytest.raises(ValueError, match="undefined"):
        cw_correct(0.9, BackgroundMix(0.0, 1.0))
    with pytest.raises(ValueError):
        BackgroundMix(-1.0, 1.0)


def test_budget_terms_add_in_quadrature():
    mix = BackgroundMix.from_ratio(2.0, dr=0.2, da=0.01, db=0.07)
    parts = error_budget(0.869, mix, 1.0, sigma_ab=0.01, sigma_b=0.02)
    others = [v for k, v in parts.items() if k != "total"]
    assert parts["total"] == pytest.approx(np.sqrt(sum(v * v for v in others)))
    assert propagate_error(0.869, mix) == pytest.approx(0.2328, abs=5e-4)


@pytest.mark.parametrize("g2_ab, r, dr, da, db", [
    (0.869, 2.0, 0.2, 0.01, 0.07),
    (0.5, 0.5, 0.02, 0.01, 0.01),
    (0.3, 0.2, 0.01, 0.005, 0.005),
])
def test_propagation_matches_monte_carlo(g2_ab, r, dr, da, db):
    mix = BackgroundMix.from_ratio(r, dr=dr, da=da, db=db)
    mc = mc_corrected_std(g2_ab, mix.a, mix.b, mix.da, mix.db, mix.dr, seed=1)
    assert propagate_error(g2_ab, mix) == pytest.approx(mc, rel=0.05)


def _curve(g2, sigma, width=1_000.0, n=150):
    lag = (np.arange(-n, n) + 0.5) * width
    return CorrelationCurve(lag, g2(lag), np.full(lag.size, sigma), 1e4, width)


def test_pulsed_correct_per_bin_and_grid_check():
    lag = np.arange(-3, 4) * 25_000.0
    joint = CorrelationCurve(lag, np.r_[1, 1, 1, 8 / 9, 1, 1, 1.0], np.full(7, 0.01), 1e4, 25_000,
                             "period")
    bg = CorrelationCurve(lag, np.ones(7), np.full(7, 0.01), 1e4, 25_000, "period")
    result = pulsed_correct(joint, bg, BackgroundMix(1 / 3, 2 / 3))
    assert result.g2_a_zero == pytest.approx(0.0, abs=1e-12)
    assert result.dg2_a_zero == pytest.approx(np.hypot(9 * 0.01, 4 * 0.01))
    np.testing.assert_allclose(np.delete(result.g2_a, 3), 1.0)
    shifted = CorrelationCurve(lag + 1, bg.g2, bg.sigma, 1e4, 25_000, "period")
    with pytest.raises(ValueError, match="grid"):
        pulsed_correct(joint, shifted, BackgroundMix(1 / 3, 2 / 3))


def test_fit_recovers_noise_free_parameters():
    truth = (0.2, 12_000.0, 0.3, 150_000.0)
    curve = _curve(lambda t: antibunching_model(t, *truth), 0.01, width=2_000.0, n=300)
    fit = fit_antibunching(curve, "three_level")
    assert (fit.g0, fit.tau1_ps, fit.beta, fit.tau2_ps) == pytest.approx(truth, rel=1e-5)
    two = fit_antibunching(_curve(lambda t: antibunching_model(t, 0.1, 9_000.0), 0.01), "two_level")
    assert (two.g0, two.tau1_ps) == pytest.approx((0.1, 9_000.0), rel=1e-6)


def test_fit_uncertainty_coverage():
    truth = (0.3, 10_000.0, 0.2, 100_000.0)
    rng = np.random.default_rng(77)
    covered = 0
    base = _curve(lambda t: antibunching_model(t, *truth), 0.03, width=2_000.0, n=200)
    for _ in range(100):
        noisy = CorrelationCurve(base.lag_ps, base.g2 + rng.normal(0, 0.03, base.g2.size),
                                 base.sigma, base.normalization, base.bin_width_ps)
        fit = fit_antibunching(noisy, "three_level")
        covered += abs(fit.g0 - truth[0]) <= fit.g0_err
    assert covered >= 60


def test_fit_rejects_short_curves():
    short = _curve(lambda t: antibunching_model(t, 0.0, 50_000.0), 0.01, n=20)
    with pytest.raises(ValueError, match="3 tau1"):
        fit_antibunching(short, "two_level")
    with pytest.raises(ValueError, match="model"):
        fit_antibunching(short, "four_level")


def test_estimators():
    corrector = BackgroundCorrector(a=1 / 3, b=2 / 3)
    values = np.array([8 / 9, 1.0])
    np.testing.assert_allclose(corrector.fit_transform(values), [0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(corrector.inverse_transform(corrector.transform(values)), values)
    assert clone(corrector).get_params()["b"] == pytest.approx(2 / 3)

    lag = (np.arange(-200, 200) + 0.5) * 1_000.0
    y = antibunching_model(lag, 0.25, 8_000.0, 0.1, 60_000.0)
    model = AntibunchingModel().fit(lag, y)
    assert model.g0_ == pytest.approx(0.25, abs=1e-6)
    np.testing.assert_allclose(model.predict(lag), y, atol=1e-8)
    assert model.score(lag, y) == pytest.approx(1.0)
