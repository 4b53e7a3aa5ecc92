"""Background correction, error budget and antibunching fits for g2 curves.

A detected signal made of emitter light (intensity ``a``) and uncorrelated
background (intensity ``b``) has the joint correlation

    g2_ab = (a**2 g2_a + b**2 g2_b + 2 a b) / (a + b)**2

with ``g2_b = 1`` for a Poissonian background. Everything here inverts that
relation, either for a scalar, a full curve, or per laser period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .correlator import CorrelationCurve

TWO_LEVEL = "two_level"
THREE_LEVEL = "three_level"


class FitError(RuntimeError):
    """Raised when a least-squares fit does not converge."""

    def __init__(self, message, residual_norm=float("nan")):
        super().__init__(f"{message} (residual norm {residual_norm:.6g})")
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class BackgroundMix:
    """Emitter intensity `a`, background intensity `b` and their uncertainties.

    Intensities are rescaled on construction so that ``a + b = 1``; `da` and
    `db` scale along. `dr` is the absolute uncertainty of the ratio ``b/a``.
    """

    a: float
    b: float
    da: float = 0.0
    db: float = 0.0
    dr: float = 0.0

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if a < 0 or b < 0 or a + b <= 0:
            raise ValueError(f"need a >= 0, b >= 0 and a + b > 0, got a={a}, b={b}")
        if min(self.da, self.db, self.dr) < 0:
            raise ValueError("uncertainties must be non-negative")
        total = a + b
        for name, value in (("a", a), ("b", b), ("da", self.da), ("db", self.db)):
            object.__setattr__(self, name, float(value) / total)
        object.__setattr__(self, "dr", float(self.dr))

    @classmethod
    def from_ratio(cls, ratio, dr=0.0, da=0.0, db=0.0):
        """Mix with background-to-signal ratio ``b/a = ratio``."""
        return cls(1.0, float(ratio), da * (1 + ratio), db * (1 + ratio), dr)

    @classmethod
    def from_background_fraction(cls, fraction):
        return cls(1.0 - fraction, fraction)

    @property
    def ratio(self):
        return self.b / self.a if self.a > 0 else float("inf")

    @property
    def background_fraction(self):
        return self.b


def joint_g2(g2_a, mix, g2_b=1.0, g_cross=1.0):
    """Forward relation: the g2 measured on emitter plus background."""
    a, b = mix.a, mix.b
    g2_a = np.asarray(g2_a, dtype=np.float64)
    return (a * a * g2_a + b * b * np.asarray(g2_b) + 2 * a * b * np.asarray(g_cross)) / (a + b) ** 2


def _invert(g2_ab, mix, g2_b=1.0, g_cross=1.0):
    a, b = mix.a, mix.b
    if a == 0:
        raise ValueError("emitter intensity a = 0: bare-emitter correlation is undefined")
    g2_ab = np.asarray(g2_ab, dtype=np.float64)
    return (g2_ab * (a + b) ** 2 - b * b * np.asarray(g2_b) - 2 * a * b * np.asarray(g_cross)) / (a * a)


def error_budget(g2_ab, mix, g2_b=1.0, sigma_ab=0.0, sigma_b=0.0):
    """Per-source first-order contributions to the uncertainty of g2_a.

    Written in terms of ``r = b/a`` the inversion reads
    ``g2_a = g2_ab (1 + r)**2 - r**2 g2_b - 2 r``. The intensity
    uncertainties enter through r (``dr/da = -b/a**2``, ``dr/db = 1/a``);
    `sigma_ab` and `sigma_b` are statistical errors of the measured curves.
    All contributions add in quadrature into ``"total"``.
    """
    if mix.a == 0:
        raise ValueError("emitter intensity a = 0: bare-emitter correlation is undefined")
    r = mix.ratio
    g2_ab = np.asarray(g2_ab, dtype=np.float64)
    g2_b = np.asarray(g2_b, dtype=np.float64)
    slope = np.abs(2 * g2_ab * (1 + r) - 2 * r * g2_b - 2)
    parts = {
        "ratio": slope * mix.dr,
        "a": slope * (mix.b / mix.a**2) * mix.da,
        "b": slope * mix.db / mix.a,
        "joint_statistics": (1 + r) ** 2 * np.asarray(sigma_ab, dtype=np.float64),
        "background_statistics": r * r * np.asarray(sigma_b, dtype=np.float64),
    }
    parts["total"] = np.sqrt(sum(v * v for v in parts.values()))
    return parts


def propagate_error(g2_ab, mix, g2_b=1.0):
    """Standard uncertainty of the corrected g2_a from dr, da and db."""
    total = error_budget(g2_ab, mix, g2_b)["total"]
    return float(total) if np.ndim(total) == 0 else total


@dataclass(frozen=True, eq=False)
class CorrectionResult:
    """Background-corrected g2 with the inputs that produced it.

    For curve corrections the arrays are per bin and `lag_ps` is set;
    ``zero`` indexes the bin at zero lag.
    """

    g2_a: np.ndarray | float
    g2_ab: np.ndarray | float
    g2_b: np.ndarray | float
    mix: BackgroundMix
    dg2_a: np.ndarray | float
    budget: dict = field(default_factory=dict)
    lag_ps: np.ndarray | None = None
    zero: int | None = None

    @property
    def g2_a_zero(self):
        return float(self.g2_a if self.zero is None else self.g2_a[self.zero])

    @property
    def dg2_a_zero(self):
        return float(self.dg2_a if self.zero is None else self.dg2_a[self.zero])

    def budget_at_zero(self):
        return {k: float(v if np.ndim(v) == 0 else v[self.zero]) for k, v in self.budget.items()}


def cw_correct(g2_ab, mix):
    """Remove a Poissonian background from a cw g2 value or curve.

    `g2_ab` may be a scalar, an array, or a :class:`CorrelationCurve`; the
    curve's per-bin uncertainties enter the budget. Negative results are
    returned as they are.
    """
    lag, sigma, zero = None, 0.0, None
    if isinstance(g2_ab, CorrelationCurve):
        lag, sigma, zero = g2_ab.lag_ps, g2_ab.sigma, g2_ab.at(0)
        g2_ab = g2_ab.g2
    g2_a = _invert(g2_ab, mix)
    budget = error_budget(g2_ab, mix, 1.0, sigma_ab=sigma)
    if np.ndim(g2_a) == 0:
        g2_a = float(g2_a)
        budget = {k: float(v) for k, v in budget.items()}
    return CorrectionResult(g2_a, g2_ab, 1.0, mix, budget["total"], budget, lag, zero)


def pulsed_correct(joint, background, mix):
    """Per-period background correction under pulsed excitation.

    `joint` is the period-binned, tail-normalized curve at the emitter and
    `background` the same measurement at a nearby emitter-free spot. Emitter
    and background are independent and each period bin spans a full
    repetition period, so their cross correlation is 1 in every bin; the
    background autocorrelation comes from `background` bin by bin.
    """
    if (len(joint) != len(background) or not np.array_equal(joint.lag_ps, background.lag_ps)):
        raise ValueError("joint and background curves are not on the same period grid")
    g2_a = _invert(joint.g2, mix, background.g2)
    budget = error_budget(joint.g2, mix, background.g2, joint.sigma, background.sigma)
    return CorrectionResult(g2_a, joint.g2, background.g2, mix, budget["total"], budget,
                            joint.lag_ps, joint.at(0))


class BackgroundCorrector(BaseEstimator):
    """Estimator form of :func:`cw_correct` for pipelines over g2 arrays."""

    def __init__(self, a=1.0, b=0.0, da=0.0, db=0.0, dr=0.0):
        self.a = a
        self.b = b
        self.da = da
        self.db = db
        self.dr = dr

    def fit(self, X=None, y=None):
        self.mix_ = BackgroundMix(self.a, self.b, self.da, self.db, self.dr)
        return self

    def transform(self, X):
        check_is_fitted(self, "mix_")
        return _invert(X, self.mix_)

    def inverse_transform(self, X):
        check_is_fitted(self, "mix_")
        return joint_g2(X, self.mix_)

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)


# -- antibunching model -----------------------------------------------------

_PARAMS = {TWO_LEVEL: ("g0", "tau1_ps"), THREE_LEVEL: ("g0", "tau1_ps", "beta", "tau2_ps")}


def antibunching_model(lag_ps, g0, tau1_ps, beta=0.0, tau2_ps=np.inf):
    """``1 - (1 - g0) [(1 + beta) exp(-|t|/tau1) - beta exp(-|t|/tau2)]``."""
    t = np.abs(np.asarray(lag_ps, dtype=np.float64))
    e1 = np.exp(-t / tau1_ps)
    e2 = np.exp(-t / tau2_ps) if beta else 0.0
    return 1.0 - (1.0 - g0) * ((1.0 + beta) * e1 - beta * e2)


def _jacobian(t, p, model):
    g0, tau1 = p[0], p[1]
    beta, tau2 = (p[2], p[3]) if model == THREE_LEVEL else (0.0, np.inf)
    e1 = np.exp(-t / tau1)
    e2 = np.exp(-t / tau2) if model == THREE_LEVEL else np.zeros_like(t)
    cols = [
        (1.0 + beta) * e1 - beta * e2,
        -(1.0 - g0) * (1.0 + beta) * e1 * t / tau1**2,
    ]
    if model == THREE_LEVEL:
        cols += [-(1.0 - g0) * (e1 - e2), (1.0 - g0) * beta * e2 * t / tau2**2]
    return np.column_stack(cols)


def _initial_guess(t, y, model):
    order = np.argsort(np.abs(t))
    g0 = float(np.clip(np.mean(y[order[:2]]), -0.5, 0.95))
    half = 0.5 * (1.0 + g0)
    pos = t > 0
    tp, yp = t[pos], y[pos]
    idx = np.argsort(tp)
    tp, yp = tp[idx], yp[idx]
    above = np.nonzero(yp >= half)[0]
    t_half = tp[above[0]] if above.size else tp[len(tp) // 4]
    tau1 = max(float(t_half) / np.log(2.0), float(tp[0]))
    if model == TWO_LEVEL:
        return np.array([g0, tau1])
    beyond = tp > 3 * tau1
    excess = yp[beyond] - 1.0 if beyond.any() else np.array([0.0])
    beta = float(max(excess.max(), 0.05)) if excess.size else 0.05
    drop = np.nonzero(excess < beta / np.e)[0]
    tau2 = float(tp[beyond][drop[0]] - 3 * tau1) if drop.size and beyond.any() else 20 * tau1
    return np.array([g0, tau1, beta, max(tau2, 2 * tau1)])


@dataclass(frozen=True, eq=False)
class AntibunchingFit:
    model: str
    g0: float
    g0_err: float
    tau1_ps: float
    tau1_err_ps: float
    beta: float
    beta_err: float
    tau2_ps: float
    tau2_err_ps: float
    covariance: np.ndarray
    chi2_dof: float
    n_bins: int

    def predict(self, lag_ps):
        return antibunching_model(lag_ps, self.g0, self.tau1_ps, self.beta, self.tau2_ps)


def fit_antibunching(curve, model=THREE_LEVEL, init=None, *, absolute_sigma=True,
                     max_nfev=2000):
    """Weighted least-squares antibunching fit of a normalized g2 curve.

    Weights are the per-bin uncertainties of `curve` (empty bins count as one
    event). Standard errors come from the covariance at the optimum; with
    ``absolute_sigma=False`` it is rescaled by chi2/dof.
    """
    if model not in _PARAMS:
        raise ValueError(f"model must be one of {tuple(_PARAMS)}, got {model!r}")
    t = np.asarray(curve.lag_ps, dtype=np.float64)
    y = np.asarray(curve.g2, dtype=np.float64)
    floor = 1.0 / curve.normalization if np.isfinite(curve.normalization) else 1e-3
    sigma = np.where(curve.sigma > 0, curve.sigma, floor)
    p0 = np.asarray(init, dtype=np.float64) if init is not None else _initial_guess(t, y, model)
    if p0.size != len(_PARAMS[model]):
        raise ValueError(f"init needs {len(_PARAMS[model])} values for {model}")
    if t.size < 10 or t.min() > -3 * p0[1] or t.max() < 3 * p0[1]:
        raise ValueError("curve must have >= 10 bins spanning 3 tau1 on both sides of zero")

    abs_t = np.abs(t)

    def residuals(p):
        return (antibunching_model(t, *p) - y) / sigma

    def jac(p):
        return _jacobian(abs_t, p, model) / sigma[:, None]

    bin_w = float(curve.bin_width_ps)
    lower = [-2.0, 1e-3 * bin_w] + ([0.0, 1e-2 * bin_w] if model == THREE_LEVEL else [])
    upper = [2.0, np.inf] + ([np.inf, np.inf] if model == THREE_LEVEL else [])
    p0 = np.clip(p0, np.array(lower) + 1e-12, upper)
    res = least_squares(residuals, p0, jac=jac, bounds=(lower, upper), method="trf",
                        x_scale="jac", max_nfev=max_nfev)
    if not res.success or res.status <= 0:
        raise FitError(f"antibunching fit did not converge: {res.message}",
                       float(np.linalg.norm(res.fun)))
    J = res.jac
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(J.T @ J)
    dof = max(t.size - p0.size, 1)
    if not absolute_sigma:
        cov = cov * (2 * res.cost / dof)
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    p = res.x
    if model == TWO_LEVEL:
        beta, beta_err, tau2, tau2_err = 0.0, 0.0, float("nan"), float("nan")
    else:
        beta, beta_err, tau2, tau2_err = p[2], err[2], p[3], err[3]
    return AntibunchingFit(model, float(p[0]), float(err[0]), float(p[1]), float(err[1]),
                           float(beta), float(beta_err), float(tau2), float(tau2_err), cov,
                           float(2 * res.cost / dof), int(t.size))


class AntibunchingModel(BaseEstimator, RegressorMixin):
    """Estimator wrapper around :func:`fit_antibunching`.

    ``fit`` accepts either a :class:`CorrelationCurve` or lag/g2 arrays with
    optional per-bin ``sigma``.
    """

    def __init__(self, model=THREE_LEVEL, init=None):
        self.model = model
        self.init = init

    def fit(self, X, y=None, sigma=None):
        if isinstance(X, CorrelationCurve):
            curve = X
        else:
            lag = column_or_1d(np.asarray(X, dtype=np.float64).reshape(-1), warn=False)
            g2 = column_or_1d(np.asarray(y, dtype=np.float64), warn=False)
            absolute = sigma is not None
            if sigma is None:
                sigma = np.full_like(g2, 1.0)
            width = float(np.median(np.diff(np.sort(lag)))) if lag.size > 1 else 1.0
            curve = CorrelationCurve(lag, g2, sigma, np.inf, width)
        self.result_ = fit_antibunching(curve, self.model, self.init,
                                        absolute_sigma=isinstance(X, CorrelationCurve) or absolute)
        self.g0_ = self.result_.g0
        self.g0_err_ = self.result_.g0_err
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return self.result_.predict(np.asarray(X, dtype=np.float64).reshape(-1))
