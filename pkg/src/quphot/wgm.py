"""Whispering-gallery-mode spectroscopy: transmission dips, Q, FSR, mode maps."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks, peak_widths
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_grid, check_samples, is_uniform
from .g2 import FitError
from .spectra import Spectrum, TransmissionTrace

_DIP_PARAMS = ("center_nm", "fwhm_nm", "depth_abs", "offset", "slope_per_nm")


class LowConfidenceWarning(UserWarning):
    """A fitted linewidth spans fewer than three grid steps."""


def normalize_transmission(coupled, reference=None):
    """Divide the coupled-taper scan by the uncoupled reference scan.

    `reference` defaults to ``coupled.reference``.
    """
    if reference is None:
        if coupled.reference is None:
            raise ValueError("no reference scan given")
        ref_grid, ref = coupled.wavelength_nm, coupled.reference
    else:
        ref_grid, ref = reference.wavelength_nm, reference.transmission
    if ref_grid.shape != coupled.wavelength_nm.shape or not np.array_equal(
            ref_grid, coupled.wavelength_nm):
        raise ValueError("coupled and reference scans are on different wavelength grids")
    if np.any(ref <= 0):
        bad = int(np.argmax(ref <= 0))
        raise ValueError(f"reference is not strictly positive (sample {bad} = {ref[bad]})")
    return TransmissionTrace(coupled.wavelength_nm, coupled.transmission / ref)


# -- Lorentzian dip fit -----------------------------------------------------

def dip_model(wavelength_nm, center_nm, fwhm_nm, depth_abs, offset, slope_per_nm):
    """``offset + slope (x - x0) - depth * (w/2)**2 / ((x - x0)**2 + (w/2)**2)``."""
    x = np.asarray(wavelength_nm, dtype=np.float64) - center_nm
    half = 0.5 * fwhm_nm
    return offset + slope_per_nm * x - depth_abs * half**2 / (x * x + half**2)


def _dip_jacobian(u, p):
    x = u - p[0]
    half = 0.5 * p[1]
    den = x * x + half**2
    depth, slope = p[2], p[4]
    return np.column_stack([
        -slope - depth * 2 * x * half**2 / den**2,
        -depth * half * x * x / den**2,
        -(half**2) / den,
        np.ones_like(u),
        x,
    ])


def _dip_guess(u, y):
    n = max(2, u.size // 10)
    ends = np.r_[0:n, u.size - n:u.size]
    slope, offset = np.polyfit(u[ends], y[ends], 1)
    resid = offset + slope * u - y
    k = int(np.argmax(resid))
    depth = float(resid[k])
    inside = resid >= 0.5 * depth
    lo = k
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = k
    while hi < u.size - 1 and inside[hi + 1]:
        hi += 1
    step = float(np.median(np.diff(u)))
    fwhm = max((hi - lo + 1) * step, 2 * step)
    return np.array([u[k], fwhm, depth, offset + slope * u[k], slope])


@dataclass(frozen=True)
class ResonanceFit:
    """Lorentzian dip parameters; ``q = center_nm / fwhm_nm`` (loaded Q)."""

    center_nm: float
    fwhm_nm: float
    depth: float
    offset: float
    slope_per_nm: float
    q: float
    stderr: dict
    window_nm: tuple
    low_confidence: bool = False
    chi2_dof: float = float("nan")
    residuals: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def q_err(self):
        return self.q * np.hypot(self.stderr["center_nm"] / self.center_nm,
                                 self.stderr["fwhm_nm"] / self.fwhm_nm)

    def predict(self, wavelength_nm):
        return dip_model(wavelength_nm, self.center_nm, self.fwhm_nm, self.depth * self.offset,
                         self.offset, self.slope_per_nm)


def fit_dip(trace, window=None, init=None):
    """Fit one Lorentzian dip on a linear baseline inside ``window = (lo, hi)`` nm.

    `init` optionally gives ``(center_nm, fwhm_nm, depth_abs, offset,
    slope_per_nm)``. A linewidth below three grid steps is fitted anyway but
    flagged ``low_confidence`` with a :class:`LowConfidenceWarning`.
    """
    grid, values = trace.wavelength_nm, trace.transmission
    if window is None:
        window = (grid[0], grid[-1])
    lo, hi = (float(v) for v in window)
    mask = (grid >= lo) & (grid <= hi)
    if mask.sum() < 15:
        raise ValueError(f"fit window [{lo}, {hi}] nm holds {mask.sum()} samples; need >= 15")
    ref = 0.5 * (lo + hi)
    u = grid[mask] - ref
    y = values[mask]
    if init is None:
        p0 = _dip_guess(u, y)
    else:
        p0 = np.array(init, dtype=np.float64)
        p0[0] -= ref

    res = least_squares(lambda p: dip_model(u, *p) - y, p0,
                        jac=lambda p: _dip_jacobian(u, p), method="lm", x_scale="jac",
                        max_nfev=200 * p0.size)
    if not res.success:
        raise FitError(f"dip fit did not converge: {res.message}", float(np.linalg.norm(res.fun)))
    p = res.x.copy()
    p[1] = abs(p[1])
    dof = max(u.size - p.size, 1)
    chi2 = float(np.sum(res.fun**2)) / dof
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * chi2
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(res.jac.T @ res.jac) * chi2
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    center = p[0] + ref
    if not lo <= center <= hi:
        raise FitError(f"fitted center {center:.6f} nm lies outside the window [{lo}, {hi}]",
                       float(np.linalg.norm(res.fun)))
    if p[2] <= 0 or p[3] <= 0:
        raise FitError("fit converged to a peak or a non-positive baseline, not a dip",
                       float(np.linalg.norm(res.fun)))
    step = float(np.median(np.diff(grid[mask])))
    low = bool(p[1] < 3 * step)
    if low:
        warnings.warn(f"FWHM {p[1]:.4g} nm spans fewer than 3 grid steps ({step:.4g} nm)",
                      LowConfidenceWarning, stacklevel=2)
    stderr = dict(zip(_DIP_PARAMS, map(float, err)))
    return ResonanceFit(float(center), float(p[1]), float(p[2] / p[3]), float(p[3]), float(p[4]),
                        float(center / p[1]), stderr, (lo, hi), low, chi2, res.fun.copy())


class LorentzianDipModel(BaseEstimator, RegressorMixin):
    """Estimator form of :func:`fit_dip`; ``X`` is the wavelength grid in nm."""

    def __init__(self, window=None, init=None):
        self.window = window
        self.init = init

    def fit(self, X, y):
        grid = check_grid(np.asarray(X, dtype=np.float64).reshape(-1))
        trace = TransmissionTrace(grid, check_samples(y, grid, "transmission"))
        self.result_ = fit_dip(trace, self.window, self.init)
        self.q_ = self.result_.q
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return self.result_.predict(np.asarray(X, dtype=np.float64).reshape(-1))


# -- dip search --------------------------------------------------------------

@dataclass(frozen=True)
class DipWindow:
    lo_nm: float
    hi_nm: float
    center_nm: float
    fwhm_nm: float
    merged: bool = False

    def __iter__(self):
        return iter((self.lo_nm, self.hi_nm))


# Width at half depth over width at a quarter depth is sqrt(3) for one
# Lorentzian; flatter bottoms (unresolved doublets) fall well below it.
_SHAPE_RATIO = np.sqrt(3.0)
_SHAPE_TOLERANCE = 0.85


def find_dips(trace, prominence=0.05, *, half_width=5.0):
    """Candidate fit windows around dips deeper than `prominence`.

    Each local minimum below ``1 - prominence`` becomes a window of
    ``half_width`` estimated linewidths on either side. Minima closer than
    one linewidth, and single minima whose profile is too flat-bottomed for
    a Lorentzian, are reported as one window with ``merged=True``.
    """
    grid, y = trace.wavelength_nm, trace.transmission
    peaks, _ = find_peaks(-y, height=-(1.0 - prominence), prominence=0.5 * prominence)
    if peaks.size == 0:
        return []
    step = np.gradient(grid)
    half = peak_widths(-y, peaks, rel_height=0.5)[0]
    quarter = peak_widths(-y, peaks, rel_height=0.25)[0]
    centers = []
    for k, idx in enumerate(peaks):
        # Parabolic refinement of the sampled minimum.
        c = grid[idx]
        if 0 < idx < y.size - 1:
            y0, y1, y2 = y[idx - 1], y[idx], y[idx + 1]
            curv = y0 - 2 * y1 + y2
            if curv > 0:
                c += 0.5 * (y0 - y2) / curv * step[idx]
        centers.append(c)
    fwhm = half * step[peaks]
    flat = half / np.maximum(quarter, 1e-12) < _SHAPE_TOLERANCE * _SHAPE_RATIO

    groups = [[0]]
    for k in range(1, peaks.size):
        prev = groups[-1][-1]
        if centers[k] - centers[prev] < max(fwhm[k], fwhm[prev]):
            groups[-1].append(k)
        else:
            groups.append([k])
    windows = []
    for g in groups:
        c = float(np.mean([centers[k] for k in g]))
        lo_edge = min(centers[k] - fwhm[k] / 2 for k in g)
        hi_edge = max(centers[k] + fwhm[k] / 2 for k in g)
        width = float(max(hi_edge - lo_edge, max(fwhm[k] for k in g)))
        if len(g) == 1:
            width = float(fwhm[g[0]])
        merged = len(g) > 1 or bool(flat[g[0]])
        windows.append(DipWindow(max(grid[0], c - half_width * width),
                                 min(grid[-1], c + half_width * width), c, width, merged))
    return windows


# -- free spectral range -----------------------------------------------------

@dataclass(frozen=True)
class ResonatorGeometry:
    diameter_um: float
    refractive_index: float = 1.5

    def __post_init__(self):
        if not self.diameter_um > 0:
            raise ValueError(f"diameter must be > 0, got {self.diameter_um}")
        if not self.refractive_index >= 1:
            raise ValueError(f"refractive index must be >= 1, got {self.refractive_index}")


def fsr_geometric(geometry, wavelength_nm):
    """Free spectral range ``lambda**2 / (n pi D)`` of a disc, in nm."""
    lam = np.asarray(wavelength_nm, dtype=np.float64)
    fsr = lam**2 / (geometry.refractive_index * np.pi * geometry.diameter_um * 1e3)
    return float(fsr) if fsr.ndim == 0 else fsr


# -- segmented Fourier mode maps ---------------------------------------------

@dataclass(frozen=True, eq=False)
class BandTrack:
    """One Fourier band followed across segments.

    The fit assumes the FSR scales with lambda**2, so the band frequency is
    ``coefficient / lambda**2``; ``coefficient`` is in nm.
    """

    order: int
    segment_centers_nm: np.ndarray
    frequencies_inv_nm: np.ndarray
    coefficient_nm: float

    def frequency_at(self, wavelength_nm):
        return self.coefficient_nm / np.asarray(wavelength_nm, dtype=np.float64) ** 2

    def fsr_at(self, wavelength_nm):
        """Local FSR implied by this track (``order / frequency``)."""
        return self.order / self.frequency_at(wavelength_nm)


@dataclass(frozen=True, eq=False)
class ModeStructureMap:
    """Segment-normalized Fourier amplitudes, shape ``(n_freq, n_segments)``."""

    segment_centers_nm: np.ndarray
    frequencies_inv_nm: np.ndarray
    amplitude: np.ndarray
    frequency_bin_inv_nm: float
    tracks: list
    noise_floor: np.ndarray  # median relative modulation depth per segment
    raw_peak: np.ndarray

    def track(self, order):
        for t in self.tracks:
            if t.order == order:
                return t
        raise KeyError(f"no track of order {order}")


def _segment_starts(lo, hi, width, overlap):
    step = width * (1.0 - overlap)
    starts = []
    s = lo
    while s + width <= hi + 1e-9 * width:
        starts.append(s)
        s += step
    return np.array(starts)


def _refine_peak(mag, k):
    if 0 < k < mag.size - 1:
        a, b, c = mag[k - 1], mag[k], mag[k + 1]
        curv = a - 2 * b + c
        if curv < 0:
            return k + 0.5 * (a - c) / curv
    return float(k)


def segmented_fourier(spectrum, segment_width_nm=25.0, overlap_fraction=0.5, *, zero_pad=8,
                      detrend_degree=2, snr=5.0, min_modulation=0.005, min_relative=0.05,
                      min_cycles=2.0, max_order=4):
    """Windowed FFT of each wavelength segment, normalized per segment.

    Every segment has a polynomial trend of `detrend_degree` removed and is
    Hann windowed before the FFT. Amplitudes in the map are divided by the
    segment's largest non-DC value.

    For band detection each spectrum is expressed as relative modulation
    depth (a cosine of contrast c on the segment mean reads c). A local
    maximum counts as a band if it exceeds `snr` times the segment's median,
    `min_modulation`, and `min_relative` of the strongest band; frequencies
    with fewer than `min_cycles` periods per segment are ignored. The lowest
    band is the base band (1/FSR); bands within one frequency bin of its
    integer multiples form the harmonic tracks.
    """
    grid, values = spectrum.wavelength_nm, spectrum.intensity
    if not is_uniform(grid):
        uniform = np.linspace(grid[0], grid[-1], grid.size)
        values = np.interp(uniform, grid, values)
        grid = uniform
    step = float(grid[1] - grid[0])
    span = grid[-1] - grid[0]
    if segment_width_nm > span:
        raise ValueError(f"segment width {segment_width_nm} nm exceeds the spectrum span {span:.6g} nm")
    if not 0 <= overlap_fraction < 1:
        raise ValueError("overlap_fraction must lie in [0, 1)")
    n_seg = int(round(segment_width_nm / step))
    if n_seg < 20:
        raise ValueError(f"segment spans {n_seg} grid steps; need >= 20")
    n_fft = int(zero_pad) * n_seg
    freqs = np.fft.rfftfreq(n_fft, d=step)
    bin_width = 1.0 / (n_seg * step)
    window = np.hanning(n_seg)
    first = int(np.ceil(min_cycles * n_fft / n_seg))

    starts = _segment_starts(grid[0], grid[-1], n_seg * step, overlap_fraction)
    centers, columns, floors, peaks_raw, detections = [], [], [], [], []
    for s in starts:
        i0 = int(round((s - grid[0]) / step))
        seg_x = grid[i0:i0 + n_seg]
        seg = values[i0:i0 + n_seg]
        if seg.size < n_seg:
            break
        xc = seg_x - seg_x.mean()
        trend = np.polyval(np.polyfit(xc, seg, detrend_degree), xc)
        mag = np.abs(np.fft.rfft((seg - trend) * window, n=n_fft))
        top = mag[1:].max()
        columns.append(mag / top if top > 0 else mag)
        centers.append(float(seg_x.mean()))
        level = abs(float(seg.mean()))
        depth = 2 * mag / (level * window.sum()) if level > 0 else mag
        region = depth[first:]
        floor = float(np.median(region))
        floors.append(floor)
        peaks_raw.append(float(top))
        strongest = region.max()
        height = max(snr * floor, min_modulation, min_relative * strongest)
        idx, _ = find_peaks(region, height=height)
        detections.append([freqs[1] * _refine_peak(mag, k + first) for k in idx])

    centers = np.array(centers)
    tracks = _build_tracks(centers, detections, bin_width, max_order)
    return ModeStructureMap(centers, freqs, np.column_stack(columns), bin_width, tracks,
                            np.array(floors), np.array(peaks_raw))


def _fit_coefficient(lam, f):
    w = 1.0 / lam**2
    return float(np.sum(f * w) / np.sum(w * w))


def _build_tracks(centers, detections, bin_width, max_order):
    base = [(c, d[0]) for c, d in zip(centers, detections) if d]
    if not base:
        return []
    lam = np.array([c for c, _ in base])
    f1 = np.array([f for _, f in base])
    tracks = [BandTrack(1, lam, f1, _fit_coefficient(lam, f1))]
    for order in range(2, max_order + 1):
        pts = []
        for c, d in zip(centers, detections):
            if not d:
                continue
            target = order * d[0]
            near = [f for f in d[1:] if abs(f - target) <= bin_width]
            if near:
                pts.append((c, min(near, key=lambda f: abs(f - target))))
        if pts:
            lam_k = np.array([c for c, _ in pts])
            f_k = np.array([f for _, f in pts])
            tracks.append(BandTrack(order, lam_k, f_k, _fit_coefficient(lam_k, f_k)))
    return tracks


class SegmentedFourier(BaseEstimator, TransformerMixin):
    """Estimator form of :func:`segmented_fourier`.

    ``fit(X, y)`` takes the wavelength grid and intensities (or a
    :class:`Spectrum` as ``X``); ``transform`` returns the normalized
    amplitude matrix of new data on the fitted segmentation settings.
    """

    def __init__(self, segment_width_nm=25.0, overlap_fraction=0.5, zero_pad=8, snr=5.0):
        self.segment_width_nm = segment_width_nm
        self.overlap_fraction = overlap_fraction
        self.zero_pad = zero_pad
        self.snr = snr

    def _spectrum(self, X, y):
        if isinstance(X, Spectrum):
            return X
        return Spectrum(np.asarray(X, dtype=np.float64).reshape(-1), y)

    def fit(self, X, y=None):
        self.map_ = segmented_fourier(self._spectrum(X, y), self.segment_width_nm,
                                      self.overlap_fraction, zero_pad=self.zero_pad, snr=self.snr)
        self.tracks_ = self.map_.tracks
        return self

    def transform(self, X, y=None):
        check_is_fitted(self, "map_")
        return segmented_fourier(self._spectrum(X, y), self.segment_width_nm,
                                 self.overlap_fraction, zero_pad=self.zero_pad,
                                 snr=self.snr).amplitude

    def fit_transform(self, X, y=None):
        return self.fit(X, y).map_.amplitude
