"""Photon-correlation and whispering-gallery-mode analysis toolkit."""

__version__ = "0.1.0"

from .streams import PhotonStream  # noqa: E402
from .spectra import Spectrum, TransmissionTrace  # noqa: E402
from .synth import (  # noqa: E402
    EmitterModel,
    PulseTrain,
    simulate_cw,
    simulate_pulsed,
    synth_modulated_spectrum,
    synth_transmission,
)
from .correlator import (  # noqa: E402
    CorrelationCurve,
    CorrelationHistogram,
    Correlator,
    cross_correlate,
    normalize,
    rebin_to_periods,
    start_stop_correction,
)
from .g2 import (  # noqa: E402
    AntibunchingModel,
    BackgroundCorrector,
    BackgroundMix,
    FitError,
    cw_correct,
    fit_antibunching,
    propagate_error,
    pulsed_correct,
)
from .wgm import (  # noqa: E402
    LorentzianDipModel,
    ResonatorGeometry,
    SegmentedFourier,
    find_dips,
    fit_dip,
    fsr_geometric,
    normalize_transmission,
    segmented_fourier,
)

__all__ = [
    "PhotonStream", "Spectrum", "TransmissionTrace",
    "EmitterModel", "PulseTrain", "simulate_cw", "simulate_pulsed",
    "synth_transmission", "synth_modulated_spectrum",
    "CorrelationCurve", "CorrelationHistogram", "Correlator",
    "cross_correlate", "normalize", "rebin_to_periods", "start_stop_correction",
    "BackgroundMix", "BackgroundCorrector", "AntibunchingModel", "FitError",
    "cw_correct", "pulsed_correct", "propagate_error", "fit_antibunching",
    "LorentzianDipModel", "ResonatorGeometry", "SegmentedFourier",
    "find_dips", "fit_dip", "fsr_geometric", "normalize_transmission", "segmented_fourier",
]
