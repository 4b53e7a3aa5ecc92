"""Wavelength-sampled intensity arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_grid, check_samples


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Intensity sampled on a strictly increasing wavelength grid (nm)."""

    wavelength_nm: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        grid = check_grid(self.wavelength_nm)
        values = check_samples(self.intensity, grid, "intensity")
        grid.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "wavelength_nm", grid)
        object.__setattr__(self, "intensity", values)

    def __len__(self):
        return int(self.wavelength_nm.size)


@dataclass(frozen=True, eq=False)
class TransmissionTrace:
    """Taper transmission versus wavelength, optionally with its reference scan."""

    wavelength_nm: np.ndarray
    transmission: np.ndarray
    reference: np.ndarray | None = None

    def __post_init__(self):
        grid = check_grid(self.wavelength_nm)
        values = check_samples(self.transmission, grid, "transmission")
        grid.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "wavelength_nm", grid)
        object.__setattr__(self, "transmission", values)
        if self.reference is not None:
            ref = check_samples(self.reference, grid, "reference")
            ref.flags.writeable = False
            object.__setattr__(self, "reference", ref)

    def __len__(self):
        return int(self.wavelength_nm.size)

    def window(self, lo_nm, hi_nm):
        """Sub-trace with ``lo_nm <= wavelength <= hi_nm``."""
        mask = (self.wavelength_nm >= lo_nm) & (self.wavelength_nm <= hi_nm)
        ref = None if self.reference is None else self.reference[mask]
        return TransmissionTrace(self.wavelength_nm[mask], self.transmission[mask], ref)
