"""Atomic species and trap parameters shared by the collision and loading models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as sc

HBAR = sc.hbar
H = sc.h
KB = sc.k
EPS0 = sc.epsilon_0
MU_B = sc.physical_constants["Bohr magneton"][0]
AMU = sc.atomic_mass
TWOPI = 2.0 * np.pi


@dataclass(frozen=True)
class AtomicSpecies:
    """Two-level data of the collision transition.

    The dipole moment and saturation intensity are derived from the
    linewidth and wavelength, so they always agree with each other.
    """

    mass: float
    transition_linewidth: float  # rad/s
    transition_wavelength: float  # m
    excited_gJ: float

    def __post_init__(self):
        for name in ("mass", "transition_linewidth", "transition_wavelength", "excited_gJ"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def dipole_moment(self) -> float:
        """Reduced dipole moment d with d^2 = 3 pi eps0 hbar Gamma (lambda / 2 pi)^3."""
        lam_bar = self.transition_wavelength / TWOPI
        return float(np.sqrt(3.0 * np.pi * EPS0 * HBAR * self.transition_linewidth * lam_bar**3))

    @property
    def saturation_intensity(self) -> float:
        """Two-level saturation intensity pi h c Gamma / (3 lambda^3), in W/m^2."""
        lam = self.transition_wavelength
        return float(np.pi * H * sc.c * self.transition_linewidth / (3.0 * lam**3))

    @property
    def c3(self) -> float:
        """Dipole-dipole coefficient d^2 / (4 pi eps0), in J m^3."""
        return self.dipole_moment**2 / (4.0 * np.pi * EPS0)


# 1S0 -> 3P1 intercombination line of 174Yb
YB174 = AtomicSpecies(
    mass=173.9388664 * AMU,
    transition_linewidth=TWOPI * 182.4e3,
    transition_wavelength=555.802e-9,
    excited_gJ=1.493,
)


@dataclass(frozen=True)
class TrapConfig:
    depth_hz: float = 3.6e6
    temperature: float = 5e-6
    wavelength: float = 532e-9
    spacing: float = 2.8e-6
    trap_frequency_hz: float | None = None

    def __post_init__(self):
        if not self.depth_hz > 0:
            raise ValueError("trap depth must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
