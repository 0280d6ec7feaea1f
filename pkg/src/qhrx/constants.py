"""Physical constants and a few derived helpers (SI units)."""

from scipy import constants as _c

PLANCK = _c.h
LIGHT_SPEED = _c.c
ELEMENTARY_CHARGE = _c.e

#: Default telecom wavelength in metres.
WAVELENGTH_M = 1550e-9


def photon_energy(wavelength: float = WAVELENGTH_M) -> float:
    """Energy of one photon in joules."""
    return PLANCK * LIGHT_SPEED / wavelength


def max_responsivity(wavelength: float = WAVELENGTH_M) -> float:
    """Responsivity of a unit-efficiency photodiode in A/W."""
    return ELEMENTARY_CHARGE * wavelength / (PLANCK * LIGHT_SPEED)
