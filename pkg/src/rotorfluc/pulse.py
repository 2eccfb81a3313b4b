"""Molecular constants, unit conversions and the Gaussian pump envelope.

Internally everything is in atomic units (hbar = 1, energies in hartree).  The
public types keep laboratory units (cm^-1, Angstrom^3, K, W/cm^2, ps) and expose
converted values as properties.  Public time arguments are in picoseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants as sc

HARTREE_PER_CM1 = 1.0 / (sc.physical_constants["hartree-inverse meter relationship"][0] / 100.0)
AU_TIME_PS = sc.physical_constants["atomic unit of time"][0] * 1e12
BOHR_A = sc.physical_constants["Bohr radius"][0] * 1e10
HARTREE_PER_K = sc.physical_constants["kelvin-hartree relationship"][0]
# hartree / (bohr^2 * atomic time), expressed in W/cm^2
AU_INTENSITY_WCM2 = (
    sc.physical_constants["Hartree energy"][0]
    / (sc.physical_constants["Bohr radius"][0] ** 2 * sc.physical_constants["atomic unit of time"][0])
    / 1e4
)
FINE_STRUCTURE = sc.fine_structure

DEFAULT_REVIVAL_PS = 210.0


def cm1_to_hartree(x):
    return x * HARTREE_PER_CM1


def hartree_to_cm1(x):
    return x / HARTREE_PER_CM1


def ps_to_au(t):
    return t / AU_TIME_PS


def au_to_ps(t):
    return t * AU_TIME_PS


def wcm2_to_au(i):
    return i / AU_INTENSITY_WCM2


def au_to_wcm2(i):
    return i * AU_INTENSITY_WCM2


def a3_to_au(v):
    return v / BOHR_A**3


def au_to_a3(v):
    return v * BOHR_A**3


def kelvin_to_hartree(T):
    return T * HARTREE_PER_K


def rotational_constant_from_revival(revival_ps: float = DEFAULT_REVIVAL_PS) -> float:
    """Rotational constant in cm^-1 such that ``pi hbar / B`` equals `revival_ps`."""
    return hartree_to_cm1(math.pi / ps_to_au(revival_ps))


DEFAULT_B_CM1 = rotational_constant_from_revival()


def _check_finite(**values):
    for name, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class MoleculeSpec:
    """Linear rigid rotor: rotational constant, polarizability anisotropy, temperature."""

    B_cm1: float = DEFAULT_B_CM1
    delta_alpha_A3: float = 6.0
    temperature_K: float = 0.5

    def __post_init__(self):
        _check_finite(B_cm1=self.B_cm1, delta_alpha_A3=self.delta_alpha_A3, temperature_K=self.temperature_K)
        if self.B_cm1 <= 0:
            raise ValueError("B_cm1 must be positive")
        if self.temperature_K < 0:
            raise ValueError("temperature_K must be non-negative")

    @property
    def B(self) -> float:
        return cm1_to_hartree(self.B_cm1)

    @property
    def delta_alpha(self) -> float:
        return a3_to_au(self.delta_alpha_A3)

    @property
    def kT(self) -> float:
        return kelvin_to_hartree(self.temperature_K)

    @property
    def moment_of_inertia(self) -> float:
        return 1.0 / (2.0 * self.B)

    @property
    def revival_time(self) -> float:
        """``pi hbar / B`` in atomic units of time."""
        return math.pi / self.B

    @property
    def revival_time_ps(self) -> float:
        return au_to_ps(self.revival_time)


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian intensity envelope, hard-truncated at ``center +- window``."""

    Imax_Wcm2: float
    fwhm_ps: float
    center_ps: float = 0.0
    window_factor: float = 2.5

    def __post_init__(self):
        _check_finite(
            Imax_Wcm2=self.Imax_Wcm2, fwhm_ps=self.fwhm_ps,
            center_ps=self.center_ps, window_factor=self.window_factor,
        )
        if self.Imax_Wcm2 < 0:
            raise ValueError("Imax_Wcm2 must be non-negative")
        if self.fwhm_ps <= 0:
            raise ValueError("fwhm_ps must be positive")
        if self.window_factor < 2.0:
            raise ValueError("window must be at least twice the FWHM")

    @property
    def window_ps(self) -> float:
        return self.window_factor * self.fwhm_ps

    @property
    def start_ps(self) -> float:
        return self.center_ps - self.window_ps

    @property
    def stop_ps(self) -> float:
        return self.center_ps + self.window_ps

    @property
    def fluence_integral_ps(self) -> float:
        """Integral of I(t)/I_max over the untruncated Gaussian, in ps."""
        return self.fwhm_ps * math.sqrt(math.pi / (4.0 * math.log(2.0)))


def intensity(pulse: PulseSpec, t_ps):
    """Cycle-averaged intensity in W/cm^2 at time(s) `t_ps`."""
    t = np.asarray(t_ps, dtype=float)
    x = (t - pulse.center_ps) / pulse.fwhm_ps
    out = pulse.Imax_Wcm2 * np.exp(-4.0 * math.log(2.0) * x * x)
    out = np.where(np.abs(t - pulse.center_ps) <= pulse.window_ps, out, 0.0)
    return out if out.ndim else float(out)


def coupling_strength(molecule: MoleculeSpec, pulse: PulseSpec, t_ps):
    """Coupling ``k(t) = 2 pi alpha I(t) delta_alpha`` in hartree.

    The interaction is ``H_int = -k(t) (cos^2 theta - 1/3)``.
    """
    return 2.0 * math.pi * FINE_STRUCTURE * wcm2_to_au(intensity(pulse, t_ps)) * molecule.delta_alpha


def peak_coupling(molecule: MoleculeSpec, pulse: PulseSpec) -> float:
    return 2.0 * math.pi * FINE_STRUCTURE * wcm2_to_au(pulse.Imax_Wcm2) * molecule.delta_alpha


def kick_strength(molecule: MoleculeSpec, pulse: PulseSpec) -> float:
    """Dimensionless kick ``integral k(t) dt / hbar`` of the full Gaussian."""
    return peak_coupling(molecule, pulse) * ps_to_au(pulse.fluence_integral_ps)
