"""Refractive indices and longitudinal wavevectors for a uniaxial crystal.

The fluorescence propagates as an o-ray, the pump as an e-ray in a crystal
whose optic axis is tilted by the cut angle theta from the propagation (z)
axis, in the x-z plane.  All functions work in SI units (angular frequency
in rad/s, wavevectors in rad/m) and accept either scalars or numpy arrays
for the spectral coordinates.

Material dispersion follows a Sellmeier form

    n^2(lam) = b0 + b1 / (lam^2 - c1) - b2 * lam^2        (lam in micrometers)

with coefficient sets loaded from JSON documents, so crystals other than the
shipped BBO can be substituted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.constants import c as C_LIGHT

from .errors import EvanescentMode, NoRealRoot, OutOfDispersionWindow

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SpectralPoint:
    """One plane-wave component: angular frequency and transverse wavevector.

    omega : rad/s, must be positive
    kx, ky : rad/m
    """

    omega: float
    kx: float = 0.0
    ky: float = 0.0

    def __post_init__(self):
        if not np.all(np.asarray(self.omega) > 0):
            raise ValueError("omega must be positive")


@dataclass(frozen=True)
class SellmeierSet:
    """Coefficients of n^2 = b0 + b1/(lam^2 - c1) - b2*lam^2, lam in um.

    Evaluation is restricted to [window_nm[0], window_nm[1]]; outside that
    range the fit is meaningless and an OutOfDispersionWindow is raised.
    """

    b0: float
    b1: float
    c1: float
    b2: float
    window_nm: tuple[float, float] = (180.0, 2600.0)

    def index_at_wavelength_um(self, lam_um):
        lam_um = np.asarray(lam_um, dtype=float)
        lam_nm = lam_um * 1e3
        lo, hi = self.window_nm
        if np.any(lam_nm < lo) or np.any(lam_nm > hi):
            bad = float(np.atleast_1d(lam_nm)[np.argmax((lam_nm < lo) | (lam_nm > hi))])
            raise OutOfDispersionWindow(
                f"wavelength {bad:.1f} nm outside Sellmeier window [{lo:.0f}, {hi:.0f}] nm"
            )
        lam2 = lam_um * lam_um
        n2 = self.b0 + self.b1 / (lam2 - self.c1) - self.b2 * lam2
        if np.any(n2 <= 1.0):
            raise OutOfDispersionWindow(
                "Sellmeier evaluation gave n^2 <= 1 inside the declared window"
            )
        return np.sqrt(n2)

    def index_at_omega(self, omega):
        lam_um = TWO_PI * C_LIGHT / np.asarray(omega, dtype=float) * 1e6
        return self.index_at_wavelength_um(lam_um)


@dataclass(frozen=True)
class CrystalSpec:
    """Crystal cut, length and material data.

    theta_cut : angle between optic axis and z [rad], in (0, pi/2)
    length : crystal length L [m]
    pump_center_omega : central pump angular frequency 2*omega0 [rad/s]
    """

    theta_cut: float
    length: float
    sellmeier_o: SellmeierSet
    sellmeier_e: SellmeierSet
    pump_center_omega: float
    name: str = "crystal"

    def __post_init__(self):
        if not 0.0 < self.theta_cut < np.pi / 2:
            raise ValueError("theta_cut must lie in (0, pi/2)")
        if self.length <= 0:
            raise ValueError("crystal length must be positive")
        if self.pump_center_omega <= 0:
            raise ValueError("pump_center_omega must be positive")


def load_material(source) -> dict:
    """Read a crystal material document (dict, path, or shipped name).

    The document carries {"name", "sellmeier_o", "sellmeier_e", "window_nm"}.
    Shipped materials live in parfluor/data; "bbo" resolves to the default
    beta-barium-borate coefficient sets.
    """
    if isinstance(source, dict):
        doc = source
    else:
        path = Path(source)
        if path.suffix == ".json" and path.exists():
            doc = json.loads(path.read_text())
        else:
            ref = resources.files("parfluor").joinpath(f"data/{str(source).lower()}.json")
            doc = json.loads(ref.read_text())
    window = tuple(doc.get("window_nm", (180.0, 2600.0)))
    for key in ("sellmeier_o", "sellmeier_e"):
        if key not in doc:
            raise KeyError(f"material document missing '{key}'")
    return {
        "name": doc.get("name", "crystal"),
        "sellmeier_o": SellmeierSet(**doc["sellmeier_o"], window_nm=window),
        "sellmeier_e": SellmeierSet(**doc["sellmeier_e"], window_nm=window),
    }


def make_crystal(theta_cut, length, pump_wavelength, material="bbo") -> CrystalSpec:
    """Build a CrystalSpec from cut angle [rad], length [m], pump vacuum
    wavelength [m] and a material document (see load_material)."""
    mat = load_material(material)
    return CrystalSpec(
        theta_cut=theta_cut,
        length=length,
        sellmeier_o=mat["sellmeier_o"],
        sellmeier_e=mat["sellmeier_e"],
        pump_center_omega=TWO_PI * C_LIGHT / pump_wavelength,
        name=mat["name"],
    )


def index_ordinary(omega, crystal: CrystalSpec):
    """Ordinary refractive index n_o at angular frequency omega [rad/s]."""
    return crystal.sellmeier_o.index_at_omega(omega)


def index_extraordinary_principal(omega, crystal: CrystalSpec):
    """Principal extraordinary index n_e (field along the optic axis)."""
    return crystal.sellmeier_e.index_at_omega(omega)


def index_extraordinary_effective(omega, crystal: CrystalSpec):
    """Effective e-ray index for on-axis propagation at the cut angle:
    1/n^2 = cos^2(theta)/n_o^2 + sin^2(theta)/n_e^2."""
    n_o = index_ordinary(omega, crystal)
    n_e = index_extraordinary_principal(omega, crystal)
    ct, st = np.cos(crystal.theta_cut), np.sin(crystal.theta_cut)
    return 1.0 / np.sqrt(ct * ct / (n_o * n_o) + st * st / (n_e * n_e))


def kz_signal_grid(omega, kx, ky, crystal: CrystalSpec, allow_evanescent=False):
    """o-ray longitudinal wavevector sqrt(n_o^2 w^2/c^2 - kx^2 - ky^2).

    Broadcasts over array inputs.  Evanescent components (negative radicand)
    raise EvanescentMode unless allow_evanescent is set, in which case they
    come back as NaN so callers can mask them.
    """
    omega = np.asarray(omega, dtype=float)
    n_o = index_ordinary(omega, crystal)
    radicand = (n_o * omega / C_LIGHT) ** 2 - np.asarray(kx) ** 2 - np.asarray(ky) ** 2
    if np.any(radicand < 0):
        if not allow_evanescent:
            raise EvanescentMode("transverse wavevector beyond the o-ray light cone")
        radicand = np.where(radicand < 0, np.nan, radicand)
    return np.sqrt(radicand)


def _pump_quadratic_coeffs(omega, kx, ky, crystal: CrystalSpec):
    """Coefficients (a2, a1, a0) of the e-ray dispersion relation viewed as a
    quadratic a2*kz^2 + a1*kz + a0 = 0 in the longitudinal wavevector.

    The optic axis lies in the x-z plane; the tilt sign is chosen so the
    pump walk-off slope d(kz)/d(kx) is negative at kx = ky = 0.
    """
    omega = np.asarray(omega, dtype=float)
    n_o = index_ordinary(omega, crystal)
    n_e = index_extraordinary_principal(omega, crystal)
    inv_ne2 = 1.0 / (n_e * n_e)
    inv_no2 = 1.0 / (n_o * n_o)
    ct, st = np.cos(crystal.theta_cut), np.sin(crystal.theta_cut)
    kx = np.asarray(kx, dtype=float)
    ky = np.asarray(ky, dtype=float)
    w2c2 = (omega / C_LIGHT) ** 2
    a2 = inv_ne2 * st * st + inv_no2 * ct * ct
    a1 = 2.0 * kx * ct * st * (inv_ne2 - inv_no2)
    a0 = inv_ne2 * kx * kx * ct * ct + inv_no2 * (kx * kx * st * st + ky * ky) - w2c2
    return a2, a1, a0


def kz_pump_grid(omega, kx, ky, crystal: CrystalSpec):
    """e-ray longitudinal wavevector: forward root of the dispersion quadratic.

    The forward root is the one continuously connected to +n_e(theta)*w/c at
    kx = ky = 0 (the larger of the two real roots).
    """
    a2, a1, a0 = _pump_quadratic_coeffs(omega, kx, ky, crystal)
    disc = a1 * a1 - 4.0 * a2 * a0
    if np.any(disc < 0):
        raise NoRealRoot("e-ray dispersion quadratic has no real root")
    return (-a1 + np.sqrt(disc)) / (2.0 * a2)


def pump_dispersion_residual(kz, omega, kx, ky, crystal: CrystalSpec):
    """Relative residual of the e-ray dispersion relation at a candidate kz.

    Zero (to rounding) when kz solves the relation; used for root checks.
    """
    a2, a1, a0 = _pump_quadratic_coeffs(omega, kx, ky, crystal)
    w2c2 = (np.asarray(omega, dtype=float) / C_LIGHT) ** 2
    return (a2 * kz * kz + a1 * kz + a0) / w2c2


def kz_signal(kappa: SpectralPoint, crystal: CrystalSpec) -> float:
    """o-ray k_z for a single fluorescence plane-wave component."""
    return float(kz_signal_grid(kappa.omega, kappa.kx, kappa.ky, crystal))


def kz_pump(kappa_p: SpectralPoint, crystal: CrystalSpec) -> float:
    """e-ray k_z for a single pump plane-wave component."""
    return float(kz_pump_grid(kappa_p.omega, kappa_p.kx, kappa_p.ky, crystal))


def _kz_of_ray(ray: str):
    if ray == "signal":
        return kz_signal_grid
    if ray == "pump":
        return kz_pump_grid
    raise ValueError(f"unknown ray {ray!r}, expected 'signal' or 'pump'")


def _richardson(f, x0, h):
    """Central difference with one Richardson extrapolation step, O(h^4)."""

    def central(step):
        return (f(x0 + step) - f(x0 - step)) / (2.0 * step)

    return (4.0 * central(h / 2.0) - central(h)) / 3.0


def d_kz_d_omega(ray: str, kappa: SpectralPoint, crystal: CrystalSpec,
                 rel_step: float = 1e-6) -> float:
    """Group slowness d(kz)/d(omega) [s/m] by Richardson-extrapolated
    central differences with relative step rel_step of omega."""
    kz = _kz_of_ray(ray)
    h = rel_step * kappa.omega
    return float(_richardson(lambda w: kz(w, kappa.kx, kappa.ky, crystal), kappa.omega, h))


def d_kz_d_ktrans(ray: str, axis: str, kappa: SpectralPoint, crystal: CrystalSpec,
                  rel_step: float = 1e-6) -> float:
    """Walk-off slope d(kz)/d(k_axis) (dimensionless), axis in {'x', 'y'}.

    The finite-difference step is scaled to the light-cone wavevector
    n_o(omega)*omega/c so it stays meaningful at k = 0.
    """
    if axis not in ("x", "y"):
        raise ValueError(f"unknown axis {axis!r}, expected 'x' or 'y'")
    kz = _kz_of_ray(ray)
    scale = float(index_ordinary(kappa.omega, crystal)) * kappa.omega / C_LIGHT
    h = rel_step * scale
    if axis == "x":
        f = lambda k: kz(kappa.omega, k, kappa.ky, crystal)
        x0 = kappa.kx
    else:
        f = lambda k: kz(kappa.omega, kappa.kx, k, crystal)
        x0 = kappa.ky
    return float(_richardson(f, x0, h))
