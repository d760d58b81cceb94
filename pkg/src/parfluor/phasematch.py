"""Phase mismatch, the perfectly matched emission surface, and its linearization.

A signal component kappa = (w, kx, ky) and an idler component kappa' pair with
the pump component at kappa + kappa'.  Their longitudinal wavevector mismatch

    dk(kappa, kappa') = k_pz(kappa + kappa') - k_z(kappa) - k_z(kappa')

controls how efficiently the pair is generated.  For the central pump
component the mismatch vanishes on an axially symmetric surface
|k_perp| = k0(w); this module solves for that surface, converts transverse
wavevectors to exterior observation angles, and expands the mismatch to first
order around points on the surface (group-slowness and walk-off differences).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.optimize import brentq

from . import dispersion as dm
from .errors import NoPhaseMatch, TotalInternalReflection

log = logging.getLogger(__name__)

SCAN_POINTS = 512
ROOT_TOL = 1e-3  # rad/m; dk*L stays far below the sinc width for mm crystals


@dataclass(frozen=True)
class PhaseMatchPoint:
    """Transverse wavevector magnitude k0 [rad/m] at which the mismatch
    vanishes for observation frequency omega_obs [rad/s]."""

    omega_obs: float
    k0: float


@dataclass(frozen=True)
class LinearizedCoeffs:
    """First-order expansion coefficients of the mismatch around the matched
    point at omega_obs.

    d_beta1   : pump-idler inverse-group-velocity difference [s/m]
    d_rho_x/y : pump-signal walk-off differences (dimensionless)
    d_rho_px/py : pump-idler walk-off differences (dimensionless)
    omega_idler : matched idler frequency 2*omega0 - omega_obs [rad/s]
    """

    omega_obs: float
    omega_idler: float
    k0: float
    d_beta1: float
    d_rho_x: float
    d_rho_y: float
    d_rho_px: float
    d_rho_py: float


def delta_k(kappa: dm.SpectralPoint, kappa_prime: dm.SpectralPoint,
            crystal: dm.CrystalSpec) -> float:
    """Wavevector mismatch of the pair (kappa, kappa') with its pump component."""
    pump = dm.SpectralPoint(kappa.omega + kappa_prime.omega,
                            kappa.kx + kappa_prime.kx,
                            kappa.ky + kappa_prime.ky)
    return (dm.kz_pump(pump, crystal)
            - dm.kz_signal(kappa, crystal)
            - dm.kz_signal(kappa_prime, crystal))


def _mismatch_on_ring(k, omega_obs, crystal):
    """dk for the symmetric pair ((w, k, 0), (2w0 - w, -k, 0))."""
    omega_idler = crystal.pump_center_omega - omega_obs
    kz_p = dm.kz_pump_grid(crystal.pump_center_omega, 0.0, 0.0, crystal)
    kz_s = dm.kz_signal_grid(omega_obs, k, 0.0, crystal)
    kz_i = dm.kz_signal_grid(omega_idler, k, 0.0, crystal)
    return kz_p - kz_s - kz_i


def perfect_curve(omega_obs: float, crystal: dm.CrystalSpec) -> PhaseMatchPoint | None:
    """Solve dk = 0 for the transverse wavevector at omega_obs.

    Scans k in [0, k_max] (k_max the light-cone bound of the lower-frequency
    photon of the pair) for sign changes, then bisects the first bracket to
    |dk| < 1 mrad/m.  Returns None when no sign change exists; with multiple
    sign changes the smallest root is returned and the rest are logged.
    """
    omega_idler = crystal.pump_center_omega - omega_obs
    omega_lo = min(omega_obs, omega_idler)
    k_max = float(dm.index_ordinary(omega_lo, crystal)) * omega_lo / C_LIGHT
    ks = np.linspace(0.0, k_max, SCAN_POINTS)
    f = _mismatch_on_ring(ks, omega_obs, crystal)

    exact = np.flatnonzero(np.abs(f) <= ROOT_TOL)
    sign_change = np.flatnonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)
    candidates = []
    if exact.size:
        candidates.append(("exact", exact[0]))
    if sign_change.size:
        candidates.append(("bracket", sign_change[0]))
    if not candidates:
        return None
    kind, idx = min(candidates, key=lambda item: item[1])

    if kind == "exact":
        k_root = float(ks[idx])
    else:
        k_root = brentq(lambda k: float(_mismatch_on_ring(k, omega_obs, crystal)),
                        ks[idx], ks[idx + 1], xtol=1e-6, rtol=8.9e-16)
    residual = float(_mismatch_on_ring(k_root, omega_obs, crystal))
    if abs(residual) > ROOT_TOL:
        raise NoPhaseMatch(
            f"root refinement stalled, |dk| = {abs(residual):.3g} rad/m")
    if sign_change.size > 1:
        log.debug("multiple phase-matching roots at omega=%.6g, keeping smallest k",
                  omega_obs)
    return PhaseMatchPoint(omega_obs=omega_obs, k0=k_root)


def exterior_angle(omega_obs: float, k_trans: float) -> float:
    """Propagation angle [rad] outside the crystal after exit-face refraction."""
    ratio = C_LIGHT * k_trans / omega_obs
    if ratio > 1.0:
        raise TotalInternalReflection(
            f"c*k/omega = {ratio:.4f} > 1, component cannot leave the crystal")
    return float(np.arcsin(ratio))


def linearize(omega_obs: float, crystal: dm.CrystalSpec) -> LinearizedCoeffs:
    """Expansion coefficients of the mismatch at the matched point for omega_obs.

    Each coefficient is the difference of a pump derivative at the central
    pump component and a fluorescence derivative at the signal point
    (w, k0, 0) or the idler point (2w0 - w, -k0, 0).  Raises NoPhaseMatch when
    the matched point does not exist.
    """
    pm = perfect_curve(omega_obs, crystal)
    if pm is None:
        raise NoPhaseMatch(f"no matched transverse wavevector at omega={omega_obs:.6g}")
    kappa0 = dm.SpectralPoint(omega_obs, pm.k0, 0.0)
    kappa0p = dm.SpectralPoint(crystal.pump_center_omega - omega_obs, -pm.k0, 0.0)
    pump0 = dm.SpectralPoint(crystal.pump_center_omega, 0.0, 0.0)

    beta1_pump = dm.d_kz_d_omega("pump", pump0, crystal)
    rho_pump_x = dm.d_kz_d_ktrans("pump", "x", pump0, crystal)
    rho_pump_y = dm.d_kz_d_ktrans("pump", "y", pump0, crystal)

    return LinearizedCoeffs(
        omega_obs=omega_obs,
        omega_idler=kappa0p.omega,
        k0=pm.k0,
        d_beta1=beta1_pump - dm.d_kz_d_omega("signal", kappa0p, crystal),
        d_rho_x=rho_pump_x - dm.d_kz_d_ktrans("signal", "x", kappa0, crystal),
        d_rho_y=rho_pump_y - dm.d_kz_d_ktrans("signal", "y", kappa0, crystal),
        d_rho_px=rho_pump_x - dm.d_kz_d_ktrans("signal", "x", kappa0p, crystal),
        d_rho_py=rho_pump_y - dm.d_kz_d_ktrans("signal", "y", kappa0p, crystal),
    )


def delta_k_linearized(coeffs: LinearizedCoeffs, kx, ky, omega_prime, kxp, kyp):
    """First-order mismatch for a signal at (omega_obs, kx, ky) and an idler
    at (omega', kxp, kyp), absolute coordinates, broadcasting over arrays.

    Valid at the expansion signal frequency; the signal-frequency deviation
    carries no term here, so callers keep omega = omega_obs.
    """
    return (coeffs.d_beta1 * (np.asarray(omega_prime) - coeffs.omega_idler)
            + coeffs.d_rho_x * (np.asarray(kx) - coeffs.k0)
            + coeffs.d_rho_y * np.asarray(ky)
            + coeffs.d_rho_px * (np.asarray(kxp) + coeffs.k0)
            + coeffs.d_rho_py * np.asarray(kyp))


def scan_curve(lambda_lo_nm: float, lambda_hi_nm: float, n_points: int,
               crystal: dm.CrystalSpec):
    """Tabulate the matched surface over a wavelength grid [nm].

    Returns one row per grid wavelength: (lambda_nm, PhaseMatchPoint or None,
    exterior angle [rad] or None, LinearizedCoeffs or None).
    """
    rows = []
    for lam_nm in np.linspace(lambda_lo_nm, lambda_hi_nm, n_points):
        omega = 2.0 * np.pi * C_LIGHT / (lam_nm * 1e-9)
        pm = perfect_curve(omega, crystal)
        if pm is None:
            rows.append(ScanRow(lam_nm, None, None, None))
            continue
        alpha = exterior_angle(omega, pm.k0)
        coeffs = linearize(omega, crystal)
        rows.append(ScanRow(lam_nm, pm, alpha, coeffs))
    return rows


@dataclass(frozen=True)
class ScanRow:
    lambda_nm: float
    point: PhaseMatchPoint | None
    alpha_ext: float | None
    coeffs: LinearizedCoeffs | None


def write_scan_csv(rows, fileobj) -> None:
    """Emit scan_curve rows as CSV; empty fields mark unmatched wavelengths."""
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["lambda_nm", "k0_rad_per_m", "alpha_ext_deg",
                     "d_beta1_s_per_m", "d_rho_px", "d_rho_py"])
    for row in rows:
        if row.point is None:
            writer.writerow([f"{row.lambda_nm:.6f}", "", "", "", "", ""])
        else:
            writer.writerow([
                f"{row.lambda_nm:.6f}",
                f"{row.point.k0:.6e}",
                f"{np.rad2deg(row.alpha_ext):.6f}",
                f"{row.coeffs.d_beta1:.6e}",
                f"{row.coeffs.d_rho_px:.6e}",
                f"{row.coeffs.d_rho_py:.6e}",
            ])
