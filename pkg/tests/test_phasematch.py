import io

import numpy as np
import pytest
from scipy.constants import c as C_LIGHT

from parfluor import dispersion as dm
from parfluor import phasematch as pm
from parfluor.errors import NoPhaseMatch, TotalInternalReflection

from conftest import omega_of_nm


class TestDeltaK:
    def test_symmetric_in_arguments(self, bbo313):
        a = dm.SpectralPoint(omega_of_nm(700), 2e5, -1e5)
        b = dm.SpectralPoint(omega_of_nm(950), -3e5, 2e5)
        assert pm.delta_k(a, b, bbo313) == pm.delta_k(b, a, bbo313)

    def test_degenerate_collinear_at_29(self, bbo29):
        kappa = dm.SpectralPoint(omega_of_nm(800))
        dk = pm.delta_k(kappa, kappa, bbo29)
        assert abs(dk) < 1e3  # |dk * L| well below pi for L = 2 mm

    def test_far_from_matching_at_40(self, bbo40):
        kappa = dm.SpectralPoint(omega_of_nm(800))
        dk = pm.delta_k(kappa, kappa, bbo40)
        # collinear degenerate pairs are far off matching: |dk*L| >> pi, and
        # the noncollinear solution at k0 > 0 requires the collinear mismatch
        # to be negative (dk increases with transverse wavevector)
        assert dk < 0
        assert abs(dk) * bbo40.length > 100 * np.pi

    def test_parity_in_ky(self, bbo313):
        a = dm.SpectralPoint(omega_of_nm(700), 2e5, 4e5)
        b = dm.SpectralPoint(omega_of_nm(950), -2e5, -4e5)
        am = dm.SpectralPoint(omega_of_nm(700), 2e5, -4e5)
        bm = dm.SpectralPoint(omega_of_nm(950), -2e5, 4e5)
        assert pm.delta_k(a, b, bbo313) == pm.delta_k(am, bm, bbo313)


class TestPerfectCurve:
    def test_degenerate_cut_touches_axis(self):
        # crystal cut exactly at the collinear degeneracy angle
        crystal = dm.make_crystal(_degenerate_angle() + 1e-8, 2e-3, 400e-9)
        point = pm.perfect_curve(omega_of_nm(800), crystal)
        assert point is not None
        assert point.k0 < 1e4

    def test_40deg_exterior_angle_range(self, bbo40):
        point = pm.perfect_curve(omega_of_nm(800), bbo40)
        alpha = np.rad2deg(pm.exterior_angle(omega_of_nm(800), point.k0))
        assert 15 < alpha < 25

    def test_gap_is_reported_as_none(self, bbo29):
        # theta = 29.00 deg sits just below degeneracy: no matched point at 800
        assert pm.perfect_curve(omega_of_nm(800), bbo29) is None

    def test_residual_of_returned_roots(self, bbo313):
        for lam in np.linspace(520, 1200, 15):
            point = pm.perfect_curve(omega_of_nm(lam), bbo313)
            assert point is not None
            kappa = dm.SpectralPoint(point.omega_obs, point.k0, 0.0)
            idler = dm.SpectralPoint(bbo313.pump_center_omega - point.omega_obs,
                                     -point.k0, 0.0)
            assert abs(pm.delta_k(kappa, idler, bbo313)) < 1e-3


class TestExteriorAngle:
    def test_trivial_values(self):
        assert pm.exterior_angle(omega_of_nm(800), 0.0) == 0.0
        w = omega_of_nm(800)
        assert pm.exterior_angle(w, 0.5 * w / C_LIGHT) == pytest.approx(np.pi / 6)

    def test_total_internal_reflection(self):
        w = omega_of_nm(800)
        with pytest.raises(TotalInternalReflection):
            pm.exterior_angle(w, 1.01 * w / C_LIGHT)


class TestLinearize:
    def test_y_coefficients_vanish(self, bbo313):
        coeffs = pm.linearize(omega_of_nm(700), bbo313)
        assert coeffs.d_rho_y == pytest.approx(0.0, abs=1e-12)
        assert coeffs.d_rho_py == pytest.approx(0.0, abs=1e-12)

    def test_raises_without_matched_point(self, bbo29):
        with pytest.raises(NoPhaseMatch):
            pm.linearize(omega_of_nm(800), bbo29)

    def test_second_order_accuracy(self, bbo313):
        coeffs = pm.linearize(omega_of_nm(700), bbo313)
        w0, k0 = coeffs.omega_obs, coeffs.k0
        w0p = coeffs.omega_idler
        rng = np.random.default_rng(3)
        for _ in range(12):
            d = rng.uniform(-1, 1, size=5) * 0.01
            kappa = dm.SpectralPoint(w0, k0 * (1 + d[0]), k0 * d[1])
            kappap = dm.SpectralPoint(w0p * (1 + 0.01 * d[2]), -k0 * (1 + d[3]),
                                      k0 * d[4])
            exact = pm.delta_k(kappa, kappap, bbo313)
            lin = float(pm.delta_k_linearized(coeffs, kappa.kx, kappa.ky,
                                              kappap.omega, kappap.kx, kappap.ky))
            assert abs(lin - exact) < 0.05 * abs(exact)

    def test_halving_perturbation_quarters_error(self, bbo313):
        coeffs = pm.linearize(omega_of_nm(760), bbo313)
        w0, k0, w0p = coeffs.omega_obs, coeffs.k0, coeffs.omega_idler
        rng = np.random.default_rng(11)
        direction = rng.uniform(-1, 1, size=5)

        def err(scale):
            d = direction * scale
            kappa = dm.SpectralPoint(w0, k0 * (1 + d[0]), k0 * d[1])
            kappap = dm.SpectralPoint(w0p * (1 + 0.01 * d[2]), -k0 * (1 + d[3]),
                                      k0 * d[4])
            exact = pm.delta_k(kappa, kappap, bbo313)
            lin = float(pm.delta_k_linearized(coeffs, kappa.kx, kappa.ky,
                                              kappap.omega, kappap.kx, kappap.ky))
            return abs(lin - exact)

        e1, e2 = err(0.01), err(0.005)
        assert e2 == pytest.approx(e1 / 4, rel=0.2)


class TestScanCurve:
    def test_row_count(self, bbo313):
        rows = pm.scan_curve(500, 1200, 41, bbo313)
        assert len(rows) == 41

    def test_angle_ordering_by_cut(self, bbo29, bbo313, bbo40):
        crystal35 = dm.make_crystal(np.deg2rad(35.0), 2e-3, 400e-9)
        alphas = []
        for crystal in (bbo29, bbo313, crystal35, bbo40):
            point = pm.perfect_curve(omega_of_nm(700), crystal)
            alphas.append(pm.exterior_angle(omega_of_nm(700), point.k0))
        assert alphas == sorted(alphas)

    def test_continuity_of_curve(self, bbo313):
        rows = pm.scan_curve(550, 1150, 121, bbo313)
        k0s = np.array([r.point.k0 for r in rows if r.point is not None])
        jumps = np.abs(np.diff(k0s))
        # each jump bounded by 3x the local slope estimate from its neighbors
        for i in range(1, len(jumps) - 1):
            local = max(jumps[i - 1], jumps[i + 1])
            assert jumps[i] < 3 * local + 10 * pm.ROOT_TOL

    def test_csv_format_with_gap(self):
        crystal = dm.make_crystal(np.deg2rad(29.0), 2e-3, 400e-9)
        rows = pm.scan_curve(780, 820, 5, crystal)
        buf = io.StringIO()
        pm.write_scan_csv(rows, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].split(",") == ["lambda_nm", "k0_rad_per_m", "alpha_ext_deg",
                                       "d_beta1_s_per_m", "d_rho_px", "d_rho_py"]
        assert len(lines) == 6
        assert any(line.endswith(",,,,") for line in lines[1:])


def _degenerate_angle():
    """Oracle: cut angle where the effective pump index equals n_o at the
    degenerate wavelength, from the index mixing formula directly."""
    crystal = dm.make_crystal(np.deg2rad(29.0), 2e-3, 400e-9)
    w_p, w_s = omega_of_nm(400), omega_of_nm(800)
    n_os = float(dm.index_ordinary(w_s, crystal))
    n_op = float(dm.index_ordinary(w_p, crystal))
    n_ep = float(dm.index_extraordinary_principal(w_p, crystal))
    s2 = (n_os**-2 - n_op**-2) / (n_ep**-2 - n_op**-2)
    return float(np.arcsin(np.sqrt(s2)))
