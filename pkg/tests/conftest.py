import numpy as np
import pytest
from scipy.constants import c as C_LIGHT

from parfluor.dispersion import make_crystal

PUMP_WL = 400e-9


def omega_of_nm(lam_nm: float) -> float:
    return 2.0 * np.pi * C_LIGHT / (lam_nm * 1e-9)


@pytest.fixture(scope="session")
def bbo29():
    return make_crystal(theta_cut=np.deg2rad(29.0), length=2e-3, pump_wavelength=PUMP_WL)


@pytest.fixture(scope="session")
def bbo313():
    return make_crystal(theta_cut=np.deg2rad(31.3), length=2e-3, pump_wavelength=PUMP_WL)


@pytest.fixture(scope="session")
def bbo40():
    return make_crystal(theta_cut=np.deg2rad(40.0), length=2e-3, pump_wavelength=PUMP_WL)
