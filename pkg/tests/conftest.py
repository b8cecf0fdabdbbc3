import warnings

import pytest

from chemostat.protocol.schemas import DilutionRateNoise, GeneralNoise
from chemostat.services import fokker_planck_service
from chemostat.services.model_service import table1_params


@pytest.fixture
def table1():
    return table1_params(theta=1.0, z_f=15000.0)


@pytest.fixture
def small_table1():
    # same curves with a feed small enough for quick stochastic runs
    return table1_params(theta=1.0, z_f=20.0)


@pytest.fixture
def general_noise_params():
    return table1_params(theta=1.0, z_f=15000.0, noise=GeneralNoise(sigma1=0.5, sigma2=0.5))


@pytest.fixture
def dilution_noise_params():
    return table1_params(theta=1.0, z_f=15000.0, noise=DilutionRateNoise(sigma=0.5))


@pytest.fixture
def coarse_domain(general_noise_params):
    return fokker_planck_service.build_domain(general_noise_params, x_max=1.0, y_max=1.0, hx=0.05, hy=0.05)


@pytest.fixture(autouse=True)
def _quiet_off_manifold_warnings():
    # off-manifold curves are built on purpose in several tests
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield
