import pytest

from mesonbell.meson import MesonParams, Species


@pytest.fixture(scope="session")
def kaon():
    return MesonParams.defaults(Species.KAON)


@pytest.fixture(scope="session")
def bmeson():
    # x_d = dm/Gamma of about 0.77 for the B0 system; only an input here
    return MesonParams.defaults(Species.BMESON, delta_m=0.77)
