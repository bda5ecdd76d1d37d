import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def disk64():
    from gffloops.lattice_gff import build_domain
    return build_domain("disk", 64)


@pytest.fixture(scope="session")
def disk256():
    from gffloops.lattice_gff import build_domain
    return build_domain("disk", 256)
