import random

import pytest
from hypothesis import HealthCheck, settings

from mpso import he

# Crypto-heavy properties run few, slow examples; silence the stopwatch.
settings.register_profile(
    "crypto",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("crypto")


@pytest.fixture(scope="session")
def small_keypair():
    """128-bit pair shared across tests that only need a working scheme."""
    return he.keygen(128, rng=random.Random(0xC0FFEE))


@pytest.fixture(scope="session")
def default_keypair():
    """Deployment-sized 512-bit pair, generated once per session."""
    return he.keygen(512, rng=random.Random(0xBEEF))


@pytest.fixture()
def rng():
    return random.Random(1234)
