import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session", autouse=True)
def _operator_cache(tmp_path_factory):
    # share assembled operators across the whole run
    path = tmp_path_factory.mktemp("opcache")
    os.environ.setdefault("VPB_SPECTRAL_CACHE", str(path))
    yield


@pytest.fixture(scope="session")
def basis_small():
    from vpb_spectral import build_basis

    return build_basis(2, 8)


@pytest.fixture(scope="session")
def basis_mid():
    from vpb_spectral import build_basis

    return build_basis(4)


@pytest.fixture(scope="session")
def basis_prod():
    from vpb_spectral import build_basis

    return build_basis(6)


@pytest.fixture(scope="session")
def hard_sphere_prod(basis_prod):
    from vpb_spectral.collision import assemble_collision

    return assemble_collision(basis_prod, gamma=1.0)


@pytest.fixture(scope="session")
def synthetic_prod(basis_prod):
    from vpb_spectral.collision import synthetic_collision

    return synthetic_collision(basis_prod)


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
