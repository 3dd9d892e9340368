import numpy as np
import pytest

from swarmctrl.grid import ScalarField, build_grid


@pytest.fixture
def unit_grid_64():
    return build_grid(1, [1.0], [64])


@pytest.fixture
def unit_grid_128():
    return build_grid(1, [1.0], [128])


def random_density(domain, rng, floor=0.1):
    """Strictly positive unit-mass field."""
    values = floor + rng.random(domain.shape)
    return ScalarField(domain, values).normalized()


def cosine_target(domain, amplitude=0.3, mode=1):
    x = domain.axis_centers(0)
    return ScalarField(domain, 1.0 + amplitude * np.cos(mode * np.pi * x)).normalized()
