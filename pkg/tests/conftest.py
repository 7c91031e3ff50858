import numpy as np
import pytest

from thrusterquad import layout
from thrusterquad.model import BodyParams
from thrusterquad.spatial import reorthonormalize, skew


def random_rotation(rng, scale=0.5):
    return reorthonormalize(np.eye(3) + scale * skew(rng.normal(size=3)), max_iter=20)


def random_state(rng, r_range=(0.2, 0.4)):
    """Random flat state with a valid rotation block and in-range legs."""
    x = rng.normal(size=layout.NX) * 0.6
    layout.rotation_to_state(x, random_rotation(rng))
    for i in range(4):
        x[3 * i + 2] = rng.uniform(*r_range)
    return x


def random_input(rng, scale=5.0):
    return rng.normal(size=layout.NU) * scale


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def params():
    return BodyParams()
