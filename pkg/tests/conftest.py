import hypothesis
from fractions import Fraction

import pytest

from twistloop.model import InteractionSpec, ModelSpec

hypothesis.settings.register_profile(
    "suite", deadline=None, max_examples=20, derandomize=True)
hypothesis.settings.load_profile("suite")


def aah(cells, particles, statistics="hardcore-boson", lam=0.5, phi=0.0,
        interaction=None, cap=1, cell_size=3, t0=1.0):
    b = Fraction(1, cell_size) if cell_size > 1 else Fraction(0, 1)
    return ModelSpec(cells=cells, cell_size=cell_size, statistics=statistics,
                     particle_count=particles, t0=t0, lam=lam, b=b, phi=phi,
                     interaction=interaction or InteractionSpec(),
                     max_occupation=cap)


@pytest.fixture
def single_particle_21():
    """The paper-benchmark single-particle chain: 21 sites, 7 cells."""
    return aah(cells=7, particles=1)


@pytest.fixture
def nu1_small():
    """nu = 1 hard-core chain small enough for dense cross-checks."""
    return aah(cells=3, particles=3)
