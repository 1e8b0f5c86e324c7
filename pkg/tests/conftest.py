import pytest

from gexpect import make_symmetric_two_point_family


@pytest.fixture
def F():
    """Two measures: atoms +-0.5 and +-1, each with mass 1/2."""
    return make_symmetric_two_point_family([0.5, 1.0])
