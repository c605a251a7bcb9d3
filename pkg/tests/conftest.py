import pytest

from surprisal.gradcheck import central_difference, rel_err  # noqa: F401
from surprisal.numcore import make_rng


@pytest.fixture
def rng():
    return make_rng(20240611)
