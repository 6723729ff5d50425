import functools

import pytest
from hypothesis import settings

from epigossip.core import Mode
from epigossip.explorer import build_graph
from epigossip.protocol import builtin

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@functools.cache
def graph(name, n, mode=Mode.PUSH_PULL, symmetry=None):
    """Built once per session: several modules inspect the same graphs."""
    return build_graph(builtin(name, n, mode), symmetry=symmetry)


@pytest.fixture
def graphs():
    return graph
