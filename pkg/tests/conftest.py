import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qarm.dataset import TransactionDatabase, reference_database


@pytest.fixture
def ref_db():
    return reference_database()


@st.composite
def databases(draw, max_n=8, max_m=5, nonzero=True):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(1, max_m))
    bits = draw(arrays(np.uint8, (n, m), elements=st.integers(0, 1)))
    if nonzero and not bits.any():
        bits[draw(st.integers(0, n - 1)), draw(st.integers(0, m - 1))] = 1
    return TransactionDatabase(bits)


def random_db(rng, n, m, a):
    """Bernoulli(a/M) database with at least one 1."""
    bits = (rng.random((n, m)) < a / m).astype(np.uint8)
    if not bits.any():
        bits[0, 0] = 1
    return TransactionDatabase(bits)
