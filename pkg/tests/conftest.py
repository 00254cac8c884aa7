"""Shared fixtures: small datasets and models used across the suite."""

import numpy as np
import pytest

from fairtopk.data import generate_synthetic
from fairtopk.model import FactorizationScorer


@pytest.fixture
def small_data():
    return generate_synthetic(4, 8, 0.4, 1.0, seed=3)


@pytest.fixture
def small_model(small_data):
    return FactorizationScorer(small_data.num_query_rows,
                               small_data.num_item_rows, 3, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
