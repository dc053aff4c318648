import numpy as np
import pytest

from rulespace.data import build_hierarchy
from rulespace.synthetic import family_kg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def family():
    """``(dataset, rules, hierarchy)`` of the generated family KG, seed 0."""
    dataset, rules = family_kg(0)
    return dataset, rules, build_hierarchy(rules, dataset.n_relations, dataset.relations)

