import os
import sys

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from mechanism_engine.menu_core import AmaMenu, RochetMenu  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def single_item_menu():
    """{(0, 0), (1, 0.36)}"""
    return RochetMenu.with_default([[1.0]], [0.36])


@pytest.fixture
def second_price_menu():
    """Two buyers, one item, each regular option hands the item to one buyer"""
    return AmaMenu.with_default([[[1.0], [0.0]], [[0.0], [1.0]]], [0.0, 0.0])


def random_rochet_menu(rng, num_regular, num_items):
    return RochetMenu.with_default(rng.random((num_regular, num_items)), rng.random(num_regular))


def random_ama_menu(rng, num_regular, num_buyers, num_items):
    allocations = rng.random((num_regular, num_buyers, num_items))
    allocations /= np.maximum(allocations.sum(axis=1, keepdims=True), 1.0)
    return AmaMenu.with_default(allocations, rng.uniform(-0.3, 0.3, num_regular))


def simplex_points(rng, count, num_items):
    """Uniform points of the unit cube kept inside the unit simplex"""
    points = rng.random((count * (2 + 4 * num_items), num_items))
    return points[points.sum(axis=1) <= 1.0][:count]
