"""pytest configuration and fixtures."""

import logging

import numpy as np
import pytest

from submarkets.dcsbm import assortative_params, generate
from submarkets.em import FitOptions, fit
from submarkets.graph import Graph, largest_connected_component
from submarkets.partition import Partition
from submarkets.repro import analysis_fixture


@pytest.fixture(autouse=True)
def reset_package_logger():
    """Drop the stderr handler a CLI invocation installs."""
    yield
    log = logging.getLogger("submarkets")
    for handler in list(log.handlers):
        log.removeHandler(handler)
    log.setLevel(logging.NOTSET)


def graph_of(edges: list[tuple[int, int]], n: int | None = None) -> Graph:
    """Unweighted graph on nodes "0".."n-1"."""
    n = n if n is not None else max(max(e) for e in edges) + 1
    return Graph.from_edges([str(i) for i in range(n)], [(i, j, 1.0) for i, j in edges])


@pytest.fixture
def two_triangles():
    return graph_of([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])


@pytest.fixture
def k5():
    return graph_of([(i, j) for i in range(5) for j in range(i + 1, 5)])


@pytest.fixture
def path3():
    return graph_of([(0, 1), (1, 2)])


@pytest.fixture(scope="session")
def planted_pair():
    """Two assortative groups, constant degree 10, largest component only."""
    n = 500
    degrees = np.full(n, 10.0)
    params = assortative_params(2, 10.0, float(degrees.sum()))
    g, truth = generate(n, params, degrees, seed=11)
    lcc, mapping = largest_connected_component(g)
    return lcc, Partition(truth.labels[mapping], truth.k)


@pytest.fixture(scope="session")
def planted_fit(planted_pair):
    g, _ = planted_pair
    return fit(g, 2, FitOptions(restarts=3, seed=5))


@pytest.fixture
def market_fixture():
    """Submarkets, attributes and contacts with hand-checkable statistics."""
    return analysis_fixture()
