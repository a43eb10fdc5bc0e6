"""Shared graph constructions used across the test suite."""

import numpy as np
import pytest

from fastcolor.graph import Graph


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def star_graph(leaves: int) -> Graph:
    return Graph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def crown_graph(n: int) -> Graph:
    """Complete bipartite K_{n/2,n/2} minus a perfect matching, with the
    two sides interleaved: side A at even ids, side B at odd ids. The
    interleaving makes id-order greedy use n/2 colors while the chromatic
    number is 2."""
    assert n % 2 == 0 and n >= 4
    half = n // 2
    return Graph.from_edges(
        n, [(2 * i, 2 * j + 1) for i in range(half) for j in range(half) if i != j]
    )


def petersen_graph() -> Graph:
    outer = [(i, (i + 1) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    return Graph.from_edges(10, outer + spokes + inner)


@pytest.fixture
def k4() -> Graph:
    return complete_graph(4)


@pytest.fixture
def crown8() -> Graph:
    return crown_graph(8)


@pytest.fixture
def petersen() -> Graph:
    return petersen_graph()


@pytest.fixture
def empty3() -> Graph:
    return Graph.from_edges(3, [])
