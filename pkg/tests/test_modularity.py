"""Tests for modularity scoring and Louvain maximization."""

import numpy as np
import pytest

from submarkets.errors import DataError, UndefinedScoreError
from submarkets.graph import Graph, aggregate_by_region
from submarkets.modularity import exhaustive_modularity_max, louvain, modularity
from submarkets.partition import Partition, aligned_accuracy
from submarkets.repro import two_region_log

from .conftest import graph_of


def ring_of_triangles(count: int = 4) -> Graph:
    edges = []
    for t in range(count):
        a, b, c = 3 * t, 3 * t + 1, 3 * t + 2
        edges += [(a, b), (b, c), (a, c), (c, (3 * t + 3) % (3 * count))]
    return graph_of(edges, n=3 * count)


class TestModularity:
    """Scoring a fixed partition."""

    def test_single_community_is_zero(self, two_triangles):
        p = Partition(np.zeros(6, dtype=int), 1)

        assert modularity(two_triangles, p) == 0.0

    def test_two_triangles(self, two_triangles):
        p = Partition(np.array([0, 0, 0, 1, 1, 1]), 2)

        assert modularity(two_triangles, p) == pytest.approx(0.5)

    def test_single_edge_split(self):
        g = graph_of([(0, 1)])

        assert modularity(g, Partition(np.array([0, 1]), 2)) == pytest.approx(-0.5)

    def test_label_permutation_invariance(self):
        g = ring_of_triangles()
        labels = np.array([0, 0, 1, 1, 2, 2, 2, 3, 3, 3, 0, 1])
        perm = np.array([2, 0, 3, 1])

        a = modularity(g, Partition(labels, 4))
        b = modularity(g, Partition(perm[labels], 4))

        assert a == pytest.approx(b, abs=1e-15)

    def test_resolution_scales_null_term(self, two_triangles):
        p = Partition(np.array([0, 0, 0, 1, 1, 1]), 2)

        assert modularity(two_triangles, p, resolution=2.0) == pytest.approx(0.0)

    def test_internal_weight_counts_as_within(self):
        g = Graph.from_edges(["a", "b"], [(0, 1, 1.0)], internal=[1.0, 0.0])
        p = Partition(np.array([0, 1]), 2)

        # strengths 3 and 1, total 4; community a holds 1 of 2 units of weight
        assert modularity(g, p) == pytest.approx(0.5 - (9 + 1) / 16)

    def test_edgeless_graph_is_undefined(self):
        g = Graph.from_edges(["a", "b"], [])

        with pytest.raises(UndefinedScoreError):
            modularity(g, Partition(np.array([0, 1]), 2))

    def test_partition_size_mismatch(self, two_triangles):
        with pytest.raises(DataError):
            modularity(two_triangles, Partition(np.zeros(3, dtype=int), 1))


class TestLouvain:
    """Greedy maximization."""

    def test_complete_graph_is_one_community(self, k5):
        p = louvain(k5)

        assert p.k == 1

    def test_two_triangles(self, two_triangles):
        p = louvain(two_triangles)

        assert p.labels.tolist() == [0, 0, 0, 1, 1, 1]
        assert modularity(two_triangles, p) == pytest.approx(0.5)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_ring_of_triangles(self, seed):
        g = ring_of_triangles()
        p = louvain(g, seed=seed)
        triangles = Partition(np.repeat(np.arange(4), 3), 4)

        assert p.k == 4
        assert aligned_accuracy(triangles, p) == 1.0

    def test_result_is_compact(self):
        p = louvain(ring_of_triangles(5))

        assert p.is_compact

    def test_same_seed_same_partition(self):
        g = ring_of_triangles(6)

        assert louvain(g, seed=7).labels.tolist() == louvain(g, seed=7).labels.tolist()

    def test_matches_exhaustive_optimum(self, two_triangles, k5):
        for g in (two_triangles, k5):
            best, _ = exhaustive_modularity_max(g)

            assert modularity(g, louvain(g)) == pytest.approx(best, abs=1e-12)

    def test_never_beats_exhaustive(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            n = int(rng.integers(4, 8))
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < 0.5]
            g = graph_of(pairs or [(0, 1)], n=n)
            best, _ = exhaustive_modularity_max(g)

            assert modularity(g, louvain(g)) <= best + 1e-12

    def test_edgeless_graph_gives_singletons(self):
        p = louvain(Graph.from_edges(["a", "b", "c"], []))

        assert p.labels.tolist() == [0, 1, 2]

    def test_rejects_empty_graph(self):
        with pytest.raises(DataError):
            louvain(Graph.empty())

    def test_rejects_nonpositive_resolution(self, two_triangles):
        with pytest.raises(DataError):
            louvain(two_triangles, resolution=0.0)

    def test_regional_graph_splits_into_regions(self):
        g = aggregate_by_region(two_region_log())
        p = louvain(g, resolution=0.65)
        regions = Partition.from_labels(int(code[0]) for code in g.node_ids)

        assert p.k == 2
        assert aligned_accuracy(regions, p) == 1.0


class TestExhaustive:
    """Brute-force oracle."""

    def test_two_triangles_optimum(self, two_triangles):
        best, p = exhaustive_modularity_max(two_triangles)

        assert best == pytest.approx(0.5)
        assert p.labels.tolist() == [0, 0, 0, 1, 1, 1]

    def test_size_limit(self):
        g = graph_of([(i, i + 1) for i in range(11)])

        with pytest.raises(DataError, match="limited to 10 nodes"):
            exhaustive_modularity_max(g)
