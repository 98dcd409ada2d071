"""Tests for the M-step and the EM fitting loop."""

import json
import math
import struct

import numpy as np
import pytest

from submarkets.dcsbm import assortative_params, generate
from submarkets.em import (
    FitOptions,
    FitResult,
    block_counts,
    block_score,
    duplicate_pair,
    expected_degrees,
    fit,
    fit_many,
    m_step,
    read_marginals,
    repair_labels,
    split_group,
    start_from,
    write_marginals,
)
from submarkets.errors import DataError
from submarkets.graph import Graph, largest_connected_component
from submarkets.partition import Partition, aligned_accuracy

from .conftest import graph_of


def one_hot_marginals(g: Graph, labels: np.ndarray, k: int):
    q1 = np.eye(k)[labels]
    q2 = q1[g.src][:, :, None] * q1[g.dst][:, None, :]
    return q1, q2


class TestMStep:
    """Closed-form parameter update."""

    def test_single_group(self, two_triangles):
        q1 = np.ones((6, 1))
        q2 = np.ones((6, 1, 1))
        params = m_step(two_triangles, q1, q2)

        assert params.gamma.tolist() == [1.0]
        assert params.omega[0, 0] == pytest.approx(1.0 / 12)

    def test_two_blocks_by_hand(self):
        # two triangles joined by the edge 2-3; D_0 = D_1 = 7
        g = graph_of([(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)])
        q1, q2 = one_hot_marginals(g, np.array([0, 0, 0, 1, 1, 1]), 2)
        params = m_step(g, q1, q2)

        assert params.gamma.tolist() == [0.5, 0.5]
        assert params.omega[0, 1] == pytest.approx(1 / 49)
        assert params.omega[0, 0] == pytest.approx(6 / 49)
        assert params.omega[1, 1] == pytest.approx(6 / 49)

    def test_gamma_sums_to_one(self, planted_pair):
        g, _ = planted_pair
        rng = np.random.default_rng(0)
        q1 = rng.dirichlet(np.ones(3), size=g.node_count)
        q2 = rng.dirichlet(np.ones(9), size=g.edge_count).reshape(-1, 3, 3)

        params = m_step(g, q1, q2)

        assert abs(params.gamma.sum() - 1.0) <= 1e-12
        assert np.array_equal(params.omega, params.omega.T)

    def test_empty_group_gets_zero_affinity(self, two_triangles):
        q1, q2 = one_hot_marginals(two_triangles, np.zeros(6, dtype=int), 2)
        params = m_step(two_triangles, q1, q2)

        assert params.gamma.tolist() == [1.0, 0.0]
        assert params.omega[1].tolist() == [0.0, 0.0]

    def test_shape_mismatch(self, two_triangles):
        with pytest.raises(DataError):
            m_step(two_triangles, np.ones((5, 1)), np.ones((6, 1, 1)))

    def test_weights_count_as_multiplicity(self):
        g = Graph.from_edges(["a", "b"], [(0, 1, 3.0)])
        params = m_step(g, np.ones((2, 1)), np.ones((1, 1, 1)))

        assert params.omega[0, 0] == pytest.approx(6 / 36)


class TestFit:
    """End-to-end EM fits."""

    def test_single_group(self):
        g = graph_of([(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)])
        result = fit(g, 1, FitOptions(restarts=2))

        assert result.converged
        assert len(result.history) == 1
        assert result.assignment.labels.tolist() == [0] * 6
        assert result.params.gamma.tolist() == [1.0]
        assert result.params.omega[0, 0] == pytest.approx(1 / 14)

    def test_planted_assortative_recovery(self, planted_pair, planted_fit):
        _, truth = planted_pair

        assert aligned_accuracy(truth, planted_fit.assignment) >= 0.98
        assert planted_fit.params.omega[0, 0] > 3 * planted_fit.params.omega[0, 1]

    def test_planted_disassortative_recovery(self):
        n = 500
        d = np.full(n, 10.0)
        params = assortative_params(2, 0.1, float(d.sum()))
        g, truth = generate(n, params, d, seed=21)
        g, mapping = largest_connected_component(g)
        truth = Partition(truth.labels[mapping], 2)

        result = fit(g, 2, FitOptions(restarts=3, seed=2))
        omega = result.params.omega

        assert aligned_accuracy(truth, result.assignment) >= 0.98
        assert omega[0, 1] > 3 * max(omega[0, 0], omega[1, 1])

    def test_parallel_schedule_agrees(self, planted_pair, planted_fit):
        g, truth = planted_pair
        parallel = fit(g, 2, FitOptions(restarts=3, seed=5, schedule="parallel", threads=2))

        assert aligned_accuracy(truth, parallel.assignment) >= 0.98
        assert aligned_accuracy(planted_fit.assignment, parallel.assignment) >= 0.96

    def test_expected_degrees_sum_to_observed(self, planted_pair, planted_fit):
        g, _ = planted_pair
        expected = expected_degrees(g, planted_fit.marginals.q1, planted_fit.params)

        assert expected.sum() == pytest.approx(g.degrees.sum(), rel=1e-9)

    def test_marginals_are_normalized(self, planted_fit):
        q1, q2 = planted_fit.marginals.q1, planted_fit.marginals.q2

        assert np.abs(q1.sum(axis=1) - 1.0).max() <= 1e-10
        assert np.abs(q2.sum(axis=(1, 2)) - 1.0).max() <= 1e-10
        assert abs(planted_fit.params.gamma.sum() - 1.0) <= 1e-12

    def test_best_restart_has_highest_objective(self, planted_fit):
        objectives = planted_fit.restart_objectives

        assert len(objectives) == 3
        assert planted_fit.objective == max(objectives)
        assert objectives.index(max(objectives)) == planted_fit.restart

    def test_deterministic(self):
        d = np.full(200, 8.0)
        g, _ = generate(200, assortative_params(2, 8.0, float(d.sum())), d, seed=4)
        g, _ = largest_connected_component(g)
        options = FitOptions(restarts=2, seed=8)

        first = json.dumps(fit(g, 2, options).to_dict())
        second = json.dumps(fit(g, 2, options).to_dict())

        assert first == second

    def test_fit_many(self, planted_pair):
        g, _ = planted_pair
        results = fit_many(g, [1, 2], FitOptions(restarts=1))

        assert sorted(results) == [1, 2]
        assert results[2].k == 2

    def test_rejects_disconnected_graph(self, two_triangles):
        with pytest.raises(DataError, match="connected components"):
            fit(two_triangles, 2)

    def test_rejects_edgeless_graph(self):
        with pytest.raises(DataError, match="without edges"):
            fit(Graph.from_edges(["a", "b"], []), 1)

    def test_rejects_bad_options(self, path3):
        with pytest.raises(DataError):
            fit(path3, 2, FitOptions(restarts=0))

    def test_warns_on_weighted_graph(self, caplog):
        g = Graph.from_edges(["a", "b", "c"], [(0, 1, 2.0), (1, 2, 1.0)])
        fit(g, 1, FitOptions(restarts=1))

        assert "multiplicities" in caplog.text


class TestSerialization:
    def test_result_dict_round_trip(self, planted_fit):
        data = json.loads(json.dumps(planted_fit.to_dict()))
        again = FitResult.from_dict(data)

        assert again.node_ids == planted_fit.node_ids
        assert again.assignment.labels.tolist() == planted_fit.assignment.labels.tolist()
        assert again.params.omega.tolist() == planted_fit.params.omega.tolist()
        assert again.objective == planted_fit.objective
        assert again.marginals is None

    def test_result_dict_fields(self, planted_fit):
        data = planted_fit.to_dict()

        assert data["k"] == 2
        assert set(data) >= {"gamma", "omega", "loglike_proxy", "converged", "assignments"}

    def test_nan_history_becomes_null(self):
        data = {
            "k": 1,
            "gamma": [1.0],
            "omega": [[0.5]],
            "assignments": {"a": 0},
            "history": [
                {"iteration": 1, "param_change": None, "bp_sweeps": 3,
                 "bp_converged": True, "objective": None, "note": "reseeded groups [0]"}
            ],
        }
        result = FitResult.from_dict(data)

        assert math.isnan(result.history[0].param_change)
        assert result.to_dict()["history"][0]["param_change"] is None

    def test_missing_assignments(self):
        with pytest.raises(DataError, match="assignments"):
            FitResult.from_dict({"gamma": [1.0], "omega": [[1.0]]})

    def test_marginals_bytes(self):
        q1 = np.array([[0.25, 0.75], [1.0, 0.0], [0.5, 0.5]])
        data = write_marginals(q1)

        assert len(data) == 6 * 8
        assert data[:8] == struct.pack("<d", 0.25)
        assert read_marginals(data, 2).tolist() == q1.tolist()

    def test_marginals_bytes_must_split(self):
        with pytest.raises(DataError):
            read_marginals(b"\x00" * 24, 2)


@pytest.fixture(scope="module")
def planted_four():
    """Four assortative groups of about 150 nodes, constant degree 12."""
    n = 600
    degrees = np.full(n, 12.0)
    params = assortative_params(4, 10.0, float(degrees.sum()))
    g, truth = generate(n, params, degrees, seed=17)
    lcc, mapping = largest_connected_component(g)
    return lcc, Partition(truth.labels[mapping], 4)


class TestRepair:
    """Hard-assignment repair between EM phases."""

    def test_block_score_by_hand(self):
        g = graph_of([(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)])
        counts, degree, sizes = block_counts(g, np.array([0, 0, 0, 1, 1, 1]), 2)

        assert counts.tolist() == [[6.0, 1.0], [1.0, 6.0]]
        assert degree.tolist() == [7.0, 7.0]
        assert block_score(counts, degree, sizes) == pytest.approx(
            12 * math.log(6 / 49) + 2 * math.log(1 / 49) - 14 + 6 * math.log(0.5)
        )

    def test_halves_of_a_group_are_duplicates(self, planted_four):
        g, truth = planted_four
        rng = np.random.default_rng(0)
        labels = truth.labels.copy()
        group = np.flatnonzero(labels == 3)
        labels[group[rng.permutation(group.size) < group.size // 2]] = 4

        assert duplicate_pair(*block_counts(g, labels, 5)) == (3, 4)
        assert duplicate_pair(*block_counts(g, truth.labels, 4)) is None

    def test_split_separates_merged_groups(self, planted_four):
        g, truth = planted_four
        members = np.flatnonzero(truth.labels <= 1)
        moved = split_group(g, members, np.random.default_rng(1))
        found = Partition(moved.astype(int), 2)

        assert aligned_accuracy(Partition(truth.labels[members], 2), found) >= 0.9

    def test_merged_and_split_groups_are_repaired(self, planted_four):
        g, truth = planted_four
        rng = np.random.default_rng(2)
        labels = truth.labels.copy()
        labels[labels == 1] = 0
        group = np.flatnonzero(labels == 3)
        labels[group[rng.permutation(group.size) < group.size // 2]] = 1

        repaired, note = repair_labels(g, labels, 4, rng)

        assert note.startswith("merged groups 1 and 3")
        assert "split group 0" in note
        assert aligned_accuracy(truth, Partition(repaired, 4)) >= 0.9

    def test_empty_group_is_refilled(self, planted_four):
        g, truth = planted_four
        labels = np.where(truth.labels == 3, 2, truth.labels)

        repaired, note = repair_labels(g, labels, 4, np.random.default_rng(3))

        assert note.startswith("refilled groups [3]")
        assert np.bincount(repaired, minlength=4).min() > 0

    def test_good_assignment_needs_no_repair(self, planted_four):
        g, truth = planted_four

        assert repair_labels(g, truth.labels, 4, np.random.default_rng(4)) is None
        assert repair_labels(g, np.zeros(g.node_count, dtype=int), 1,
                             np.random.default_rng(4)) is None

    def test_start_from_assignment(self, two_triangles):
        labels = np.array([0, 0, 0, 1, 1, 1])
        params, beliefs = start_from(two_triangles, labels, 2)

        assert params.gamma.sum() == pytest.approx(1.0)
        assert params.omega[0, 0] > params.omega[0, 1]
        assert np.argmax(beliefs.q1, axis=1).tolist() == labels.tolist()
        assert beliefs.mu.shape == (2 * two_triangles.edge_count, 2)
        assert beliefs.mu.sum(axis=1) == pytest.approx(np.ones(12))

    def test_four_planted_groups_recovered(self, planted_four):
        g, truth = planted_four
        result = fit(g, 4, FitOptions(restarts=2, seed=3))

        assert aligned_accuracy(truth, result.assignment) >= 0.95
        assert np.bincount(result.assignment.labels, minlength=4).min() > 0
