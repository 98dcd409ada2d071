"""Modularity scoring and Louvain maximization on weighted graphs."""

import logging
from collections import defaultdict
from typing import Iterator

import numpy as np

from .errors import DataError, UndefinedScoreError
from .graph import Graph
from .partition import Partition

logger = logging.getLogger(__name__)

# Minimum modularity increase for a move to count.
MOVE_TOLERANCE = 1e-12


def _strength(g: Graph) -> np.ndarray:
    """Node degree with internal weight counted like a self-loop (twice)."""
    return g.degrees + 2.0 * g.internal


def modularity(g: Graph, p: Partition, resolution: float = 1.0) -> float:
    """Q = sum_r [e_rr - resolution * a_r^2].

    e_rr is the within-community weight (node-internal weight included) over
    the total weight, a_r the community's share of total strength.
    """
    if len(p) != g.node_count:
        raise DataError("partition does not cover the graph")
    strength = _strength(g)
    two_w = strength.sum()
    if g.node_count == 0 or two_w <= 0:
        raise UndefinedScoreError("modularity is undefined without edge weight")

    same = p.labels[g.src] == p.labels[g.dst]
    within = np.bincount(
        p.labels[g.src[same]], weights=g.weight[same], minlength=p.k
    ) + np.bincount(p.labels, weights=g.internal, minlength=p.k)
    a = np.bincount(p.labels, weights=strength, minlength=p.k) / two_w
    return float(np.sum(within / (two_w / 2.0) - resolution * a**2))


def _one_level(
    adj: list[dict[int, float]],
    strength: np.ndarray,
    resolution: float,
    two_w: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, bool]:
    """Greedy single-node moves until a full sweep moves nothing."""
    n = len(adj)
    comm = np.arange(n)
    tot = strength.astype(np.float64).copy()
    moved = False
    gained = 0.0

    while True:
        moves = 0
        for i in rng.permutation(n):
            own = comm[i]
            ki = strength[i]
            links: dict[int, float] = defaultdict(float)
            for j, w in adj[i].items():
                links[comm[j]] += w

            tot[own] -= ki
            own_gain = links.get(own, 0.0) - resolution * ki * tot[own] / two_w
            best, best_gain = own, own_gain
            for c in sorted(set(links) | {own}):
                gain = links.get(c, 0.0) - resolution * ki * tot[c] / two_w
                if gain > best_gain or (gain == best_gain and c < best):
                    best, best_gain = c, gain

            delta_q = 2.0 * (best_gain - own_gain) / two_w
            if best != own and delta_q > MOVE_TOLERANCE:
                assert delta_q > 0, "accepted move lowered modularity"
                comm[i] = best
                gained += delta_q
                moves += 1
            tot[comm[i]] += ki

        if moves == 0:
            break
        moved = True

    logger.debug("level finished, modularity gain %.6g", gained)
    return comm, moved


def _aggregate(
    adj: list[dict[int, float]], labels: np.ndarray, n_comm: int
) -> list[dict[int, float]]:
    merged: list[dict[int, float]] = [defaultdict(float) for _ in range(n_comm)]
    for i, row in enumerate(adj):
        for j, w in row.items():
            a, b = labels[i], labels[j]
            if a != b:
                merged[a][b] += w
    return [dict(row) for row in merged]


def louvain(g: Graph, resolution: float = 1.0, seed: int = 0) -> Partition:
    """Louvain modularity maximization with a resolution parameter.

    Node visitation order is a seeded shuffle each sweep; gains are compared
    in ascending community order so ties go to the lowest index. Within-
    community weight of aggregated nodes only enters through node strength,
    so it needs no explicit bookkeeping here.
    """
    if g.node_count == 0:
        raise DataError("louvain needs a non-empty graph")
    if resolution <= 0:
        raise DataError("resolution must be positive")

    strength = _strength(g)
    two_w = float(strength.sum())
    if two_w <= 0:
        return Partition.from_labels(range(g.node_count))

    rng = np.random.default_rng(seed)
    adj = [dict(row) for row in g.adjacency]
    membership = np.arange(g.node_count)
    level = 0

    while True:
        comm, moved = _one_level(adj, strength, resolution, two_w, rng)
        if not moved:
            break
        _, labels = np.unique(comm, return_inverse=True)
        n_comm = int(labels.max()) + 1
        membership = labels[membership]
        adj = _aggregate(adj, labels, n_comm)
        strength = np.bincount(labels, weights=strength, minlength=n_comm)
        level += 1
        logger.info("louvain level %d: %d communities", level, n_comm)

    return Partition.from_labels(membership)


def _restricted_growth(n: int) -> Iterator[list[int]]:
    """All set partitions of n items as restricted growth strings."""
    if n == 0:
        yield []
        return
    labels = [0] * n

    def extend(i: int, top: int) -> Iterator[list[int]]:
        if i == n:
            yield labels
            return
        for c in range(top + 2):
            labels[i] = c
            yield from extend(i + 1, max(top, c))

    yield from extend(1, 0)


def exhaustive_modularity_max(
    g: Graph, resolution: float = 1.0, max_nodes: int = 10
) -> tuple[float, Partition]:
    """Best modularity over every partition of a small graph."""
    if g.node_count > max_nodes:
        raise DataError(
            f"exhaustive search limited to {max_nodes} nodes, got {g.node_count}"
        )
    best_q, best = -np.inf, None
    for labels in _restricted_growth(g.node_count):
        p = Partition(np.array(labels), max(labels, default=-1) + 1)
        q = modularity(g, p, resolution)
        if q > best_q:
            best_q, best = q, p
    return best_q, best
