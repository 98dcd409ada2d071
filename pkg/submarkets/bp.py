"""Belief propagation for the degree-corrected block model.

Messages mu[e, r] live on directed edges in `Graph.directed_edges` order, so
the out-messages of a contiguous node range form a contiguous slice. Updates
run in log space: the log of every incoming factor sum_s omega_rs mu_s is
accumulated per node once, and each outgoing message removes the factor of
its own reverse edge.
"""

import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import logsumexp

from .dcsbm import BlockModelParams
from .errors import DataError, DegenerateEdgeError, RenormalizationError
from .graph import Graph

logger = logging.getLogger(__name__)

Schedule = Literal["sequential", "parallel"]

# Incoming factors are floored here so that removing one from a node total
# never computes -inf - (-inf).
LOG_FLOOR = float(np.log(np.finfo(np.float64).tiny))

DEFAULT_BLOCKS = 8


@dataclass
class Beliefs:
    """Messages mu (2m x k) and the one-node marginals q1 (n x k) they imply."""

    mu: np.ndarray
    q1: np.ndarray

    @classmethod
    def random(
        cls, g: Graph, k: int, seed: int | np.random.Generator = 0
    ) -> "Beliefs":
        rng = np.random.default_rng(seed)
        mu = rng.uniform(size=(2 * g.edge_count, k))
        q1 = rng.uniform(size=(g.node_count, k))
        return cls(_normalized(mu), _normalized(q1))

    @classmethod
    def uniform(cls, g: Graph, k: int) -> "Beliefs":
        return cls(
            np.full((2 * g.edge_count, k), 1.0 / k),
            np.full((g.node_count, k), 1.0 / k),
        )

    @property
    def k(self) -> int:
        return self.q1.shape[1]

    def copy(self) -> "Beliefs":
        return Beliefs(self.mu.copy(), self.q1.copy())


@dataclass
class Marginals:
    """One-node marginals q1 (n x k) and, when computed, q2 (m x k x k)."""

    q1: np.ndarray
    q2: np.ndarray | None = None


@dataclass
class BPResult:
    beliefs: Beliefs
    q1: np.ndarray
    converged: bool
    sweeps: int
    max_change: float


def _normalized(x: np.ndarray) -> np.ndarray:
    # Rows of zeros (possible only for k == 0) stay as they are.
    total = x.sum(axis=1, keepdims=True)
    return np.divide(x, total, out=np.zeros_like(x), where=total > 0)


def _node_blocks(n: int, count: int) -> list[tuple[int, int]]:
    bounds = np.unique(np.linspace(0, n, max(1, count) + 1).astype(np.int64))
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


def _segment_sum(index: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    out = np.empty((size, values.shape[1]))
    for r in range(values.shape[1]):
        out[:, r] = np.bincount(index, weights=values[:, r], minlength=size)
    return out


class _Updater:
    """Block update of messages and marginals for fixed parameters and field."""

    def __init__(self, g: Graph, params: BlockModelParams, h: np.ndarray):
        self.de = g.directed_edges
        self.degrees = g.degrees
        self.omega = params.omega
        with np.errstate(divide="ignore"):
            self.log_gamma = np.log(params.gamma)
        self.h = h

    def __call__(
        self, mu: np.ndarray, lo: int, hi: int
    ) -> tuple[np.ndarray, np.ndarray]:
        de = self.de
        a, b = de.indptr[lo], de.indptr[hi]
        with np.errstate(divide="ignore"):
            log_in = np.log(mu[de.rev[a:b]] @ self.omega)
        np.maximum(log_in, LOG_FLOOR, out=log_in)

        local = de.src[a:b] - lo
        total = self.log_gamma - np.outer(self.degrees[lo:hi], self.h)
        total += _segment_sum(local, log_in, hi - lo)

        z = logsumexp(total, axis=1, keepdims=True)
        if not np.all(np.isfinite(z)):
            node = lo + int(np.flatnonzero(~np.isfinite(z[:, 0]))[0])
            raise RenormalizationError(f"marginal of node {node} cannot be normalized")
        log_q = total - z
        log_mu = total[local] - log_in
        norm = logsumexp(log_mu, axis=1, keepdims=True)
        bad = ~np.isfinite(norm[:, 0])
        if bad.any():
            e = a + int(np.flatnonzero(bad)[0])
            raise RenormalizationError(
                f"message {int(de.src[e])}->{int(de.dst[e])} cannot be normalized"
            )
        return np.exp(log_mu - norm), np.exp(log_q)


def external_field(g: Graph, params: BlockModelParams, q1: np.ndarray) -> np.ndarray:
    """h_r = sum_s omega_rs sum_k d_k q^k_s."""
    return params.omega @ (g.degrees @ q1)


def bp_sweep(
    g: Graph,
    params: BlockModelParams,
    beliefs: Beliefs,
    damping: float = 0.1,
    schedule: Schedule = "sequential",
    blocks: int = DEFAULT_BLOCKS,
    executor: Executor | None = None,
) -> tuple[Beliefs, np.ndarray, float]:
    """One pass over every message and marginal.

    The field h is computed once from the incoming marginals. "sequential"
    updates contiguous node blocks in order, each block reading the messages
    already refreshed by earlier blocks. "parallel" computes every block from
    the incoming messages, on `executor` when one is given; results do not
    depend on the worker count.

    Returns the new beliefs, their q1 and the largest absolute message change.
    """
    if not 0.0 <= damping < 1.0:
        raise DataError(f"damping must lie in [0, 1), got {damping}")
    if beliefs.k != params.k:
        raise DataError(f"beliefs have {beliefs.k} groups, parameters {params.k}")
    if schedule not in ("sequential", "parallel"):
        raise DataError(f"unknown schedule {schedule!r}")

    update = _Updater(g, params, external_field(g, params, beliefs.q1))
    ranges = _node_blocks(g.node_count, blocks)
    indptr = g.directed_edges.indptr
    old = beliefs.mu
    mu = old.copy()
    q1 = beliefs.q1.copy()

    if schedule == "sequential":
        for lo, hi in ranges:
            computed, q1[lo:hi] = update(mu, lo, hi)
            a, b = indptr[lo], indptr[hi]
            mu[a:b] = (1.0 - damping) * computed + damping * mu[a:b]
    else:
        if executor is None:
            results = [update(old, lo, hi) for lo, hi in ranges]
        else:
            results = list(executor.map(lambda r: update(old, *r), ranges))
        for (lo, hi), (computed, q) in zip(ranges, results):
            a, b = indptr[lo], indptr[hi]
            mu[a:b] = (1.0 - damping) * computed + damping * old[a:b]
            q1[lo:hi] = q

    change = float(np.abs(mu - old).max(initial=0.0))
    return Beliefs(mu, q1), q1, change


def run_bp(
    g: Graph,
    params: BlockModelParams,
    init: Beliefs | int | np.random.Generator = 0,
    tol: float = 1e-6,
    max_sweeps: int = 500,
    damping: float = 0.1,
    schedule: Schedule = "sequential",
    blocks: int = DEFAULT_BLOCKS,
    threads: int = 1,
    executor: Executor | None = None,
) -> BPResult:
    """Sweep until the largest message change drops below tol.

    init is either warm Beliefs or a seed for random ones. With
    schedule="parallel" and threads > 1 the blocks of a sweep run on a
    thread pool (one is created unless `executor` is passed in).
    """
    if tol <= 0:
        raise DataError("tolerance must be positive")
    if max_sweeps < 1:
        raise DataError("need at least one sweep")
    beliefs = init if isinstance(init, Beliefs) else Beliefs.random(g, params.k, init)

    own_pool = None
    if schedule == "parallel" and threads > 1 and executor is None:
        own_pool = executor = ThreadPoolExecutor(max_workers=threads)
    try:
        change = np.inf
        for sweep in range(1, max_sweeps + 1):
            beliefs, q1, change = bp_sweep(
                g, params, beliefs, damping, schedule, blocks, executor
            )
            if change < tol:
                return BPResult(beliefs, q1, True, sweep, change)
    finally:
        if own_pool is not None:
            own_pool.shutdown()

    logger.info("BP stopped after %d sweeps, max change %.3g", max_sweeps, change)
    return BPResult(beliefs, beliefs.q1, False, max_sweeps, change)


def two_node_marginals(
    g: Graph, params: BlockModelParams, beliefs: Beliefs, strict: bool = False
) -> np.ndarray:
    """q2[u, r, s] for every undirected edge u = (src, dst), src < dst.

    q2 is proportional to omega_rs mu^{src->dst}_r mu^{dst->src}_s. With
    strict=True the factor exp(-d_src d_dst omega_rs) is kept as well.
    """
    de = g.directed_edges
    a = beliefs.mu[de.forward]
    b = beliefs.mu[de.backward]
    q2 = a[:, :, None] * params.omega[None, :, :] * b[:, None, :]
    if strict:
        dd = g.degrees[g.src] * g.degrees[g.dst]
        q2 *= np.exp(-dd[:, None, None] * params.omega[None, :, :])
    z = q2.sum(axis=(1, 2))
    bad = ~(np.isfinite(z) & (z > 0))
    if bad.any():
        u = int(np.flatnonzero(bad)[0])
        raise DegenerateEdgeError(
            f"edge {g.node_ids[g.src[u]]}-{g.node_ids[g.dst[u]]} has zero pair weight"
        )
    return q2 / z[:, None, None]
