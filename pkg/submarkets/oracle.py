"""Exact posterior marginals by enumerating every group assignment."""

import logging

import numpy as np
from scipy.special import logsumexp

from .bp import Marginals
from .dcsbm import BlockModelParams
from .errors import DataError, OracleLimitError, RenormalizationError
from .graph import Graph

logger = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 10**7
CHUNK = 1 << 16


def _decode(start: int, stop: int, n: int, k: int) -> np.ndarray:
    """Assignments start..stop-1 as base-k digits, node 0 least significant."""
    idx = np.arange(start, stop, dtype=np.int64)
    place = k ** np.arange(n, dtype=np.int64)
    return (idx[:, None] // place[None, :]) % k


def exact_posterior(
    g: Graph,
    params: BlockModelParams,
    k: int | None = None,
    max_states: int = DEFAULT_MAX_STATES,
    pair_scale: float = 0.5,
) -> Marginals:
    """One- and two-node marginals of the block-model posterior.

    Each assignment c gets weight exp(pair_scale * L(c)) * prod_i gamma_{c_i},
    with L the ordered-pair log-likelihood. The default pair_scale of 0.5
    counts every unordered pair once, which is the generative model's own
    likelihood and the distribution belief propagation approximates;
    pair_scale=1 weights by exp(L) as written over ordered pairs.
    """
    k = params.k if k is None else k
    if k != params.k:
        raise DataError(f"k={k} does not match parameters with {params.k} groups")
    n, m = g.node_count, g.edge_count
    states = k**n
    if states > max_states:
        raise OracleLimitError(
            f"{k}^{n} = {states} assignments exceed the limit of {max_states}"
        )

    with np.errstate(divide="ignore"):
        log_omega = np.log(params.omega)
        log_gamma = np.log(params.gamma)
    present = g.weight > 0
    src, dst, w = g.src[present], g.dst[present], g.weight[present]
    d = g.degrees

    log_w = np.empty(states)
    for start in range(0, states, CHUNK):
        stop = min(states, start + CHUNK)
        c = _decode(start, stop, n, k)
        edge = 2.0 * (w * log_omega[c[:, src], c[:, dst]]).sum(axis=1)
        group_degree = np.stack(
            [(c == r) @ d for r in range(k)], axis=1
        ) if n else np.zeros((stop - start, k))
        penalty = np.einsum("br,rs,bs->b", group_degree, params.omega, group_degree)
        log_w[start:stop] = pair_scale * (edge - penalty) + log_gamma[c].sum(axis=1)

    total = logsumexp(log_w)
    if not np.isfinite(total):
        raise RenormalizationError("every assignment has zero posterior weight")
    prob = np.exp(log_w - total)

    q1 = np.zeros((n, k))
    q2 = np.zeros((m, k, k))
    for start in range(0, states, CHUNK):
        stop = min(states, start + CHUNK)
        c = _decode(start, stop, n, k)
        p = prob[start:stop]
        for i in range(n):
            q1[i] += np.bincount(c[:, i], weights=p, minlength=k)
        for u in range(m):
            pair = c[:, g.src[u]] * k + c[:, g.dst[u]]
            q2[u] += np.bincount(pair, weights=p, minlength=k * k).reshape(k, k)

    logger.debug("enumerated %d assignments", states)
    return Marginals(q1=q1, q2=q2)
