"""Degree-corrected stochastic block model: parameters, sampling, likelihood."""

import json
import logging
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np

from .errors import DataError, DenseRegimeError
from .graph import Graph
from .partition import Partition

logger = logging.getLogger(__name__)

GeneratorMode = Literal["simple", "multigraph"]

GAMMA_TOLERANCE = 1e-12
DEFAULT_MEAN_CAP = 50.0


@dataclass(frozen=True, eq=False)
class BlockModelParams:
    """Group prior gamma (length k) and symmetric affinity matrix omega (k x k)."""

    gamma: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        omega = np.atleast_2d(np.asarray(self.omega, dtype=np.float64))
        k = len(gamma)
        if k < 1:
            raise DataError("need at least one group")
        if omega.shape != (k, k):
            raise DataError(f"omega must be {k}x{k}, got {omega.shape}")
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(omega))):
            raise DataError("parameters must be finite")
        if np.any(gamma < 0) or abs(gamma.sum() - 1.0) > GAMMA_TOLERANCE:
            raise DataError("gamma must be non-negative and sum to 1")
        if np.any(omega < 0):
            raise DataError("omega must be non-negative")
        if not np.allclose(omega, omega.T, rtol=1e-12, atol=0.0):
            raise DataError("omega must be symmetric")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "omega", (omega + omega.T) / 2.0)

    @property
    def k(self) -> int:
        return len(self.gamma)

    def distance(self, other: "BlockModelParams", degree_total: float) -> float:
        """Largest change in gamma or in omega rescaled by the total degree."""
        return float(
            max(
                np.abs(self.gamma - other.gamma).max(),
                degree_total * np.abs(self.omega - other.omega).max(),
            )
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "gamma": self.gamma.tolist(),
            "omega": self.omega.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BlockModelParams":
        try:
            params = cls(gamma=data["gamma"], omega=data["omega"])
        except KeyError as e:
            raise DataError(f"parameters missing field {e.args[0]!r}") from None
        if "k" in data and int(data["k"]) != params.k:
            raise DataError(f"k={data['k']} does not match gamma of length {params.k}")
        return params

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "BlockModelParams":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"invalid parameter file: {e}") from None
        if not isinstance(data, dict):
            raise DataError("parameter file must hold a JSON object")
        return cls.from_dict(data)


def _max_pair_mean(
    degrees: np.ndarray, labels: np.ndarray, omega: np.ndarray
) -> float:
    """Largest d_i d_j omega over distinct node pairs."""
    k = len(omega)
    top = []
    for r in range(k):
        block = np.sort(degrees[labels == r])[::-1]
        top.append(block[:2])
    best = 0.0
    for r in range(k):
        for s in range(r, k):
            if r == s:
                if len(top[r]) < 2:
                    continue
                value = top[r][0] * top[r][1] * omega[r, r]
            else:
                if not (len(top[r]) and len(top[s])):
                    continue
                value = top[r][0] * top[s][0] * omega[r, s]
            best = max(best, float(value))
    return best


def generate(
    n: int,
    params: BlockModelParams,
    target_degrees: np.ndarray,
    seed: int = 0,
    mode: GeneratorMode = "simple",
    mean_cap: float = DEFAULT_MEAN_CAP,
) -> tuple[Graph, Partition]:
    """Sample planted labels and a graph from the block model.

    Labels are drawn from gamma, then every pair i < j receives
    Poisson(d_i d_j omega_{c_i c_j}) edges. mode="simple" keeps one edge per
    pair with a positive draw; mode="multigraph" keeps the draw as the edge
    weight. Equal seeds give identical output.
    """
    if n < 0:
        raise DataError("node count must be non-negative")
    degrees = np.asarray(target_degrees, dtype=np.float64)
    if degrees.shape != (n,):
        raise DataError(f"need {n} target degrees, got shape {degrees.shape}")
    if np.any(degrees < 0) or not np.all(np.isfinite(degrees)):
        raise DataError("target degrees must be finite and non-negative")
    if mode not in ("simple", "multigraph"):
        raise DataError(f"unknown generator mode {mode!r}")

    rng = np.random.default_rng(seed)
    labels = rng.choice(params.k, size=n, p=params.gamma) if n else np.zeros(0, int)
    node_ids = [str(i) for i in range(n)]

    peak = _max_pair_mean(degrees, labels, params.omega)
    if peak > mean_cap:
        raise DenseRegimeError(
            f"edge mean {peak:.3g} exceeds cap {mean_cap:g}; lower omega or degrees"
        )

    srcs, dsts, counts = [], [], []
    if params.omega.any():
        for i in range(n - 1):
            j = np.arange(i + 1, n)
            means = degrees[i] * degrees[j] * params.omega[labels[i], labels[j]]
            draws = rng.poisson(means)
            hit = np.flatnonzero(draws)
            if hit.size:
                srcs.append(np.full(hit.size, i))
                dsts.append(j[hit])
                counts.append(draws[hit])

    if srcs:
        src, dst = np.concatenate(srcs), np.concatenate(dsts)
        weight = np.concatenate(counts).astype(np.float64)
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        weight = np.zeros(0)
    if mode == "simple":
        weight = np.ones_like(weight)

    g = Graph.from_arrays(node_ids, src, dst, weight)
    logger.info("generated %d nodes and %d edges", n, g.edge_count)
    return g, Partition(labels, params.k)


def log_likelihood(g: Graph, c: Partition, params: BlockModelParams) -> float:
    """Sum over ordered pairs (i, j) of a_ij log omega - d_i d_j omega.

    Each undirected edge counts twice, and the d_i^2 omega_{c_i c_i} diagonal
    penalty is included. Edge weights act as multiplicities. Returns -inf,
    with a warning, if an edge falls where omega is zero.
    """
    if len(c) != g.node_count:
        raise DataError("partition does not cover the graph")
    if c.k > params.k:
        raise DataError(f"partition uses {c.k} groups, parameters have {params.k}")

    labels = c.labels
    group_degree = np.bincount(labels, weights=g.degrees, minlength=params.k)
    penalty = float(group_degree @ params.omega @ group_degree)

    w_edge = params.omega[labels[g.src], labels[g.dst]]
    if np.any((w_edge == 0) & (g.weight > 0)):
        logger.warning("edge between groups with zero affinity; likelihood is -inf")
        return -np.inf
    present = g.weight > 0
    edge_term = 2.0 * float(np.sum(g.weight[present] * np.log(w_edge[present])))
    return edge_term - penalty


def powerlaw_degrees(
    n: int,
    exponent: float = 2.5,
    d_min: float = 2.0,
    d_max: float | None = None,
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Target degrees from a continuous power law truncated to [d_min, d_max].

    d_max defaults to sqrt(n). Inverse-transform sampling.
    """
    if exponent <= 1:
        raise DataError("power-law exponent must exceed 1")
    d_max = float(np.sqrt(n)) if d_max is None else float(d_max)
    if not 0 < d_min <= d_max:
        raise DataError(f"need 0 < d_min <= d_max, got {d_min} and {d_max}")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=n)
    a = 1.0 - exponent
    lo, hi = d_min**a, d_max**a
    return (lo + u * (hi - lo)) ** (1.0 / a)


def assortative_params(
    k: int, ratio: float, total_degree: float, gamma: np.ndarray | None = None
) -> BlockModelParams:
    """Two-level affinity matrix: omega_in = ratio * omega_out.

    Scaled so that sum_s omega_rs D_s = 1 when each group holds an equal share
    of total_degree, which makes d_i the expected degree of node i. ratio < 1
    gives a disassortative structure.
    """
    if k < 1 or ratio < 0 or total_degree <= 0:
        raise DataError("need k >= 1, ratio >= 0 and positive total degree")
    share = total_degree / k
    omega_out = 1.0 / (share * (ratio + k - 1))
    omega = np.full((k, k), omega_out)
    np.fill_diagonal(omega, ratio * omega_out)
    gamma = np.full(k, 1.0 / k) if gamma is None else gamma
    return BlockModelParams(gamma=gamma, omega=omega)
