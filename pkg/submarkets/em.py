"""EM fitting of the degree-corrected block model with BP in the E-step."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable

import numpy as np
from scipy.sparse.csgraph import connected_components

from .bp import (
    DEFAULT_BLOCKS,
    Beliefs,
    Marginals,
    Schedule,
    run_bp,
    two_node_marginals,
)
from .dcsbm import BlockModelParams
from .errors import DataError, DegenerateFitError
from .graph import Graph
from .modularity import louvain
from .partition import Partition

logger = logging.getLogger(__name__)

COLLAPSE_MASS = 1e-8
INIT_JITTER = 0.5
# Hard-assignment repair between EM phases.
MAX_REPAIR_ROUNDS = 3
TINY_GROUP_SHARE = 0.05
DUPLICATE_LOSS = 0.05
START_BLEND = 0.1
LOOSE_BP_TOL = 1e-3


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 10
    seed: int = 0
    bp_tol: float = 1e-6
    em_tol: float = 1e-6
    max_sweeps: int = 500
    max_em_iters: int = 100
    damping: float = 0.1
    schedule: Schedule = "sequential"
    blocks: int = DEFAULT_BLOCKS
    threads: int = 1
    strict_q2: bool = False

    def validate(self) -> None:
        if self.restarts < 1:
            raise DataError("need at least one restart")
        if self.bp_tol <= 0 or self.em_tol <= 0:
            raise DataError("tolerances must be positive")
        if self.max_sweeps < 1 or self.max_em_iters < 1:
            raise DataError("iteration limits must be at least 1")
        if not 0.0 <= self.damping < 1.0:
            raise DataError("damping must lie in [0, 1)")
        if self.threads < 1:
            raise DataError("thread count must be at least 1")


@dataclass
class EMStep:
    iteration: int
    param_change: float
    bp_sweeps: int
    bp_converged: bool
    objective: float
    note: str = ""


@dataclass
class FitResult:
    """Parameters, marginals and hard assignment of the best restart.

    Assignment labels stay aligned with the rows of omega, so a group that
    attracted no node leaves its label unused.
    """

    params: BlockModelParams
    marginals: Marginals | None
    assignment: Partition
    history: list[EMStep]
    converged: bool
    node_ids: tuple[str, ...]
    objective: float
    restart: int = 0
    restart_objectives: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.params.k

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.params.to_dict(),
            "loglike_proxy": _json_float(self.objective),
            "converged": self.converged,
            "restart": self.restart,
            "restart_objectives": [_json_float(v) for v in self.restart_objectives],
            "assignments": {
                node_id: int(c)
                for node_id, c in zip(self.node_ids, self.assignment.labels)
            },
            "history": [
                {k: _json_float(v) if isinstance(v, float) else v
                 for k, v in asdict(step).items()}
                for step in self.history
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FitResult":
        """Rebuild a result from its JSON form; marginals are not included."""
        params = BlockModelParams.from_dict(data)
        try:
            assignments = data["assignments"]
        except KeyError:
            raise DataError("fit result lacks 'assignments'") from None
        node_ids = tuple(assignments)
        labels = np.array([int(assignments[n]) for n in node_ids], dtype=np.int64)
        history = [
            EMStep(**{k: math.nan if v is None else v for k, v in step.items()})
            for step in data.get("history", [])
        ]
        objective = data.get("loglike_proxy")
        return cls(
            params=params,
            marginals=None,
            assignment=Partition(labels, params.k),
            history=history,
            converged=bool(data.get("converged", False)),
            node_ids=node_ids,
            objective=-math.inf if objective is None else float(objective),
            restart=int(data.get("restart", 0)),
            restart_objectives=[
                float(v) if v is not None else -math.inf
                for v in data.get("restart_objectives", [])
            ],
        )


def _json_float(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def pair_counts(g: Graph, q2: np.ndarray) -> np.ndarray:
    """N_rs = sum over ordered adjacent pairs of q^{ij}_rs (edge weight as multiplicity)."""
    n = np.einsum("e,ers->rs", g.weight, q2)
    return n + n.T


def m_step(g: Graph, q1: np.ndarray, q2: np.ndarray) -> BlockModelParams:
    """Closed-form parameter update from one- and two-node marginals.

    gamma_r is the mean of q1[:, r]; omega_rs = N_rs / (D_r D_s) with
    D_r = sum_i d_i q^i_r. A group without degree mass gets a zero row and
    column of omega.
    """
    if q1.shape[0] != g.node_count or q2.shape[0] != g.edge_count:
        raise DataError("marginals do not match the graph")
    if g.node_count == 0:
        raise DataError("cannot fit an empty graph")
    gamma = q1.mean(axis=0)
    gamma = gamma / gamma.sum()
    group_degree = g.degrees @ q1
    denom = np.outer(group_degree, group_degree)
    omega = np.divide(
        pair_counts(g, q2), denom, out=np.zeros_like(denom), where=denom > 0
    )
    return BlockModelParams(gamma=gamma, omega=(omega + omega.T) / 2.0)


def objective_proxy(
    g: Graph, q1: np.ndarray, q2: np.ndarray, params: BlockModelParams
) -> float:
    """Expected complete-data log-likelihood under the marginals.

    sum N_rs log omega_rs - D^T omega D + sum_r (sum_i q^i_r) log gamma_r,
    where terms with zero weight count as zero.
    """
    counts = pair_counts(g, q2)
    group_degree = g.degrees @ q1
    mass = q1.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        edge = np.where(counts > 0, counts * np.log(params.omega), 0.0).sum()
        prior = np.where(mass > 0, mass * np.log(params.gamma), 0.0).sum()
    return float(edge - group_degree @ params.omega @ group_degree + prior)


def expected_degrees(g: Graph, q1: np.ndarray, params: BlockModelParams) -> np.ndarray:
    """Model expected degree d_i sum_r q^i_r sum_s omega_rs D_s per node."""
    return g.degrees * (q1 @ (params.omega @ (g.degrees @ q1)))


def init_params(g: Graph, k: int, rng: np.random.Generator) -> BlockModelParams:
    """Jittered flat start: omega around 1 / sum(d), gamma around 1 / k."""
    scale = 1.0 / g.degrees.sum()
    if k == 1:
        return BlockModelParams(gamma=np.ones(1), omega=np.full((1, 1), scale))
    gamma = (1.0 - INIT_JITTER) / k + INIT_JITTER * rng.dirichlet(np.ones(k))
    r = rng.uniform(-0.5, 0.5, size=(k, k))
    omega = scale * (1.0 + INIT_JITTER * (r + r.T) / 2.0)
    return BlockModelParams(gamma=gamma / gamma.sum(), omega=omega)


def _reseed(
    params: BlockModelParams, collapsed: np.ndarray, rng: np.random.Generator
) -> BlockModelParams:
    """Give collapsed groups the average prior and affinity, slightly jittered."""
    k = params.k
    gamma = params.gamma.copy()
    gamma[collapsed] = 1.0 / k
    omega = params.omega.copy()
    mean = omega.mean()
    for r in np.flatnonzero(collapsed):
        row = mean * (1.0 + INIT_JITTER * rng.uniform(-0.5, 0.5, size=k))
        omega[r, :] = row
        omega[:, r] = row
    return BlockModelParams(gamma=gamma / gamma.sum(), omega=omega)


def block_counts(
    g: Graph, labels: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ordered-pair edge counts, degree totals and sizes of a hard assignment."""
    counts = np.zeros((k, k))
    np.add.at(counts, (labels[g.src], labels[g.dst]), g.weight)
    return (
        counts + counts.T,
        np.bincount(labels, weights=g.degrees, minlength=k),
        np.bincount(labels, minlength=k).astype(np.float64),
    )


def block_score(counts: np.ndarray, degree: np.ndarray, sizes: np.ndarray) -> float:
    """Profile log-likelihood of a hard assignment at its best gamma and omega."""
    denom = np.outer(degree, degree)
    used = (counts > 0) & (denom > 0)
    edge = (counts[used] * np.log(counts[used] / denom[used])).sum()
    filled = sizes > 0
    prior = (sizes[filled] * np.log(sizes[filled] / sizes.sum())).sum()
    return float(edge - counts.sum() + prior)


def _merged(
    counts: np.ndarray, degree: np.ndarray, sizes: np.ndarray, r: int, s: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    counts, degree, sizes = counts.copy(), degree.copy(), sizes.copy()
    counts[r, :] += counts[s, :]
    counts[:, r] += counts[:, s]
    counts[s, :] = 0.0
    counts[:, s] = 0.0
    for arr in (degree, sizes):
        arr[r] += arr[s]
        arr[s] = 0.0
    return counts, degree, sizes


def duplicate_pair(
    counts: np.ndarray, degree: np.ndarray, sizes: np.ndarray
) -> tuple[int, int] | None:
    """The two groups whose merge costs least, if they are near-duplicates.

    The cost is the drop in block_score per edge end of the pair; pairs
    above DUPLICATE_LOSS are distinct groups.
    """
    base = block_score(counts, degree, sizes)
    best, best_loss = None, DUPLICATE_LOSS
    k = len(sizes)
    for r in range(k):
        for s in range(r + 1, k):
            ends = degree[r] + degree[s]
            if not (sizes[r] and sizes[s]) or ends <= 0:
                continue
            loss = (base - block_score(*_merged(counts, degree, sizes, r, s))) / ends
            if loss < best_loss:
                best, best_loss = (r, s), loss
    return best


def split_group(
    g: Graph, members: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Bisect a group by Louvain on the graph of shared neighbors.

    Returns a mask over members marking the half that moves. Louvain
    communities merge pairwise, most connected relative to their volumes
    first, until two remain; members without shared neighbors join the
    smaller half. Falls back to a random half.
    """
    half = rng.permutation(len(members)) < len(members) // 2
    if len(members) < 4:
        return half
    rows = g.csr[members, :]
    shared = (rows @ rows.T).tocoo()
    upper = shared.row < shared.col
    a, b, w = shared.row[upper], shared.col[upper], shared.data[upper]
    strong = w > 1
    if strong.sum() >= len(members):
        a, b, w = a[strong], b[strong], w[strong]
    if not len(w):
        return half

    sub = Graph.from_arrays(map(str, range(len(members))), a, b, w)
    p = louvain(sub, seed=int(rng.integers(2**31 - 1)))
    between = np.zeros((p.k, p.k))
    np.add.at(between, (p.labels[sub.src], p.labels[sub.dst]), sub.weight)
    between = between + between.T
    volume = between.sum(axis=1)
    clusters = [[c] for c in np.flatnonzero(volume > 0)]
    if len(clusters) < 2:
        return half

    links = between[np.ix_(volume > 0, volume > 0)]
    np.fill_diagonal(links, 0.0)
    vol = volume[volume > 0]
    while len(clusters) > 2:
        score = links / np.outer(vol, vol)
        np.fill_diagonal(score, -np.inf)
        r, s = sorted(np.unravel_index(np.argmax(score), score.shape))
        links[r] += links[s]
        links[:, r] += links[:, s]
        links[r, r] = 0.0
        vol[r] += vol[s]
        links = np.delete(np.delete(links, s, axis=0), s, axis=1)
        vol = np.delete(vol, s)
        clusters[r].extend(clusters.pop(s))

    side = np.full(p.k, -1)
    for x, cluster in enumerate(clusters):
        side[cluster] = x
    counts = [np.isin(p.labels, cluster).sum() for cluster in clusters]
    side[side < 0] = int(np.argmin(counts))
    return side[p.labels] == 1


def repair_labels(
    g: Graph, labels: np.ndarray, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, str] | None:
    """Refill empty or tiny groups, or merge a duplicate pair, by splitting donors.

    Tiny groups (fewer hard members than TINY_GROUP_SHARE of n / k) are
    refilled first. Otherwise the cheapest near-duplicate pair merges and the
    freed label takes half of the largest group; that move is kept only if it
    raises block_score. Returns None when nothing needs repair.
    """
    if k < 2:
        return None
    counts, degree, sizes = block_counts(g, labels, k)
    tiny = np.flatnonzero(sizes < max(1.0, TINY_GROUP_SHARE * g.node_count / k))
    relabeled = labels.copy()
    if tiny.size:
        free = tiny.tolist()
        note = f"refilled groups {free}"
    else:
        pair = duplicate_pair(counts, degree, sizes)
        if pair is None:
            return None
        r, s = pair
        relabeled[relabeled == s] = r
        free = [s]
        note = f"merged groups {r} and {s}"

    now = np.bincount(relabeled, minlength=k)
    donors = [int(c) for c in np.argsort(-now, kind="stable") if c not in free and now[c] >= 2]
    if not donors:
        return None
    for target, donor in zip(free, donors):
        members = np.flatnonzero(relabeled == donor)
        relabeled[members[split_group(g, members, rng)]] = target
        note += f", split group {donor}"

    if not tiny.size and block_score(*block_counts(g, relabeled, k)) <= block_score(
        counts, degree, sizes
    ):
        return None
    return relabeled, note


def start_from(g: Graph, labels: np.ndarray, k: int) -> tuple[BlockModelParams, Beliefs]:
    """Parameters and beliefs fitted to a hard assignment, blended toward flat."""
    onehot = np.eye(k)[labels]
    q2 = onehot[g.src][:, :, None] * onehot[g.dst][:, None, :]
    hard = m_step(g, onehot, q2)
    params = BlockModelParams(
        gamma=(1.0 - START_BLEND) * hard.gamma + START_BLEND / k,
        omega=(1.0 - START_BLEND) * hard.omega + START_BLEND * hard.omega.mean(),
    )
    soft = (1.0 - START_BLEND) * onehot + START_BLEND / k
    return params, Beliefs(soft[g.directed_edges.src], soft)


@dataclass
class _Restart:
    params: BlockModelParams
    marginals: Marginals
    history: list[EMStep]
    converged: bool
    objective: float


class _Collapsed(Exception):
    """A group lost its mass a second time within one restart."""


def _em_phase(
    g: Graph,
    params: BlockModelParams,
    beliefs: Beliefs,
    options: FitOptions,
    rng: np.random.Generator,
    executor: ThreadPoolExecutor | None,
    history: list[EMStep],
    reseeded: bool,
) -> tuple[_Restart | None, np.ndarray, bool]:
    degree_total = float(g.degrees.sum())
    last: _Restart | None = None
    change = math.inf

    for _ in range(options.max_em_iters):
        iteration = len(history) + 1
        # BP runs loose while the parameters still move a lot.
        tol = max(options.bp_tol, min(LOOSE_BP_TOL, 0.1 * change))
        bp = run_bp(
            g,
            params,
            beliefs,
            tol=tol,
            max_sweeps=options.max_sweeps,
            damping=options.damping,
            schedule=options.schedule,
            blocks=options.blocks,
            executor=executor,
        )
        beliefs = bp.beliefs

        collapsed = bp.q1.sum(axis=0) < COLLAPSE_MASS * g.node_count
        if collapsed.any():
            groups = np.flatnonzero(collapsed).tolist()
            if reseeded:
                logger.warning("groups %s collapsed again; restart abandoned", groups)
                raise _Collapsed
            logger.warning("groups %s collapsed; reseeding", groups)
            params = _reseed(params, collapsed, rng)
            reseeded = True
            change = math.inf
            history.append(
                EMStep(iteration, math.nan, bp.sweeps, bp.converged, math.nan,
                       note=f"reseeded groups {groups}")
            )
            continue

        q2 = two_node_marginals(g, params, beliefs, strict=options.strict_q2)
        new = m_step(g, bp.q1, q2)
        change = params.distance(new, degree_total)
        objective = objective_proxy(g, bp.q1, q2, new)
        history.append(EMStep(iteration, change, bp.sweeps, bp.converged, objective))
        logger.debug("EM iteration %d: change %.3g, objective %.6g",
                     iteration, change, objective)
        params = new
        last = _Restart(new, Marginals(bp.q1, q2), history, False, objective)
        if change < options.em_tol:
            last.converged = True
            break

    return last, beliefs.q1, reseeded


def _fit_once(
    g: Graph,
    k: int,
    options: FitOptions,
    rng: np.random.Generator,
    executor: ThreadPoolExecutor | None,
) -> _Restart | None:
    """One restart: EM from a random start, then up to MAX_REPAIR_ROUNDS
    refits from repaired hard assignments. The best phase by objective wins.
    """
    params = init_params(g, k, rng)
    beliefs = Beliefs.random(g, k, rng)
    history: list[EMStep] = []
    reseeded = False
    best: _Restart | None = None

    for round_ in range(MAX_REPAIR_ROUNDS + 1):
        try:
            state, q1, reseeded = _em_phase(
                g, params, beliefs, options, rng, executor, history, reseeded
            )
        except _Collapsed:
            return None
        if state is not None and (best is None or state.objective > best.objective):
            best = state
        if round_ == MAX_REPAIR_ROUNDS:
            break
        repair = repair_labels(g, np.argmax(q1, axis=1), k, rng)
        if repair is None:
            break
        labels, note = repair
        logger.info("%s; refitting", note)
        history.append(
            EMStep(len(history) + 1, math.nan, 0, True, math.nan, note=note)
        )
        params, beliefs = start_from(g, labels, k)

    return best


def _require_fittable(g: Graph, k: int) -> None:
    if k < 1:
        raise DataError("k must be at least 1")
    if g.edge_count == 0:
        raise DataError("cannot fit a graph without edges")
    n_comp, _ = connected_components(g.csr, directed=False)
    if n_comp > 1:
        raise DataError(
            f"graph has {n_comp} connected components; restrict it to the largest"
        )
    if not g.is_simple:
        logger.warning("graph is weighted; weights are treated as edge multiplicities")


def fit(g: Graph, k: int, options: FitOptions | None = None) -> FitResult:
    """Fit k groups by alternating BP and the M-step, over several restarts.

    Restart r draws from the r-th child of SeedSequence(seed), so results
    depend only on the inputs and the seed. The restart with the highest
    objective proxy wins, ties going to the earlier restart.
    """
    options = options or FitOptions()
    options.validate()
    _require_fittable(g, k)

    seeds = np.random.SeedSequence(options.seed).spawn(options.restarts)
    pool = (
        ThreadPoolExecutor(max_workers=options.threads)
        if options.schedule == "parallel" and options.threads > 1
        else None
    )
    runs: list[_Restart | None] = []
    try:
        for r, child in enumerate(seeds):
            run = _fit_once(g, k, options, np.random.default_rng(child), pool)
            runs.append(run)
            if run is None:
                logger.info("restart %d degenerate", r)
            else:
                logger.info("restart %d: objective %.6g, %d EM iterations",
                            r, run.objective, len(run.history))
    finally:
        if pool is not None:
            pool.shutdown()

    objectives = [-math.inf if run is None else run.objective for run in runs]
    usable = [r for r, run in enumerate(runs) if run is not None]
    if not usable:
        raise DegenerateFitError(
            f"all {options.restarts} restarts collapsed to fewer than {k} groups; "
            "try a smaller k"
        )
    best = max(usable, key=lambda r: (objectives[r], -r))
    run = runs[best]
    assert run is not None

    labels = np.argmax(run.marginals.q1, axis=1)
    return FitResult(
        params=run.params,
        marginals=run.marginals,
        assignment=Partition(labels, k),
        history=run.history,
        converged=run.converged,
        node_ids=g.node_ids,
        objective=run.objective,
        restart=best,
        restart_objectives=objectives,
    )


def fit_many(
    g: Graph, ks: Iterable[int], options: FitOptions | None = None
) -> dict[int, FitResult]:
    """Independent fits for each k, keyed by k."""
    return {k: fit(g, k, options) for k in ks}


def write_marginals(q1: np.ndarray) -> bytes:
    """q1 as row-major little-endian float64."""
    return np.ascontiguousarray(q1, dtype="<f8").tobytes()


def read_marginals(data: bytes, k: int) -> np.ndarray:
    values = np.frombuffer(data, dtype="<f8")
    if k < 1 or values.size % k:
        raise DataError(f"marginals of {values.size} values do not split into k={k}")
    return values.reshape(-1, k).astype(np.float64)
