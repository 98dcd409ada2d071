"""Synthetic reproduction suite: planted-truth checks of every method.

Each check runs a small experiment and records a pass or fail item, in the
style of a validation report.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np

from .analysis import (
    age_gap_matrix,
    age_quantiles,
    contact_matrix,
    relative_minority_age,
    sex_ratio,
    within_fraction,
)
from .attributes import AttributeTable, Attributes, Contact, ContactLog
from .bp import run_bp, two_node_marginals
from .dcsbm import (
    BlockModelParams,
    assortative_params,
    generate,
    powerlaw_degrees,
)
from .em import FitOptions, FitResult, expected_degrees, fit
from .graph import (
    Graph,
    RegionInteractionLog,
    aggregate_by_region,
    largest_connected_component,
)
from .modularity import exhaustive_modularity_max, louvain, modularity
from .oracle import exact_posterior
from .pairing import pair_submarkets
from .partition import Partition, aligned_accuracy
from .synthetic import market_params, planted_submarkets, synthetic_attributes

logger = logging.getLogger(__name__)


class CheckLevel(Enum):
    PASS = "pass"  # ✓
    FAIL = "fail"  # ✗


@dataclass
class CheckItem:
    level: CheckLevel
    name: str
    detail: str
    seconds: float = 0.0

    @property
    def symbol(self) -> str:
        return {"pass": "✓", "fail": "✗"}[self.level.value]


@dataclass
class ReproReport:
    items: list[CheckItem] = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str, seconds: float = 0.0) -> None:
        level = CheckLevel.PASS if ok else CheckLevel.FAIL
        self.items.append(CheckItem(level, name, detail, seconds))

    @property
    def passed(self) -> bool:
        return all(item.level == CheckLevel.PASS for item in self.items)

    @property
    def failures(self) -> list[CheckItem]:
        return [i for i in self.items if i.level == CheckLevel.FAIL]

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "items": [
                {
                    "level": item.level.value,
                    "name": item.name,
                    "detail": item.detail,
                    "seconds": round(item.seconds, 3),
                }
                for item in self.items
            ],
        }

    def format(self) -> str:
        lines = [f"{i.symbol} {i.name}: {i.detail}" for i in self.items]
        total = len(self.items)
        lines.append(f"{total - len(self.failures)}/{total} checks passed")
        return "\n".join(lines)


@dataclass(frozen=True)
class ReproScale:
    trees: int = 50
    planted_n: int = 2000
    planted_k: int = 4
    planted_seeds: int = 10
    planted_needed: int = 8
    market_n: int = 2400
    market_blocks: int = 4
    robust_n: int = 2400
    robust_blocks: int = 6
    robust_ks: tuple[int, ...] = (6, 8, 10, 12)
    oracle_graphs: int = 20
    restarts: int = 10
    d_min: float = 8.0

    @classmethod
    def quick(cls) -> "ReproScale":
        return cls(
            trees=10,
            planted_n=600,
            planted_seeds=2,
            planted_needed=2,
            market_n=800,
            robust_n=900,
            robust_ks=(6, 8),
            oracle_graphs=5,
            restarts=3,
        )


def random_tree(n: int, rng: np.random.Generator) -> Graph:
    """Uniform attachment tree: node i joins a random earlier node."""
    parents = [int(rng.integers(i)) for i in range(1, n)]
    return Graph.from_arrays(
        [str(i) for i in range(n)], np.array(parents, dtype=np.int64), np.arange(1, n)
    )


def sparse_params(k: int, rng: np.random.Generator, scale: float = 1e-12) -> BlockModelParams:
    """Random parameters with omega small enough that non-edges carry no weight."""
    gamma = rng.dirichlet(np.ones(k))
    r = rng.uniform(0.1, 1.0, size=(k, k))
    return BlockModelParams(gamma=gamma, omega=scale * (r + r.T) / 2.0)


def check_tree_exactness(scale: ReproScale, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(scale.trees):
        n = int(rng.integers(2, 13))
        k = int(rng.integers(2, 4))
        g = random_tree(n, rng)
        params = sparse_params(k, rng)
        bp = run_bp(g, params, rng, tol=1e-13, max_sweeps=200, damping=0.0)
        exact = exact_posterior(g, params)
        q2 = two_node_marginals(g, params, bp.beliefs)
        worst = max(
            worst,
            float(np.abs(bp.q1 - exact.q1).max()),
            float(np.abs(q2 - exact.q2).max(initial=0.0)),
        )
    return worst <= 1e-6, f"{scale.trees} trees, max deviation {worst:.2e}"


def check_planted_recovery(scale: ReproScale) -> tuple[bool, str, list[float]]:
    accuracies, ratios = [], []
    for seed in range(scale.planted_seeds):
        rng = np.random.default_rng(seed)
        d = powerlaw_degrees(scale.planted_n, d_min=scale.d_min, seed=rng)
        params = assortative_params(scale.planted_k, 10.0, float(d.sum()))
        g, truth = generate(scale.planted_n, params, d, seed=seed)
        g, mapping = largest_connected_component(g)
        truth = Partition(truth.labels[mapping], truth.k)
        result = fit(g, scale.planted_k, FitOptions(restarts=scale.restarts, seed=seed))
        accuracies.append(aligned_accuracy(truth, result.assignment))
        expected = expected_degrees(g, result.marginals.q1, result.params)
        big = g.degrees >= 5
        ratios.append(float(np.abs(expected[big] / g.degrees[big] - 1.0).max()))
    good = sum(a >= 0.95 for a in accuracies)
    good = sum(a >= 0.95 for a in accuracies)
    detail = (
        f"{good}/{len(accuracies)} seeds at accuracy >= 0.95 (d_min {scale.d_min:g}): "
        f"{', '.join(f'{a:.3f}' for a in accuracies)}"
    )
    return good >= scale.planted_needed, detail, ratios


def _market(n: int, blocks: int, seed: int, d_min: float = 8.0):
    d = powerlaw_degrees(n, d_min=d_min, seed=seed)
    params = market_params(blocks, float(d.sum()), age_contrast=30.0)
    g, truth = generate(n, params, d, seed=seed)
    g, mapping = largest_connected_component(g)
    truth = Partition(truth.labels[mapping], truth.k)
    attrs = synthetic_attributes(truth, blocks, seed=seed, node_ids=list(g.node_ids))
    return g, truth, attrs


def _sex_purity(result: FitResult, attrs: AttributeTable) -> float:
    male = np.array([attrs[n].sex == "M" for n in result.node_ids])
    purity = []
    for c in range(result.k):
        members = result.assignment.labels == c
        if members.any():
            share = male[members].mean()
            purity.append(max(share, 1.0 - share))
    return min(purity)


def _found_submarkets(result: FitResult, attrs: AttributeTable) -> Partition:
    pairing = pair_submarkets(result, attrs)
    return Partition(
        np.array([pairing.community_to_submarket[int(c)] for c in result.assignment.labels]),
        pairing.count,
    )


def nested_share(planted: Partition, found: Partition) -> float:
    """Smallest share of a planted group that lands in its most common found group."""
    shares = []
    for r in range(planted.k):
        members = found.labels[planted.labels == r]
        if members.size:
            shares.append(np.bincount(members).max() / members.size)
    return float(min(shares))


def check_market(scale: ReproScale, seed: int = 0) -> tuple[bool, str]:
    blocks = scale.market_blocks
    g, truth, attrs = _market(scale.market_n, blocks, seed, scale.d_min)
    result = fit(g, 2 * blocks, FitOptions(restarts=scale.restarts, seed=seed))
    purity = _sex_purity(result, attrs)
    found = _found_submarkets(result, attrs)
    planted = Partition(planted_submarkets(truth, blocks), blocks)
    accuracy = aligned_accuracy(planted, found)
    ok = found.k == blocks and purity >= 0.95 and accuracy >= 0.95
    return ok, (
        f"{found.k} submarkets, min sex purity {purity:.3f}, "
        f"age-block accuracy {accuracy:.3f} (d_min {scale.d_min:g})"
    )


def check_modularity_oracle(scale: ReproScale, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(scale.oracle_graphs):
        n = int(rng.integers(3, 9))
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < 0.45]
        if not pairs:
            pairs = [(0, 1)]
        g = Graph.from_edges([str(i) for i in range(n)], [(i, j, 1.0) for i, j in pairs])
        best, _ = exhaustive_modularity_max(g)
        ok &= best >= modularity(g, louvain(g, seed=seed)) - 1e-12

    triangles = Graph.from_edges(
        list("abcdef"),
        [(0, 1, 1), (1, 2, 1), (0, 2, 1), (3, 4, 1), (4, 5, 1), (3, 5, 1)],
    )
    k5 = Graph.from_edges(
        list("abcde"), [(i, j, 1) for i in range(5) for j in range(i + 1, 5)]
    )
    for g in (triangles, k5):
        best, _ = exhaustive_modularity_max(g)
        ok &= abs(best - modularity(g, louvain(g))) <= 1e-12
        ok &= modularity(g, Partition(np.zeros(g.node_count, int), 1)) == 0.0
    return bool(ok), f"{scale.oracle_graphs} random graphs plus fixtures"


def two_region_log(zips_per_region: int = 5, within: int = 10) -> RegionInteractionLog:
    codes = [f"{100 + i}" for i in range(zips_per_region)] + [
        f"{200 + i}" for i in range(zips_per_region)
    ]
    records = []
    for a in codes:
        for b in codes:
            if a <= b:
                count = within if a[0] == b[0] else 1
                records.extend([(a, b)] * count)
    return RegionInteractionLog.from_pairs(records)


def check_geography() -> tuple[bool, str]:
    g = aggregate_by_region(two_region_log())
    p = louvain(g, resolution=0.65)
    q = modularity(g, p, resolution=0.65)
    regions = Partition.from_labels(int(code[0]) for code in g.node_ids)
    ok = p.k == 2 and aligned_accuracy(regions, p) == 1.0 and q > 0.3
    return ok, f"{p.k} communities, Q = {q:.3f}"


def analysis_fixture() -> tuple[dict[str, int], AttributeTable, ContactLog]:
    """Two submarkets of four users each with hand-checkable statistics."""
    rows = {
        "m1": Attributes("M", 30, "White"),
        "m2": Attributes("M", 34, "Asian"),
        "f1": Attributes("F", 25, "White"),
        "f2": Attributes("F", 22, "Black"),
        "m3": Attributes("M", 50, "White"),
        "m4": Attributes("M", 54, "White"),
        "f3": Attributes("F", 45, "White"),
        "f4": Attributes("F", 42, "Hispanic"),
    }
    submarkets = {"m1": 0, "m2": 0, "f1": 0, "f2": 0, "m3": 1, "m4": 1, "f3": 1, "f4": 1}
    log = ContactLog.from_records(
        [
            Contact("m1", "f1", True),
            Contact("m1", "f2", False),
            Contact("m2", "f1", True),
            Contact("m3", "f3", True),
            Contact("m4", "f4", False),
            Contact("m4", "f1", False),
            Contact("f3", "m3", True),
        ]
    )
    return submarkets, AttributeTable(rows), log


def check_analysis() -> tuple[bool, str]:
    submarkets, attrs, log = analysis_fixture()
    mixing = contact_matrix(log, submarkets, attrs)
    gaps = age_gap_matrix(log, attrs, submarkets)
    minority = {
        (r.submarket, r.ethnicity): r.difference
        for r in relative_minority_age(submarkets, attrs)
    }
    median = {(r.submarket, r.sex): r.p50 for r in age_quantiles(submarkets, attrs)}
    checks = [
        within_fraction(log, submarkets) == 6 / 7,
        median[(0, "M")] == 32.0,
        sex_ratio(submarkets, attrs)[-1].percent_men == 50.0,
        minority[(0, "Black")] == -3.0,
        np.array_equal(mixing.sent, [[3, 0], [1, 2]]),
        mixing.reply_rates()[0, 0] == 2 / 3,
        gaps.cell("White", 0, "White") == 5.0,
        np.isnan(gaps.cell("Asian", 1, "White")),
    ]
    return all(checks), f"{sum(checks)}/{len(checks)} hand-computed values"


def check_determinism(seed: int = 3) -> tuple[bool, str]:
    d = np.full(300, 8.0)
    params = assortative_params(2, 8.0, float(d.sum()))
    g, _ = generate(300, params, d, seed=seed)
    g, _ = largest_connected_component(g)
    options = FitOptions(restarts=2, seed=seed)
    first, second = fit(g, 2, options), fit(g, 2, options)
    same = json.dumps(first.to_dict()) == json.dumps(second.to_dict())

    bp = run_bp(g, first.params, seed, tol=1e-8)
    mu_ok = np.abs(bp.beliefs.mu.sum(axis=1) - 1.0).max() <= 1e-10
    q_ok = np.abs(bp.q1.sum(axis=1) - 1.0).max() <= 1e-10
    q2 = two_node_marginals(g, first.params, bp.beliefs)
    q2_ok = np.abs(q2.sum(axis=(1, 2)) - 1.0).max() <= 1e-10
    gamma_ok = abs(first.params.gamma.sum() - 1.0) <= 1e-12
    ok = same and mu_ok and q_ok and q2_ok and gamma_ok
    return bool(ok), "identical fits; beliefs, marginals and gamma normalized"


def check_robustness(scale: ReproScale, seed: int = 1) -> tuple[bool, str]:
    """Fit each k against a market of 2 * robust_blocks planted groups.

    Every k must give k / 2 submarkets of single-sex communities. Fewer
    submarkets than age blocks must keep each planted block whole; as many
    must recover the blocks.
    """
    blocks = scale.robust_blocks
    g, truth, attrs = _market(scale.robust_n, blocks, seed, scale.d_min)
    planted = Partition(planted_submarkets(truth, blocks), blocks)
    notes, ok = [], True
    for k in scale.robust_ks:
        result = fit(g, k, FitOptions(restarts=scale.restarts, seed=seed))
        purity = _sex_purity(result, attrs)
        found = _found_submarkets(result, attrs)
        note = f"k={k}: {found.k} submarkets, purity {purity:.3f}"
        ok &= found.k == k // 2 and purity >= 0.95
        if found.k < blocks:
            share = nested_share(planted, found)
            ok &= share >= 0.9
            note += f", blocks kept whole {share:.3f}"
        else:
            accuracy = aligned_accuracy(planted, found)
            ok &= accuracy >= 0.95
            note += f", age-block accuracy {accuracy:.3f}"
        notes.append(note)
    return bool(ok), "; ".join(notes)


def run_suite(scale: ReproScale | None = None) -> ReproReport:
    """Run every check; an exception inside a check fails that check only."""
    scale = scale or ReproScale()
    report = ReproReport()
    ratios: list[float] = []

    def planted() -> tuple[bool, str]:
        ok, detail, found = check_planted_recovery(scale)
        ratios.extend(found)
        return ok, detail

    def degrees() -> tuple[bool, str]:
        worst = max(ratios, default=np.inf)
        return worst <= 1e-2, f"max relative deviation {worst:.2e}"

    checks: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
        ("tree exactness", lambda: check_tree_exactness(scale)),
        ("planted assortative recovery", planted),
        ("sex and age market structure", lambda: check_market(scale)),
        ("expected degrees", degrees),
        ("modularity oracle", lambda: check_modularity_oracle(scale)),
        ("geographic pipeline", check_geography),
        ("analysis exactness", check_analysis),
        ("normalization and determinism", check_determinism),
        ("robustness across k", lambda: check_robustness(scale)),
    ]
    for name, check in checks:
        start = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as e:
            logger.exception("check %r raised", name)
            ok, detail = False, f"{type(e).__name__}: {e}"
        report.add(name, ok, detail, time.perf_counter() - start)
        logger.info("%s: %s", name, "pass" if ok else "fail")
    return report
