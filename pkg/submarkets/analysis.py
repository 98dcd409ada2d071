"""Descriptive statistics of submarkets: ages, sexes, ethnicity and messaging.

Every statistic returns tidy rows (one per cell) that `format_rows` writes as
CSV and `bundle` as JSON. Cells with too little support are kept and flagged;
empty cells are left out with a warning.
"""

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from typing import Any, Iterable, Literal, Sequence

import numpy as np

from .attributes import ETHNICITIES, SEXES, AttributeTable, ContactLog
from .errors import DataError, UndefinedFractionError
from .graph import Graph

logger = logging.getLogger(__name__)

QUANTILES = (0.09, 0.25, 0.50, 0.75, 0.91)
MIN_MEMBERS = 10
MIN_MESSAGES = 20

Weighting = Literal["users", "messages"]
Stage = Literal["sent", "replied"]
Direction = Literal["M->F", "F->M"]

Submarkets = dict[str, int]


def _submarket(submarkets: Submarkets, node_id: str) -> int:
    try:
        return submarkets[node_id]
    except KeyError:
        raise DataError(f"node {node_id!r} has no submarket") from None


def within_fraction(edges: Graph | ContactLog, submarkets: Submarkets) -> float:
    """Share of interactions whose two ends lie in the same submarket.

    Graph edges count by weight and node-internal weight counts as within.
    Contact records count once each.
    """
    if isinstance(edges, Graph):
        label = np.array([_submarket(submarkets, n) for n in edges.node_ids])
        total = edges.weight.sum() + edges.internal.sum()
        same = edges.weight[label[edges.src] == label[edges.dst]].sum()
        within = same + edges.internal.sum()
    else:
        total = len(edges)
        within = sum(
            _submarket(submarkets, r.sender) == _submarket(submarkets, r.receiver)
            for r in edges
        )
    if total <= 0:
        raise UndefinedFractionError("no interactions to take a fraction of")
    return float(within / total)


def _members(
    submarkets: Submarkets, attrs: AttributeTable
) -> dict[int, list[str]]:
    out: dict[int, list[str]] = defaultdict(list)
    for node_id, sub in submarkets.items():
        if node_id not in attrs:
            raise DataError(f"no attributes for node {node_id!r}")
        out[sub].append(node_id)
    return dict(sorted(out.items()))


@dataclass
class QuantileRow:
    submarket: int
    sex: str
    count: int
    p9: float
    p25: float
    p50: float
    p75: float
    p91: float
    low_support: bool


def age_quantiles(
    submarkets: Submarkets,
    attrs: AttributeTable,
    by_sex: bool = True,
    min_count: int = MIN_MEMBERS,
) -> list[QuantileRow]:
    """9th, 25th, 50th, 75th and 91st age percentile per submarket (and sex).

    Percentiles interpolate linearly between order statistics at position
    1 + (n - 1) p.
    """
    rows = []
    for sub, members in _members(submarkets, attrs).items():
        cells = SEXES if by_sex else ("all",)
        for sex in cells:
            ages = [
                attrs[n].age
                for n in members
                if attrs[n].age is not None and (sex == "all" or attrs[n].sex == sex)
            ]
            if not ages:
                logger.warning("no ages for submarket %d, sex %s; cell omitted", sub, sex)
                continue
            q = np.quantile(np.asarray(ages, dtype=np.float64), QUANTILES)
            rows.append(
                QuantileRow(sub, sex, len(ages), *map(float, q),
                            low_support=len(ages) < min_count)
            )
    return rows


@dataclass
class SexRatioRow:
    submarket: str
    men: int
    women: int
    percent_men: float
    percent_women: float


def _ratio_row(label: str, men: int, women: int) -> SexRatioRow:
    total = men + women
    return SexRatioRow(label, men, women, 100.0 * men / total, 100.0 * women / total)


def sex_ratio(submarkets: Submarkets, attrs: AttributeTable) -> list[SexRatioRow]:
    """Percentage of men and women per submarket, then an "overall" row."""
    rows = []
    all_men = all_women = 0
    for sub, members in _members(submarkets, attrs).items():
        men = sum(attrs[n].sex == "M" for n in members)
        women = len(members) - men
        all_men += men
        all_women += women
        rows.append(_ratio_row(str(sub), men, women))
    if all_men + all_women == 0:
        logger.warning("no members in any submarket")
        return rows
    rows.append(_ratio_row("overall", all_men, all_women))
    return rows


def _received_counts(log: ContactLog | None) -> dict[str, int]:
    counts: dict[str, int] = defaultdict(int)
    for r in log or ():
        counts[r.receiver] += 1
    return counts


def _weighted_mean(values: Sequence[float], weights: Sequence[float]) -> float:
    total = math.fsum(weights)
    return math.fsum(v * w for v, w in zip(values, weights)) / total


@dataclass
class MinorityAgeRow:
    submarket: int
    sex: str
    ethnicity: str
    count: int
    mean_age: float
    reference_mean_age: float
    difference: float
    low_support: bool


def relative_minority_age(
    submarkets: Submarkets,
    attrs: AttributeTable,
    reference: str = "White",
    sex: str = "F",
    weighting: Weighting = "users",
    log: ContactLog | None = None,
    min_count: int = MIN_MEMBERS,
) -> list[MinorityAgeRow]:
    """Mean age of each ethnicity minus the reference ethnicity's, same sex and submarket.

    With weighting="messages" each user counts once per first contact
    received, which needs the contact log.
    """
    if reference not in ETHNICITIES:
        raise DataError(f"unknown reference ethnicity {reference!r}")
    if weighting == "messages" and log is None:
        raise DataError("message weighting needs a contact log")
    received = _received_counts(log)

    def weight(node_id: str) -> float:
        return 1.0 if weighting == "users" else float(received.get(node_id, 0))

    rows = []
    for sub, members in _members(submarkets, attrs).items():
        by_eth: dict[str, list[str]] = defaultdict(list)
        for n in members:
            a = attrs[n]
            if a.sex == sex and a.age is not None and weight(n) > 0:
                by_eth[a.ethnicity].append(n)
        ref = by_eth.get(reference)
        if not ref:
            logger.warning(
                "submarket %d has no %s users of sex %s; omitted", sub, reference, sex
            )
            continue
        ref_mean = _weighted_mean([attrs[n].age for n in ref], [weight(n) for n in ref])
        for eth in ETHNICITIES:
            group = by_eth.get(eth)
            if not group:
                continue
            mean = _weighted_mean(
                [attrs[n].age for n in group], [weight(n) for n in group]
            )
            rows.append(
                MinorityAgeRow(sub, sex, eth, len(group), mean, ref_mean,
                               mean - ref_mean, low_support=len(group) < min_count)
            )
    return rows


@dataclass
class CompositionRow:
    submarket: int
    sex: str
    ethnicity: str
    count: int
    percent: float


def ethnic_composition(
    submarkets: Submarkets, attrs: AttributeTable, by_sex: bool = True
) -> list[CompositionRow]:
    """Percentage of each ethnicity within every submarket (and sex)."""
    rows = []
    for sub, members in _members(submarkets, attrs).items():
        for sex in SEXES if by_sex else ("all",):
            cell = [n for n in members if sex == "all" or attrs[n].sex == sex]
            if not cell:
                logger.warning("submarket %d has no members of sex %s", sub, sex)
                continue
            for eth in ETHNICITIES:
                count = sum(attrs[n].ethnicity == eth for n in cell)
                rows.append(CompositionRow(sub, sex, eth, count, 100.0 * count / len(cell)))
    return rows


@dataclass
class ContactMatrix:
    """Counts of first contacts between sender and receiver submarkets."""

    direction: str
    submarkets: list[int]
    sent: np.ndarray
    replied: np.ndarray
    min_messages: int = MIN_MESSAGES

    @property
    def low_support(self) -> np.ndarray:
        return self.sent < self.min_messages

    def mixing(self) -> np.ndarray:
        """Row-stochastic message fractions; rows without messages are NaN."""
        totals = self.sent.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, self.sent / totals, np.nan)

    def reply_rates(self) -> np.ndarray:
        """Replied over sent per cell; NaN where nothing was sent."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.sent > 0, self.replied / self.sent, np.nan)


def _parse_direction(direction: str) -> tuple[str, str]:
    try:
        sender, receiver = (s.strip().upper() for s in direction.split("->"))
    except ValueError:
        raise DataError(f"direction must look like 'M->F', got {direction!r}") from None
    if {sender, receiver} != set(SEXES):
        raise DataError(f"direction must be 'M->F' or 'F->M', got {direction!r}")
    return sender, receiver


def contact_matrix(
    log: ContactLog,
    submarkets: Submarkets,
    attrs: AttributeTable,
    direction: Direction = "M->F",
    min_messages: int = MIN_MESSAGES,
) -> ContactMatrix:
    sender_sex, receiver_sex = _parse_direction(direction)
    labels = sorted(set(submarkets.values()))
    index = {s: i for i, s in enumerate(labels)}
    sent = np.zeros((len(labels), len(labels)), dtype=np.int64)
    replied = np.zeros_like(sent)
    for r in log:
        a, b = attrs.require((r.sender, r.receiver))
        if a.sex != sender_sex or b.sex != receiver_sex:
            continue
        i = index[_submarket(submarkets, r.sender)]
        j = index[_submarket(submarkets, r.receiver)]
        sent[i, j] += 1
        replied[i, j] += r.replied
    for i in np.flatnonzero(sent.sum(axis=1) == 0):
        logger.warning("no %s messages from submarket %d; row omitted",
                       direction, labels[i])
    return ContactMatrix(f"{sender_sex}->{receiver_sex}", labels, sent, replied,
                         min_messages)


def mixing_matrix(
    log: ContactLog,
    submarkets: Submarkets,
    attrs: AttributeTable,
    direction: Direction = "M->F",
) -> np.ndarray:
    return contact_matrix(log, submarkets, attrs, direction).mixing()


def reply_matrix(
    log: ContactLog,
    submarkets: Submarkets,
    attrs: AttributeTable,
    direction: Direction = "M->F",
) -> np.ndarray:
    return contact_matrix(log, submarkets, attrs, direction).reply_rates()


@dataclass
class MixingRow:
    direction: str
    sender_submarket: int
    receiver_submarket: int
    sent: int
    replied: int
    fraction: float
    reply_rate: float
    low_support: bool


def mixing_rows(matrix: ContactMatrix) -> list[MixingRow]:
    fractions, rates = matrix.mixing(), matrix.reply_rates()
    rows = []
    for i, r in enumerate(matrix.submarkets):
        if matrix.sent[i].sum() == 0:
            continue
        for j, s in enumerate(matrix.submarkets):
            rows.append(
                MixingRow(matrix.direction, r, s, int(matrix.sent[i, j]),
                          int(matrix.replied[i, j]), float(fractions[i, j]),
                          float(rates[i, j]), bool(matrix.low_support[i, j]))
            )
    return rows


@dataclass
class AgeGapMatrix:
    """Mean sender-minus-receiver age by (sender ethnicity, submarket) and receiver ethnicity.

    Cells without records hold NaN and print as X.
    """

    stage: str
    rows: list[tuple[str, int]]
    columns: list[str]
    values: np.ndarray
    counts: np.ndarray

    def cell(self, sender_ethnicity: str, submarket: int, receiver_ethnicity: str) -> float:
        i = self.rows.index((sender_ethnicity, submarket))
        return float(self.values[i, self.columns.index(receiver_ethnicity)])

    def tidy(self) -> list["AgeGapRow"]:
        return [
            AgeGapRow(self.stage, eth, sub, col, int(self.counts[i, j]),
                      float(self.values[i, j]))
            for i, (eth, sub) in enumerate(self.rows)
            for j, col in enumerate(self.columns)
        ]


@dataclass
class AgeGapRow:
    stage: str
    sender_ethnicity: str
    submarket: int
    receiver_ethnicity: str
    count: int
    mean_gap: float


def age_gap_matrix(
    log: ContactLog,
    attrs: AttributeTable,
    submarkets: Submarkets,
    stage: Stage = "sent",
    sender_sex: str = "M",
    weighting: Weighting = "messages",
) -> AgeGapMatrix:
    """Mean age difference per cell, over contacts sent or only those replied to.

    Submarket is the sender's. weighting="users" averages each sender's
    mean gap instead of every message.
    """
    if stage not in ("sent", "replied"):
        raise DataError(f"stage must be 'sent' or 'replied', got {stage!r}")
    if weighting not in ("users", "messages"):
        raise DataError(f"unknown weighting {weighting!r}")
    subs = sorted(set(submarkets.values()))
    row_keys = [(eth, sub) for eth in ETHNICITIES for sub in subs]
    row_index = {key: i for i, key in enumerate(row_keys)}
    col_index = {eth: j for j, eth in enumerate(ETHNICITIES)}

    gaps: dict[tuple[int, int], dict[str, list[float]]] = defaultdict(
        lambda: defaultdict(list)
    )
    for r in log:
        if stage == "replied" and not r.replied:
            continue
        a, b = attrs.require((r.sender, r.receiver))
        if a.sex != sender_sex or b.sex == sender_sex:
            continue
        if a.age is None or b.age is None:
            continue
        i = row_index[(a.ethnicity, _submarket(submarkets, r.sender))]
        gaps[(i, col_index[b.ethnicity])][r.sender].append(a.age - b.age)

    values = np.full((len(row_keys), len(ETHNICITIES)), np.nan)
    counts = np.zeros(values.shape, dtype=np.int64)
    for (i, j), per_sender in gaps.items():
        all_gaps = [g for sender_gaps in per_sender.values() for g in sender_gaps]
        counts[i, j] = len(all_gaps)
        if weighting == "messages":
            values[i, j] = math.fsum(all_gaps) / len(all_gaps)
        else:
            means = [math.fsum(v) / len(v) for v in per_sender.values()]
            values[i, j] = math.fsum(means) / len(means)
    return AgeGapMatrix(stage, row_keys, list(ETHNICITIES), values, counts)


def _cell(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return "X"
    if isinstance(value, bool):
        return int(value)
    return value


def format_rows(rows: Iterable[Any]) -> str:
    """Tidy CSV with a header from the row dataclass's fields; NaN prints as X."""
    rows = list(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if not rows:
        return ""
    names = [f.name for f in fields(rows[0])]
    writer.writerow(names)
    for row in rows:
        writer.writerow([_cell(getattr(row, name)) for name in names])
    return buf.getvalue()


def bundle(figure: str, rows: Iterable[Any], **extra: Any) -> dict[str, Any]:
    """JSON-ready bundle; NaN becomes null."""

    def clean(value: Any) -> Any:
        if isinstance(value, float) and not math.isfinite(value):
            return None
        return value

    return {
        "figure": figure,
        **extra,
        "rows": [{k: clean(v) for k, v in asdict(row).items()} for row in rows],
    }
