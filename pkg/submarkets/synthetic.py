"""Planted-truth dating markets: block parameters, attributes and contact logs.

Groups [0, B) are men and [B, 2B) are women; the age block of group g is
g mod B. Submarket b therefore consists of groups b and B + b.
"""

import logging

import numpy as np

from .attributes import ETHNICITIES, AttributeTable, Attributes, Contact, ContactLog
from .dcsbm import BlockModelParams
from .errors import DataError
from .partition import Partition

logger = logging.getLogger(__name__)

DEFAULT_ETHNIC_SHARES = {
    "Asian": 0.1,
    "Black": 0.1,
    "Hispanic": 0.1,
    "White": 0.65,
    "Other": 0.05,
}


def group_sex(group: int, age_blocks: int) -> str:
    return "M" if group < age_blocks else "F"


def market_params(
    age_blocks: int,
    total_degree: float,
    cross_sex: float = 0.995,
    age_contrast: float = 20.0,
) -> BlockModelParams:
    """Parameters for 2 * age_blocks equally sized groups.

    Relative to other opposite-sex pairs, the same age block across sexes is
    age_contrast times more likely. A share cross_sex of every node's expected
    edges goes to the opposite sex. omega is scaled so expected degrees match
    target degrees summing to total_degree.
    """
    if age_blocks < 1:
        raise DataError("need at least one age block")
    if not 0.5 < cross_sex <= 1.0 or age_contrast < 1.0 or total_degree <= 0:
        raise DataError("need 0.5 < cross_sex <= 1, age_contrast >= 1, total_degree > 0")

    b = age_blocks
    cross = age_contrast + (b - 1)
    same = cross * (1.0 - cross_sex) / (cross_sex * b)

    pattern = np.full((2 * b, 2 * b), same)
    opposite = np.ones((b, b))
    np.fill_diagonal(opposite, age_contrast)
    pattern[:b, b:] = opposite
    pattern[b:, :b] = opposite

    k = 2 * b
    row_mass = cross + b * same
    omega = pattern * (k / (total_degree * row_mass))
    return BlockModelParams(gamma=np.full(k, 1.0 / k), omega=omega)


def planted_submarkets(planted: Partition, age_blocks: int) -> np.ndarray:
    """Submarket (age block) per node of a planted market partition."""
    return planted.labels % age_blocks


def synthetic_attributes(
    planted: Partition,
    age_blocks: int,
    seed: int = 0,
    node_ids: list[str] | None = None,
    base_age: float = 20.0,
    block_span: float = 8.0,
    ethnic_shares: dict[str, float] | None = None,
    age_offsets: dict[tuple[str, str], float] | None = None,
) -> AttributeTable:
    """Attributes consistent with a planted market.

    Sex follows the group, age is uniform within the group's age block
    window [base_age + b * block_span, base_age + (b + 1) * block_span), and
    ethnicity is drawn from ethnic_shares. age_offsets shifts the age of a
    (sex, ethnicity) cell, clipped to the valid age range.
    """
    if planted.k != 2 * age_blocks:
        raise DataError(
            f"market partition needs {2 * age_blocks} groups, got {planted.k}"
        )
    node_ids = node_ids or [str(i) for i in range(len(planted))]
    if len(node_ids) != len(planted):
        raise DataError("node ids do not match the partition")

    shares = dict(ethnic_shares or DEFAULT_ETHNIC_SHARES)
    names = [e for e in ETHNICITIES if shares.get(e, 0) > 0]
    p = np.array([shares[e] for e in names], dtype=np.float64)
    p /= p.sum()
    offsets = age_offsets or {}

    rng = np.random.default_rng(seed)
    blocks = planted.labels % age_blocks
    ages = base_age + block_span * (blocks + rng.uniform(size=len(planted)))
    ethnicity = rng.choice(len(names), size=len(planted), p=p)

    rows = {}
    for i, node_id in enumerate(node_ids):
        sex = group_sex(int(planted.labels[i]), age_blocks)
        eth = names[ethnicity[i]]
        age = float(np.clip(ages[i] + offsets.get((sex, eth), 0.0), 18.0, 100.0))
        rows[node_id] = Attributes(sex=sex, age=age, ethnicity=eth)
    return AttributeTable(rows)


def synthetic_contacts(
    attrs: AttributeTable,
    submarkets: dict[str, int],
    n_contacts: int,
    within_share: float = 0.57,
    reply_rate: float = 0.3,
    female_sender_share: float = 0.2,
    seed: int = 0,
) -> ContactLog:
    """First contacts between opposite-sex users.

    Each contact stays inside the sender's submarket with probability
    within_share and otherwise goes to a uniformly chosen user of the
    opposite sex in another submarket. Repeated ordered pairs are redrawn.
    """
    if not 0.0 <= within_share <= 1.0 or not 0.0 <= reply_rate <= 1.0:
        raise DataError("shares and rates must lie in [0, 1]")
    rng = np.random.default_rng(seed)

    pools: dict[tuple[str, int], list[str]] = {}
    by_sex: dict[str, list[str]] = {"M": [], "F": []}
    for node_id, sub in submarkets.items():
        sex = attrs[node_id].sex
        pools.setdefault((sex, sub), []).append(node_id)
        by_sex[sex].append(node_id)
    if not by_sex["M"] or not by_sex["F"]:
        raise DataError("contacts need users of both sexes")
    outside = {
        (sex, sub): [u for u in by_sex[sex] if submarkets[u] != sub]
        for sex in by_sex
        for sub in set(submarkets.values())
    }

    seen: set[tuple[str, str]] = set()
    records = []
    attempts = 0
    while len(records) < n_contacts and attempts < 20 * max(n_contacts, 1):
        attempts += 1
        sender_sex = "F" if rng.uniform() < female_sender_share else "M"
        other = "M" if sender_sex == "F" else "F"
        senders = by_sex[sender_sex]
        sender = senders[rng.integers(len(senders))]
        sub = submarkets[sender]
        own = pools.get((other, sub), [])
        if rng.uniform() < within_share and own:
            candidates = own
        else:
            candidates = outside[(other, sub)] or own
        receiver = candidates[rng.integers(len(candidates))]
        if (sender, receiver) in seen:
            continue
        seen.add((sender, receiver))
        records.append(Contact(sender, receiver, bool(rng.uniform() < reply_rate)))

    if len(records) < n_contacts:
        logger.warning(
            "only %d of %d distinct contacts could be drawn", len(records), n_contacts
        )
    return ContactLog.from_records(records)
