"""Pairing men's and women's communities into submarkets."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .attributes import AttributeTable
from .em import FitResult
from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class SubmarketMap:
    """Community -> submarket, with the notes raised while pairing."""

    community_to_submarket: dict[int, int]
    warnings: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(set(self.community_to_submarket.values()))

    def for_nodes(self, result: FitResult) -> dict[str, int]:
        return {
            node_id: self.community_to_submarket[int(c)]
            for node_id, c in zip(result.node_ids, result.assignment.labels)
        }


def _best_partner(omega: np.ndarray, c: int, candidates: list[int]) -> int:
    # max keeps the first maximum, and candidates are ascending.
    return max(sorted(candidates), key=lambda other: omega[c, other])


def pair_submarkets(result: FitResult, attrs: AttributeTable) -> SubmarketMap:
    """Pair each majority-male community with a majority-female one.

    Men's communities are taken in ascending order, each choosing the free
    women's community with the largest affinity. Unmatched communities stay
    on their own. A community without a sex majority, or without members,
    joins the submarket of its highest-affinity community. Submarkets are
    numbered by ascending median member age.
    """
    k = result.k
    if k % 2:
        raise DataError(f"pairing needs an even number of communities, got {k}")
    rows = attrs.require(result.node_ids)
    labels = result.assignment.labels
    omega = result.params.omega

    male = np.array([a.sex == "M" for a in rows], dtype=bool)
    size = np.bincount(labels, minlength=k)
    men = np.bincount(labels[male], minlength=k)

    men_groups = [c for c in range(k) if size[c] and 2 * men[c] > size[c]]
    women_groups = [c for c in range(k) if size[c] and 2 * men[c] < size[c]]
    unsettled = [c for c in range(k) if c not in men_groups and c not in women_groups]

    warnings: list[str] = []
    groups: list[list[int]] = []
    free = list(women_groups)
    for c in men_groups:
        if free:
            partner = _best_partner(omega, c, free)
            free.remove(partner)
            groups.append([c, partner])
        else:
            groups.append([c])
    groups.extend([c] for c in free)

    for c in unsettled:
        reason = "has no members" if not size[c] else "has no sex majority"
        others = [o for o in range(k) if o != c and o not in unsettled]
        if not others:
            groups.append([c])
            continue
        partner = _best_partner(omega, c, others)
        message = f"community {c} {reason}; joined with community {partner} by affinity"
        logger.warning(message)
        warnings.append(message)
        next(group for group in groups if partner in group).append(c)

    ages = [a.age for a in rows]
    have_ages = all(age is not None for age in ages)

    def order_key(group: list[int]) -> tuple[float, int]:
        if have_ages:
            member_ages = [ages[i] for i in np.flatnonzero(np.isin(labels, group))]
            if member_ages:
                return float(np.median(member_ages)), min(group)
            return np.inf, min(group)
        return 0.0, min(group)

    mapping: dict[int, int] = {}
    for index, group in enumerate(sorted(groups, key=order_key)):
        for c in group:
            mapping[c] = index
    return SubmarketMap(dict(sorted(mapping.items())), warnings)
