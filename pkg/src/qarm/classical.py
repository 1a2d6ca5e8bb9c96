"""Apriori-style F1/F2 mining, the sampling estimator and rule derivation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .dataset import ItemSet, TransactionDatabase, support_matrix_bruteforce

log = logging.getLogger(__name__)

# Absolute slack on the >= comparison so float round-off in estimated
# supports cannot flip an exact tie at the threshold.
THRESHOLD_SLACK = 1e-9

DENOMINATORS = ("consequent", "antecedent")


@dataclass(frozen=True)
class MiningConfig:
    min_supp: float
    min_conf: float = 0.0
    epsilon: float = 0.1
    confidence_denominator: str = "consequent"

    def __post_init__(self):
        if not 0.0 <= self.min_supp <= 1.0:
            raise ValueError(f"min_supp must lie in [0, 1], got {self.min_supp}")
        if not 0.0 <= self.min_conf <= 1.0:
            raise ValueError(f"min_conf must lie in [0, 1], got {self.min_conf}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.confidence_denominator not in DENOMINATORS:
            raise ValueError(f"confidence_denominator must be one of {DENOMINATORS}")


@dataclass(frozen=True)
class FrequentSet:
    itemset: ItemSet
    support: float
    estimated: bool = False


@dataclass(frozen=True)
class AssociationRule:
    antecedent: ItemSet
    consequent: ItemSet
    support: float
    confidence: float

    def __post_init__(self):
        if not self.antecedent.isdisjoint(self.consequent):
            raise ValueError("antecedent and consequent must be disjoint")


def is_frequent(support: float, min_supp: float) -> bool:
    return support >= min_supp - THRESHOLD_SLACK


def near_threshold(support: float, config: MiningConfig) -> bool:
    return abs(support - config.min_supp) < config.epsilon


def apriori_f1(db: TransactionDatabase, config: MiningConfig) -> list[FrequentSet]:
    s = support_matrix_bruteforce(db)
    out = []
    for i in range(db.num_items):
        supp = float(s.values[i, i])
        if is_frequent(supp, config.min_supp):
            out.append(FrequentSet(ItemSet((i,)), supp))
    return out


def _as_itemsets(f1: Iterable[ItemSet | FrequentSet]) -> list[ItemSet]:
    return [x.itemset if isinstance(x, FrequentSet) else x for x in f1]


def candidate_join(f1: Iterable[ItemSet | FrequentSet]) -> list[ItemSet]:
    """C2 = F1 join F1: every unordered pair of distinct frequent items."""
    items = []
    for itemset in _as_itemsets(f1):
        if len(itemset) != 1:
            raise ValueError(f"candidate join takes 1-itemsets, got {itemset}")
        items.append(itemset.items[0])
    return [ItemSet((a, b)) for a, b in combinations(sorted(set(items)), 2)]


def apriori_f2(
    db: TransactionDatabase,
    f1: Sequence[ItemSet | FrequentSet],
    config: MiningConfig,
) -> list[FrequentSet]:
    s = support_matrix_bruteforce(db)
    out = []
    for pair in candidate_join(f1):
        supp = s.support(pair)
        if is_frequent(supp, config.min_supp):
            out.append(FrequentSet(pair, supp))
    return out


def sampling_estimate_supports(
    db: TransactionDatabase,
    itemsets: Sequence[ItemSet],
    shots_per_itemset: int,
    seed: int,
) -> list[tuple[ItemSet, float]]:
    """Estimate each support from N_c transactions drawn with replacement."""
    if shots_per_itemset < 1:
        raise ValueError("shots_per_itemset must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for itemset in itemsets:
        rows = rng.integers(0, db.num_transactions, size=shots_per_itemset)
        hits = np.all(db.bits[np.ix_(rows, list(itemset.items))] == 1, axis=1)
        out.append((itemset, float(hits.sum()) / shots_per_itemset))
    return out


def sampling_mine(
    db: TransactionDatabase,
    config: MiningConfig,
    shots_per_itemset: int | None = None,
    seed: int = 0,
) -> tuple[list[FrequentSet], list[FrequentSet], int]:
    """F1 and F2 from sampled supports. Returns (f1, f2, total samples).

    The default N_c follows the classical budget: a/eps^2 per item for F1
    and M1^2/eps^2 per pair for F2, both making the summed squared error
    across all estimates about eps^2.
    """
    ss = np.random.SeedSequence(seed)
    seed1, seed2 = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    a = float(db.bits.sum()) / db.num_transactions
    n1 = shots_per_itemset or max(1, int(np.ceil(max(a, 1.0) / config.epsilon**2)))
    singles = [ItemSet((i,)) for i in range(db.num_items)]
    f1 = [
        FrequentSet(x, s, estimated=True)
        for x, s in sampling_estimate_supports(db, singles, n1, seed1)
        if is_frequent(s, config.min_supp)
    ]
    pairs = candidate_join(f1)
    m1 = len(f1)
    n2 = shots_per_itemset or max(1, int(np.ceil(m1**2 / config.epsilon**2)))
    f2 = [
        FrequentSet(x, s, estimated=True)
        for x, s in sampling_estimate_supports(db, pairs, n2, seed2)
        if is_frequent(s, config.min_supp)
    ]
    return f1, f2, n1 * len(singles) + n2 * len(pairs)


def derive_rules(
    f1: Sequence[FrequentSet],
    f2: Sequence[FrequentSet],
    config: MiningConfig,
) -> list[AssociationRule]:
    """Both orientations of every frequent pair, filtered by min_conf.

    Confidence is supp(A u B) / supp(B) in ``consequent`` mode and the
    textbook supp(A u B) / supp(A) in ``antecedent`` mode.
    """
    single = {fs.itemset.items[0]: fs.support for fs in f1}
    rules = []
    for fs in f2:
        i, j = fs.itemset.items
        for ante, cons in ((i, j), (j, i)):
            denom_item = cons if config.confidence_denominator == "consequent" else ante
            denom = single.get(denom_item)
            if denom is None:
                raise KeyError(f"item {denom_item} of {fs.itemset} has no F1 support")
            if denom <= 0:
                log.warning("skipping rule %s => %s: zero denominator support", ante, cons)
                continue
            conf = min(1.0, fs.support / denom)
            if conf >= config.min_conf - THRESHOLD_SLACK:
                rules.append(AssociationRule(ItemSet((ante,)), ItemSet((cons,)), fs.support, conf))
    return rules
