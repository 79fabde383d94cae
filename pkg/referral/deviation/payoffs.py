import logging
import math
from typing import Sequence

import pandas as pd
from pydantic import BaseModel, ConfigDict

from referral.schemes import RewardTable, TableKind

LOG = logging.getLogger(__name__)

CHAIN_NO_ANSWER = "no answer in levels 1..i"
HOLDER_SELECTED = "agent holds the selected answer"
TREE_NO_ANSWER = "NA(v)"

GRID_COLUMNS = ["i", "k", "holder", "honest", "deviant", "margin", "conditioning"]


class LevelOutOfHorizonError(ValueError):
    i: int
    h: int

    def __init__(self, i: int, h: int) -> None:
        super().__init__(f"Level {i} has no referral payoff in a table with h={h}")
        self.i = i
        self.h = h


class Payoff(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    conditioning: str
    # value bounds the deviant payoff from above instead of being exact
    upper_bound: bool = False
    out_of_horizon: bool = False


class PayoffComparison(BaseModel):
    model_config = ConfigDict(frozen=True)

    i: int
    k: int
    holder: bool
    honest: float
    deviant: float
    margin: float
    conditioning: str
    upper_bound: bool = False

    @classmethod
    def of(cls, i: int, k: int, holder: bool, honest: Payoff, deviant: Payoff) -> "PayoffComparison":
        return cls(i=i, k=k, holder=holder, honest=honest.value, deviant=deviant.value,
                   margin=honest.value - deviant.value, conditioning=deviant.conditioning,
                   upper_bound=deviant.upper_bound)


def _rarity(table: RewardTable, n: float | None) -> float:
    value = n if n is not None else table.n
    if value is None:
        raise ValueError(f"A {table.kind.value} table evaluated on a chain needs the answer rarity n")
    if not value > 1:
        raise ValueError(f"Answer rarity n must exceed 1, got {value}")
    return value


def _check_level(i: int, k: int) -> None:
    if i < 1 or k < 0:
        raise ValueError(f"Need level i >= 1 and sybils k >= 0, got i={i}, k={k}")


def chain_referral_payoff(table: RewardTable, i: int, k: int, n: float | None = None) -> Payoff:
    """Expected reward of a non-holder at level i that inserts k sybils below itself on a chain.

    The first answer then sits s levels below the last sybil with
    probability p(1-p)^(s-1), and the agent collects every position from
    its own down to the last sybil.
    """
    _check_level(i, k)
    if i + k > table.h:
        return Payoff(value=0.0, conditioning=CHAIN_NO_ANSWER, out_of_horizon=True)
    p = 1.0 / _rarity(table, n)
    terms = []
    for s in range(1, table.h - i - k + 1):
        weight = p * (1 - p) ** (s - 1)
        terms.append(weight * math.fsum(table.r(i + j, s + k - j) for j in range(k + 1)))
    return Payoff(value=math.fsum(terms), conditioning=CHAIN_NO_ANSWER)


def chain_holder_payoff(table: RewardTable, i: int, k: int) -> Payoff:
    """Reward of an answer holder at level i that moves its answer to the last of k sybils.

    Only path positions are involved, so this applies to tree tables too.
    """
    _check_level(i, k)
    if i + k > table.h:
        return Payoff(value=0.0, conditioning=HOLDER_SELECTED, out_of_horizon=True)
    value = math.fsum(table.r(i + s, k - s) for s in range(k)) + table.r(i + k, 0)
    return Payoff(value=value, conditioning=HOLDER_SELECTED)


class PathProbabilities(BaseModel):
    model_config = ConfigDict(frozen=True)

    p_rev: float
    p_dr: float
    p_rev_na: float
    p_dr_na: float


def tree_path_probabilities(lam: Sequence[float], d: int, i: int, h: int, n: float) -> PathProbabilities:
    """Probability that the spine agent at level i is on the answer path (Rev) or is its direct referral (DR)."""
    if not 1 <= i < h:
        raise ValueError(f"Path probabilities need 1 <= i < h, got i={i}, h={h}")
    if len(lam) < h:
        raise ValueError(f"Need {h} first-answer probabilities, got {len(lam)}")
    width = float(d) ** i
    p_rev = math.fsum(lam[i:h]) / width
    p_dr = lam[i] / width
    scale = n / (n - 1)
    return PathProbabilities(p_rev=p_rev, p_dr=p_dr, p_rev_na=scale * p_rev, p_dr_na=scale * p_dr)


def tree_referral_payoff(table: RewardTable, lam: Sequence[float], d: int, n: float, i: int, k: int) -> Payoff:
    """Honest payoff (k = 0) of a non-holder at level i, or the upper bound on its payoff with k sybils.

    Both count the direct referral as x + 1, so they pair with each other
    and not with the table's own payments; see `tree_honest_payoff`.
    """
    _check_level(i, k)
    if i >= table.h:
        raise LevelOutOfHorizonError(i, table.h)
    probs = tree_path_probabilities(lam, d, i, table.h, n)
    if k == 0:
        value = probs.p_dr_na * table.r(i, 1) + probs.p_rev_na
        return Payoff(value=value, conditioning=TREE_NO_ANSWER)
    value = probs.p_dr_na * table.r(i + k, 1) + (k + 1) * probs.p_rev_na
    return Payoff(value=value, conditioning=TREE_NO_ANSWER, upper_bound=True)


def tree_honest_payoff(table: RewardTable, lam: Sequence[float], d: int, n: float, i: int) -> Payoff:
    """Expected table payment to an honest non-holder at level i: x_i when it refers directly, 1 otherwise."""
    _check_level(i, 0)
    if i >= table.h:
        raise LevelOutOfHorizonError(i, table.h)
    probs = tree_path_probabilities(lam, d, i, table.h, n)
    value = probs.p_dr_na * table.r(i, 1) + (probs.p_rev_na - probs.p_dr_na)
    return Payoff(value=value, conditioning=TREE_NO_ANSWER)


class ChainLowerBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: float
    h: int
    # r_min[i - 1] for 1 <= i <= h - 1, a_min[i - 1] for 1 <= i <= h
    r_min: tuple[float, ...]
    a_min: tuple[float, ...]


def chain_lower_bounds(n: float, h: int) -> ChainLowerBounds:
    """Least rewards a regular sybil-proof scheme on a chain can pay.

    Unrolls the induction from level h upwards with r(i, s) = 1 for s > 1
    and a(h) = 1.
    """
    if not n > 1:
        raise ValueError(f"Answer rarity n must exceed 1, got {n}")
    if h < 1:
        raise ValueError(f"Horizon must be at least 1, got {h}")
    p = 1.0 / n
    r1 = [0.0] * (h + 1)
    a = [0.0] * (h + 1)
    a[h] = 1.0
    for i in range(h - 1, 0, -1):
        below = i + 1
        # expected referral income of the agent below when it holds no answer
        expected_below = math.fsum(
            (r1[below] if s == 1 else 1.0) * p * (1 - p) ** (s - 1) for s in range(1, h - below + 1)
        )
        forwarding = math.fsum(p * (1 - p) ** (s - 1) for s in range(1, h - i))
        r1[i] = forwarding + n * expected_below
        a[i] = r1[i] + a[i + 1]
        LOG.debug(f"r_min({i},1) = {r1[i]}, a_min({i}) = {a[i]}")
    return ChainLowerBounds(n=n, h=h, r_min=tuple(r1[1:h]), a_min=tuple(a[1:]))


def chain_payoff_grid(table: RewardTable, n: float | None = None) -> list[PayoffComparison]:
    """Honest versus deviant payoff for every level, sybil count and holder flag on a chain."""
    grid = []
    for i in range(1, table.h + 1):
        honest = chain_referral_payoff(table, i, 0, n)
        kept = chain_holder_payoff(table, i, 0)
        for k in range(1, table.h - i + 1):
            grid.append(PayoffComparison.of(i, k, False, honest, chain_referral_payoff(table, i, k, n)))
            grid.append(PayoffComparison.of(i, k, True, kept, chain_holder_payoff(table, i, k)))
    LOG.debug(f"Chain grid for {table.kind.value} h={table.h}: {len(grid)} comparisons")
    return grid


def tree_payoff_grid(table: RewardTable, lam: Sequence[float], d: int, n: float) -> list[PayoffComparison]:
    if table.kind != TableKind.TREE_DR:
        LOG.warning(f"Tree grid evaluated on a {table.kind.value} table")
    grid = []
    for i in range(1, table.h):
        honest = tree_referral_payoff(table, lam, d, n, i, 0)
        kept = chain_holder_payoff(table, i, 0)
        for k in range(1, table.h - i + 1):
            grid.append(PayoffComparison.of(i, k, False, honest, tree_referral_payoff(table, lam, d, n, i, k)))
            grid.append(PayoffComparison.of(i, k, True, kept, chain_holder_payoff(table, i, k)))
    return grid


def payoff_grid_frame(grid: Sequence[PayoffComparison]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump(include=set(GRID_COLUMNS)) for row in grid], columns=GRID_COLUMNS)
