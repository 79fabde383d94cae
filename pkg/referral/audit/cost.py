import logging
import math
from typing import Sequence

from pydantic import BaseModel

from referral.branching import OffspringDistribution, UnsupportedRegimeError, branching_profile
from referral.schemes import RewardTable, allocate, answer_within, dr_chain_scheme, dr_tree_scheme

LOG = logging.getLogger(__name__)


class HorizonMismatchError(Exception):
    expected: int
    actual: int

    def __init__(self, expected: int, actual: int) -> None:
        super().__init__(f"Table horizon is {expected} but {actual} first-answer probabilities were given")
        self.expected = expected
        self.actual = actual


def chain_first_answer(n: float, h: int) -> list[float]:
    """lambda_j = p(1-p)^(j-1) on a chain."""
    p = 1.0 / n
    return [p * (1 - p) ** (j - 1) for j in range(1, h + 1)]


def expected_cost(table: RewardTable, lam: Sequence[float]) -> float:
    """Expected total payment: each answer level weighted by the rewards paid along its path."""
    if len(lam) != table.h:
        raise HorizonMismatchError(table.h, len(lam))
    return math.fsum(lam[i - 1] * math.fsum(allocate(table, i)) for i in range(1, table.h + 1))


class CostBreakdown(BaseModel):
    holder: float
    referral: float
    forwarding: float

    @property
    def total(self) -> float:
        return self.holder + self.referral + self.forwarding


def tree_cost_breakdown(table: RewardTable, lam: Sequence[float]) -> CostBreakdown:
    """Holder, direct-referral and forwarding terms, counting a unit for every ancestor of the holder.

    The direct referral is counted as x + 1 here, so the total exceeds
    `expected_cost` by the probability of an answer at level 2 or deeper.
    """
    if len(lam) != table.h:
        raise HorizonMismatchError(table.h, len(lam))
    h = table.h
    return CostBreakdown(
        holder=math.fsum(lam[i - 1] * table.r(i, 0) for i in range(1, h + 1)),
        referral=math.fsum(lam[i - 1] * table.r(i - 1, 1) for i in range(2, h + 1)),
        forwarding=math.fsum(lam[i - 1] * (i - 1) for i in range(1, h + 1)),
    )


class CostScalingRow(BaseModel):
    h: int
    kind: str
    cost: float
    cost_per_h2: float
    cost_per_nh2ph2: float
    success_probability: float
    cost_per_h2_success: float
    bracket_low: float | None = None
    bracket_high: float | None = None
    in_bracket: bool | None = None


def chain_cost_bracket(n: float, h: int) -> tuple[float, float]:
    low = n * h * h / 32 * answer_within(n, h // 8) * answer_within(n, h // 2)
    ph = answer_within(n, h)
    return low, ph * (n * h * h * ph + h) + h * ph


def cost_scaling_report(dist: OffspringDistribution, n: float, h_list: Sequence[int],
                        normalized: bool = False) -> list[CostScalingRow]:
    """Exact DR cost for each horizon with the normalizations used to read off its growth rate.

    Chains also get the explicit bracket the growth-rate argument establishes.
    """
    if list(h_list) != sorted(h_list):
        raise ValueError(f"Horizons must be ascending, got {list(h_list)}")
    if not dist.is_chain and dist.b <= 1:
        raise UnsupportedRegimeError("branching factor b must exceed 1", dist.b)
    rows = []
    for h in h_list:
        if dist.is_chain:
            table = dr_chain_scheme(n, h, normalized=normalized)
            lam = chain_first_answer(n, h)
        else:
            lam = list(branching_profile(dist, n, h, with_landmarks=False).lam)
            table = dr_tree_scheme(lam, h)
        cost = expected_cost(table, lam)
        success = math.fsum(lam)
        ph = answer_within(n, h)
        row = CostScalingRow(
            h=h,
            kind=table.kind.value,
            cost=cost,
            cost_per_h2=cost / h ** 2,
            cost_per_nh2ph2=cost / (n * h ** 2 * ph ** 2),
            success_probability=success,
            cost_per_h2_success=cost / (h ** 2 * success),
        )
        if dist.is_chain:
            low, high = chain_cost_bracket(n, h)
            row = row.model_copy(update={"bracket_low": low, "bracket_high": high, "in_bracket": low <= cost <= high})
            if not row.in_bracket:
                LOG.warning(f"Chain cost {cost} at h={h} outside [{low}, {high}]")
        LOG.info(f"h={h}: cost {cost}, cost/h^2 {row.cost_per_h2}")
        rows.append(row)
    return rows
