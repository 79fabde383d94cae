from typing import Sequence
import logging
import math

from numpy.polynomial import polynomial as P
from pydantic import BaseModel, ConfigDict, PositiveInt, model_validator

from referral.shared import TINY

LOG = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-12
MAX_FIXED_POINT_ITERATIONS = 1_000_000


class ConvergenceError(Exception):
    iterations: int
    last_iterate: float

    def __init__(self, iterations: int, last_iterate: float) -> None:
        super().__init__(f"Fixed point iteration did not converge after {iterations} steps, last iterate {last_iterate!r}")
        self.iterations = iterations
        self.last_iterate = last_iterate


class UnsupportedRegimeError(Exception):
    constraint: str
    value: float

    def __init__(self, constraint: str, value: float) -> None:
        super().__init__(f"Unsupported regime: {constraint} (got {value!r})")
        self.constraint = constraint
        self.value = value


class DegenerateInputError(Exception):
    level: int
    value: float

    def __init__(self, level: int, value: float) -> None:
        super().__init__(f"Degenerate input: lambda at level {level} is {value!r}, too small to divide by")
        self.level = level
        self.value = value


class OffspringDistribution(BaseModel):
    """The law of the number of children: c[j] is the probability of j children, 0 <= j <= d."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    d: PositiveInt
    c: tuple[float, ...]

    @model_validator(mode="after")
    def _check_law(self) -> "OffspringDistribution":
        if len(self.c) != self.d + 1:
            raise ValueError(f"Expected {self.d + 1} probabilities for d={self.d}, got {len(self.c)}")
        if any(ci < 0 or not math.isfinite(ci) for ci in self.c):
            raise ValueError(f"Probabilities must be finite and non-negative: {self.c}")
        if abs(math.fsum(self.c) - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"Probabilities must sum to 1, got {math.fsum(self.c)!r}")
        return self

    @classmethod
    def chain(cls) -> "OffspringDistribution":
        return cls(d=1, c=(0.0, 1.0))

    @property
    def is_chain(self) -> bool:
        return self.d == 1 and self.c[1] == 1.0

    @property
    def b(self) -> float:
        return branching_factor(self)

    def pgf(self, x: float) -> float:
        return float(P.polyval(x, self.c))

    def pgf_derivative(self, x: float) -> float:
        return float(P.polyval(x, P.polyder(self.c)))


def branching_factor(dist: OffspringDistribution) -> float:
    return math.fsum(i * ci for i, ci in enumerate(dist.c))


def extinction_probability(dist: OffspringDistribution, tol: float = 1e-14) -> float:
    """Smallest fixed point of the generating function on [0, 1].

    Subcritical and critical laws with c0 > 0 die out surely; everything else
    is found by iterating the generating function from 0, which increases
    monotonically towards the smallest fixed point.
    """
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    b = branching_factor(dist)
    if b < 1 or (b == 1 and dist.c[0] > 0):
        return 1.0
    x = 0.0
    for iteration in range(1, MAX_FIXED_POINT_ITERATIONS + 1):
        nxt = dist.pgf(x)
        if abs(nxt - x) < tol:
            LOG.debug(f"Extinction probability converged to {nxt} after {iteration} iterations")
            return nxt
        x = nxt
    raise ConvergenceError(MAX_FIXED_POINT_ITERATIONS, x)


def no_answer_map(dist: OffspringDistribution, n: float, x: float) -> float:
    """t(x): probability that a subtree has no answer given x for the subtrees one level down."""
    return dist.pgf(x * (1 - 1 / n))


def no_answer_map_derivative(dist: OffspringDistribution, n: float, x: float) -> float:
    q = 1 - 1 / n
    return q * dist.pgf_derivative(q * x)


def no_answer_divided_difference(dist: OffspringDistribution, n: float, upper: float, lower: float) -> float:
    """(t(upper) - t(lower)) / (upper - lower), expanded so no cancellation happens."""
    q = 1 - 1 / n
    a, b = q * upper, q * lower
    total = 0.0
    for j in range(1, dist.d + 1):
        if dist.c[j] == 0.0:
            continue
        total += dist.c[j] * q * math.fsum(a ** m * b ** (j - 1 - m) for m in range(j))
    return total


def _check_rarity(n: float) -> None:
    if not n > 1:
        raise ValueError(f"Answer rarity n must exceed 1, got {n}")


def no_answer_probabilities(dist: OffspringDistribution, n: float, h: int) -> list[float]:
    """phi_0..phi_h, phi_i being the probability of no answer within the first i levels."""
    _check_rarity(n)
    if h < 0:
        raise ValueError(f"Horizon must be non-negative, got {h}")
    phi = [1.0]
    for _ in range(h):
        phi.append(no_answer_map(dist, n, phi[-1]))
    return phi


def first_answer_distribution(phi: Sequence[float]) -> list[float]:
    """lambda_1..lambda_h as successive differences of phi."""
    return [max(phi[i - 1] - phi[i], 0.0) for i in range(1, len(phi))]


def first_answer_recurrence(dist: OffspringDistribution, n: float, phi: Sequence[float]) -> list[float]:
    """lambda_1..lambda_h, each obtained from the previous one through the divided difference of t.

    Agrees with first_answer_distribution but keeps full relative precision
    once phi stops moving in floating point.
    """
    if len(phi) < 2:
        return []
    lam = [1.0 - phi[1]]
    for i in range(1, len(phi) - 1):
        lam.append(lam[-1] * no_answer_divided_difference(dist, n, phi[i - 1], phi[i]))
    return lam


def checked_ratio(numerator: float, lam: Sequence[float], level: int) -> float:
    """numerator / lambda_level, refusing to divide by an underflowed lambda."""
    value = lam[level - 1]
    if value < TINY:
        raise DegenerateInputError(level, value)
    return numerator / value

