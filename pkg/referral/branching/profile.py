import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .process import (
    OffspringDistribution,
    UnsupportedRegimeError,
    checked_ratio,
    extinction_probability,
    first_answer_recurrence,
    no_answer_map_derivative,
    no_answer_probabilities,
)

LOG = logging.getLogger(__name__)

RELATIVE_TOLERANCE = 1e-12


class Landmarks(BaseModel):
    model_config = ConfigDict(frozen=True)

    ell1: int
    ellstar: int
    gamma: float
    # None when (1 - 1/n) * b <= 1, i.e. lambda has no growth phase
    rho: float | None = None
    epsilon: float | None = None
    ell_epsilon: int | None = None
    gamma_source: str = "empirical finite-horizon minimum"


class BranchingProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    dist: OffspringDistribution
    n: float
    h_max: int
    phi: tuple[float, ...]
    lam: tuple[float, ...]
    zeta: float
    landmarks: Landmarks | None = None

    @property
    def success_probability(self) -> float:
        return 1.0 - self.phi[-1]

    def tail(self, i: int) -> float:
        """Sum of lambda_j for i <= j <= h_max."""
        return math.fsum(self.lam[i - 1:])


def _tails(lam: list[float]) -> list[float]:
    # tails[i - 1] = sum_{j >= i} lambda_j
    return list(np.cumsum(lam[::-1])[::-1]) if lam else []


def peak_level(lam: list[float]) -> int:
    """Smallest level attaining the maximum of lambda."""
    return int(np.argmax(lam)) + 1


def landmarks(dist: OffspringDistribution, n: float, h: int, require_growth: bool = False,
              phi: list[float] | None = None, lam: list[float] | None = None) -> Landmarks:
    b = dist.b
    if b <= 1:
        raise UnsupportedRegimeError("branching factor b must exceed 1", b)
    if h < 1:
        raise ValueError(f"Landmarks need at least one level, got h={h}")
    if phi is None or lam is None:
        phi = no_answer_probabilities(dist, n, h)
        lam = first_answer_recurrence(dist, n, phi)
    zeta = extinction_probability(dist)
    ellstar = peak_level(lam)

    tails = _tails(lam)
    gamma = 1.0
    for i in range(ellstar + 2, h + 1):
        gamma = max(gamma, checked_ratio(tails[i - 1], lam, i))

    effective_b = (1 - 1 / n) * b
    if effective_b <= 1:
        if require_growth:
            raise UnsupportedRegimeError("(1 - 1/n) * b must exceed 1", effective_b)
        LOG.warning(f"(1 - 1/n) * b = {effective_b} <= 1, lambda has no growth phase; reporting ell1 = 1")
        return Landmarks(ell1=1, ellstar=ellstar, gamma=gamma)

    epsilon = 0.5 * min((1 - 1 / effective_b) / (5 * dist.d), 1 - zeta)
    rho = effective_b * (1 - 5 * epsilon * dist.d)
    if rho <= 1:
        raise UnsupportedRegimeError("(1 - 1/n) * b * (1 - 5 * epsilon * d) must exceed 1", rho)
    ell_epsilon = max(i for i, value in enumerate(phi) if value >= 1 - epsilon)
    ell1 = max(1, ell_epsilon - 1)
    LOG.debug(f"Landmarks: epsilon={epsilon} rho={rho} ell1={ell1} ellstar={ellstar} gamma={gamma}")
    return Landmarks(ell1=ell1, ellstar=ellstar, gamma=gamma, rho=rho, epsilon=epsilon, ell_epsilon=ell_epsilon)


def branching_profile(dist: OffspringDistribution, n: float, h: int, with_landmarks: bool = True) -> BranchingProfile:
    phi = no_answer_probabilities(dist, n, h)
    lam = first_answer_recurrence(dist, n, phi)
    zeta = extinction_probability(dist)
    marks = landmarks(dist, n, h, phi=phi, lam=lam) if with_landmarks and dist.b > 1 and h >= 1 else None
    LOG.info(f"Branching profile b={dist.b} n={n} h={h}: zeta={zeta}, success probability {1 - phi[-1]}")
    return BranchingProfile(dist=dist, n=n, h_max=h, phi=tuple(phi), lam=tuple(lam), zeta=zeta, landmarks=marks)


class PropertyCheck(BaseModel):
    name: str
    passed: bool = Field(serialization_alias="pass")
    violation: float = 0.0
    detail: str = ""


def _shortfall(value: float, bound: float) -> float:
    """Relative amount by which value falls below bound, 0 when within tolerance."""
    gap = (bound - value) / max(abs(bound), 1e-300)
    return gap if gap > RELATIVE_TOLERANCE else 0.0


def _check(name: str, violation: float, detail: str) -> PropertyCheck:
    return PropertyCheck(name=name, passed=violation == 0.0, violation=violation, detail=detail)


def verify_lambda_properties(profile: BranchingProfile) -> list[PropertyCheck]:
    dist, n, lam, phi = profile.dist, profile.n, profile.lam, profile.phi
    if dist.b <= 1:
        raise UnsupportedRegimeError("branching factor b must exceed 1", dist.b)
    marks = profile.landmarks or landmarks(dist, n, profile.h_max, phi=list(phi), lam=list(lam))
    h = profile.h_max

    # (a) ratio bracket
    bracket = 0.0
    for i in range(1, h):
        if lam[i - 1] == 0.0:
            continue
        ratio = lam[i] / lam[i - 1]
        low = no_answer_map_derivative(dist, n, phi[i])
        high = no_answer_map_derivative(dist, n, phi[i - 1])
        bracket = max(bracket, _shortfall(ratio, low), _shortfall(high, ratio))

    # (b) single peak: once lambda strictly decreases it never increases again
    peak = 0.0
    decreasing = False
    for i in range(1, h):
        if lam[i] < lam[i - 1] * (1 - RELATIVE_TOLERANCE):
            decreasing = True
        elif decreasing:
            peak = max(peak, _shortfall(lam[i - 1], lam[i]))

    # (c) geometric growth below ell1
    growth = 0.0
    if marks.rho is not None:
        for i in range(1, marks.ell1):
            growth = max(growth, _shortfall(lam[i], marks.rho * lam[i - 1]))

    # (d) finite-horizon tail bound
    tails = _tails(list(lam))
    tail = 0.0
    for i in range(marks.ellstar + 2, h + 1):
        tail = max(tail, _shortfall(marks.gamma * lam[i - 1], tails[i - 1]))

    # (e) cited bound on (1 - phi_i) / lambda_{i+1} wherever phi_i > zeta
    zeta = profile.zeta
    cited = 0.0
    slope = 1 - dist.pgf_derivative(zeta)
    for i in range(0, h):
        if phi[i] <= zeta:
            continue
        bound = max(1 / (dist.b - 1), 1 / ((phi[i] - zeta) * slope))
        cited = max(cited, _shortfall(bound, checked_ratio(1 - phi[i], lam, i + 1)))

    return [
        _check("ratio_bracket", bracket, "lambda_{i+1}/lambda_i within [t'(phi_i), t'(phi_{i-1})]"),
        _check("single_peak", peak, f"peak at level {marks.ellstar}"),
        _check("growth_below_ell1", growth,
               f"rho={marks.rho} ell1={marks.ell1}" if marks.rho is not None else "no growth phase, vacuous"),
        _check("tail_bound", tail, f"gamma={marks.gamma} ({marks.gamma_source}) on levels >= {marks.ellstar + 2}"),
        _check("first_answer_ratio_bound", cited, f"levels 0..{h - 1} with phi_i > {zeta}"),
    ]
