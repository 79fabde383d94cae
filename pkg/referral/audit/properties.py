import logging

from referral.branching import BranchingProfile, PropertyCheck
from referral.deviation import chain_lower_bounds
from referral.schemes import RewardTable, TableKind, answer_within, dr_chain_scheme

from .cost import HorizonMismatchError
from .sybil import MissingInputError

LOG = logging.getLogger(__name__)

RELATIVE_TOLERANCE = 1e-12


def _excess(value: float, bound: float) -> float:
    """How far value exceeds bound, 0 within relative tolerance."""
    gap = value - bound
    return gap if gap > RELATIVE_TOLERANCE * max(1.0, abs(bound)) else 0.0


def _check(name: str, violation: float, detail: str) -> PropertyCheck:
    return PropertyCheck(name=name, passed=violation == 0.0, violation=violation, detail=detail)


def check_x_properties(table: RewardTable, profile: BranchingProfile | None = None) -> list[PropertyCheck]:
    """Growth bounds on the direct-referral rewards x_i = r(i, 1)."""
    h = table.h
    if table.kind.is_chain_dr:
        if table.n is None:
            raise MissingInputError(table.kind.value, ["n"])
        bound = table.n * h * answer_within(table.n, h) + 1
        worst = max((_excess(table.r(i, 1), bound) for i in range(1, h)), default=0.0)
        return [_check("referral_bound", worst, f"r(i,1) <= n h P_h + 1 = {bound}")]
    if table.kind != TableKind.TREE_DR:
        raise ValueError(f"No referral bounds are defined for {table.kind.value} tables")
    if profile is None or profile.landmarks is None:
        raise MissingInputError(table.kind.value, ["landmarks"])
    if profile.h_max != h:
        raise HorizonMismatchError(h, profile.h_max)

    marks = profile.landmarks
    gamma, ellstar, lam = marks.gamma, marks.ellstar, profile.lam
    x = [table.r(i, 1) for i in range(1, h + 1)]

    decreasing = max((_excess(x[i], x[i - 1]) for i in range(1, h)), default=0.0)
    tail = max((_excess(x[i - 1], gamma * (h - i)) for i in range(ellstar + 1, h + 1)), default=0.0)
    head = max((_excess(lam[i] * x[i - 1], (gamma + 1) * (h - i)) for i in range(1, min(ellstar, h - 1) + 1)),
               default=0.0)
    LOG.debug(f"x checks with gamma={gamma} ellstar={ellstar}: {decreasing}, {tail}, {head}")
    return [
        _check("x_decreasing", decreasing, "x_i >= x_{i+1}"),
        _check("x_tail_bound", tail, f"x_i <= gamma (h - i) for i >= {ellstar + 1}, gamma={gamma} "
                                     f"({marks.gamma_source})"),
        _check("x_head_bound", head, f"lambda_(i+1) x_i <= (gamma + 1)(h - i) for i <= {ellstar}"),
    ]


def optimality_check(n: float, h: int, tol: float = 1e-12) -> PropertyCheck:
    """The plain chain DR table pays exactly the least rewards the lower-bound induction allows."""
    table = dr_chain_scheme(n, h, normalized=False)
    bounds = chain_lower_bounds(n, h)
    deviations = [abs(table.r(i, 1) - bounds.r_min[i - 1]) for i in range(1, h)]
    deviations += [abs(table.r(i, 0) - bounds.a_min[i - 1]) for i in range(1, h + 1)]
    worst = max(deviations)
    LOG.info(f"Optimality n={n} h={h}: max deviation {worst}")
    return PropertyCheck(name="chain_optimality", passed=worst <= tol, violation=worst,
                         detail=f"n={n} h={h}, max |DR - lower bound| over r(i,1) and a(i)")
