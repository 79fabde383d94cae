from enum import Enum
import logging
import math
from pathlib import Path
from typing import Sequence

from pydantic import BaseModel

from referral.branching import OffspringDistribution, PropertyCheck
from referral.deviation import (
    Deviation,
    PayoffComparison,
    chain_payoff_grid,
    chain_referral_payoff,
    tree_payoff_grid,
)
from referral.montecarlo import estimate_gain
from referral.schemes import RewardTable, SelectionRule, TableKind
from referral.shared import dumps, write_csv

from .cost import chain_first_answer, expected_cost

LOG = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9
NEAR_ZERO_FACTOR = 10

WITNESS_COLUMNS = ["i", "k", "holder", "honest", "deviant", "margin", "upper_bound", "confirmed", "mc_gain",
                   "mc_stderr"]


class MissingInputError(Exception):
    kind: str
    missing: list[str]

    def __init__(self, kind: str, missing: list[str]) -> None:
        super().__init__(f"Auditing a {kind} table needs {', '.join(missing)}")
        self.kind = kind
        self.missing = missing


class AuditMode(str, Enum):
    ANALYTIC = "analytic"
    MONTECARLO = "montecarlo"
    BOTH = "both"


class Verdict(str, Enum):
    SYBIL_PROOF = "sybil_proof"
    VIOLATED = "violated"


class Witness(BaseModel):
    i: int
    k: int
    holder: bool
    honest: float
    deviant: float
    margin: float
    upper_bound: bool = False
    # None: the analytic margin rests on an upper bound and was not simulated
    confirmed: bool | None = None
    mc_gain: float | None = None
    mc_stderr: float | None = None


class AuditReport(BaseModel):
    verdict: Verdict
    kind: TableKind
    h: int
    tolerance: float
    mode: AuditMode
    witnesses: list[Witness]
    property_checks: list[PropertyCheck]
    cost: float
    min_margin: float | None
    trials: int | None = None
    master_seed: int | None = None

    def to_json(self) -> str:
        return dumps(self)

    def write(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "audit.json").write_text(self.to_json(), encoding="utf-8")
        write_csv(directory / "witnesses.csv", [w.model_dump() for w in self.witnesses], WITNESS_COLUMNS)
        LOG.info(f"Wrote audit report to {directory}")


def _tree_structure_checks(table: RewardTable) -> list[PropertyCheck]:
    """Holders are covered by a_i = x_i + a_{i+1} + 1 together with x_i >= 1 below the horizon."""
    h = table.h
    identity = max((abs(table.r(i, 0) - table.r(i, 1) - table.r(i + 1, 0) - 1.0) for i in range(1, h)), default=0.0)
    floor = max((1.0 - table.r(i, 1) for i in range(1, h)), default=0.0)
    return [
        PropertyCheck(name="holder_identity", passed=identity <= 1e-9 * max(1.0, table.r(1, 0)),
                      violation=identity, detail="a_i = x_i + a_{i+1} + 1"),
        PropertyCheck(name="referral_at_least_one", passed=floor <= 0.0, violation=max(floor, 0.0),
                      detail="x_i >= 1 for i < h"),
    ]


def _chain_monotone_check(table: RewardTable, n: float, tol: float) -> PropertyCheck:
    worst = 0.0
    for i in range(1, table.h):
        previous = chain_referral_payoff(table, i, 0, n).value
        for k in range(1, table.h - i + 1):
            current = chain_referral_payoff(table, i, k, n).value
            worst = max(worst, current - previous)
            previous = current
    return PropertyCheck(name="referral_payoff_non_increasing", passed=worst <= tol, violation=max(worst, 0.0),
                         detail="D(i, k) <= D(i, k - 1)")


def _simulate(comparison: PayoffComparison, dist: OffspringDistribution, n: float, table: RewardTable,
              rule: SelectionRule, trials: int, master_seed: int, tol: float) -> tuple[bool, float, float]:
    deviation = Deviation(level=comparison.i, sybils=comparison.k, holder=comparison.holder)
    gain = estimate_gain(dist, n, table, rule, deviation, trials=trials, master_seed=master_seed)
    return gain.significant(tol), gain.mean, gain.stderr


def check_sybil_proofness(table: RewardTable, n: float | None = None, lam: Sequence[float] | None = None,
                          d: int | None = None, dist: OffspringDistribution | None = None,
                          mode: AuditMode = AuditMode.ANALYTIC, tol: float = DEFAULT_TOLERANCE,
                          trials: int = 20_000, master_seed: int = 0,
                          rule: SelectionRule = SelectionRule.RW) -> AuditReport:
    """Compare honest and deviant payoffs over every level, sybil count and holder flag.

    Tree tables are audited on the tree model and need (lam, d, n); every
    other kind is audited on a chain and needs n. Exact violations always count. In
    Monte Carlo modes a paired simulation confirms or dismisses the violations
    that rest on an upper bound, and the near-ties; ties themselves pass.
    """
    n = n if n is not None else table.n
    is_tree = table.kind == TableKind.TREE_DR
    if is_tree:
        missing = [name for name, value in (("lam", lam), ("d", d), ("n", n)) if value is None]
        if mode != AuditMode.ANALYTIC and dist is None:
            missing.append("dist")
    else:
        missing = [] if n is not None else ["n"]
    if missing:
        raise MissingInputError(table.kind.value, missing)
    assert n is not None

    if is_tree:
        assert lam is not None and d is not None
        lam = list(lam)[:table.h]
        grid = tree_payoff_grid(table, lam, d, n)
        checks = _tree_structure_checks(table)
        sampler = dist
    else:
        lam = chain_first_answer(n, table.h)
        grid = chain_payoff_grid(table, n)
        checks = [_chain_monotone_check(table, n, tol)] if table.kind.is_chain_dr else []
        sampler = OffspringDistribution.chain()

    witnesses = []
    for comparison in grid:
        violated = comparison.margin < -tol
        near = abs(comparison.margin) <= NEAR_ZERO_FACTOR * tol
        if not violated and not (near and mode != AuditMode.ANALYTIC):
            continue
        witness = Witness(**comparison.model_dump(include=set(Witness.model_fields)))
        exact = not comparison.upper_bound
        if mode == AuditMode.ANALYTIC:
            witness.confirmed = True if exact else None
        elif exact and violated:
            # a closed-form gain is never overruled by sampling noise
            witness.confirmed = True
            if mode == AuditMode.MONTECARLO:
                assert sampler is not None
                significant, witness.mc_gain, witness.mc_stderr = _simulate(comparison, sampler, n, table, rule,
                                                                            trials, master_seed, tol)
                if not significant:
                    LOG.warning(f"Simulation did not detect the exact violation at i={witness.i} k={witness.k}")
        else:
            assert sampler is not None
            significant, gain, stderr = _simulate(comparison, sampler, n, table, rule, trials, master_seed, tol)
            witness.mc_gain, witness.mc_stderr = gain, stderr
            witness.confirmed = significant
            if not violated and not significant:
                continue
        witnesses.append(witness)

    unconfirmed = [w for w in witnesses if w.confirmed is None]
    if unconfirmed:
        LOG.warning(f"{len(unconfirmed)} bound-based witnesses left unconfirmed; run with Monte Carlo to decide")
    # without simulation an unconfirmed bound violation is not a certificate
    verdict = Verdict.VIOLATED if any(w.confirmed is not False for w in witnesses) else Verdict.SYBIL_PROOF

    report = AuditReport(
        verdict=verdict,
        kind=table.kind,
        h=table.h,
        tolerance=tol,
        mode=mode,
        witnesses=witnesses,
        property_checks=checks,
        cost=expected_cost(table, lam),
        min_margin=min((c.margin for c in grid), default=None),
        trials=trials if mode != AuditMode.ANALYTIC else None,
        master_seed=master_seed if mode != AuditMode.ANALYTIC else None,
    )
    LOG.info(f"Audit of {table.kind.value} h={table.h}: {verdict.value}, {len(witnesses)} witnesses, "
             f"min margin {report.min_margin}")
    return report
