import json
from pathlib import Path

import pytest

from referral.audit import (
    AuditMode,
    HorizonMismatchError,
    MissingInputError,
    Verdict,
    chain_first_answer,
    check_sybil_proofness,
    check_x_properties,
    cost_scaling_report,
    expected_cost,
    optimality_check,
    tree_cost_breakdown,
)
from referral.branching import OffspringDistribution, UnsupportedRegimeError, branching_profile
from referral.schemes import (
    RewardTable,
    TableKind,
    dr_chain_scheme,
    dr_tree_scheme,
    dr_tree_scheme_for,
    split_counterexample_scheme,
)

CHAIN = OffspringDistribution.chain()


class TestExpectedCost:
    def test_normalized_chain(self) -> None:
        assert expected_cost(dr_chain_scheme(2, 3), chain_first_answer(2, 3)) == pytest.approx(3.0)

    def test_verbatim_chain(self) -> None:
        assert expected_cost(dr_chain_scheme(2, 3, normalized=False), chain_first_answer(2, 3)) == pytest.approx(1.375)

    @pytest.mark.parametrize("lam", [(0.3, 0.2), (0.6, 0.01)])
    def test_tree_two_levels(self, lam: tuple[float, float]) -> None:
        table = dr_tree_scheme(lam, 2)
        assert expected_cost(table, lam) == pytest.approx(3 * lam[0] + 2 * lam[1])
        breakdown = tree_cost_breakdown(table, lam)
        assert breakdown.total == pytest.approx(3 * lam[0] + 3 * lam[1])

    def test_breakdown_exceeds_by_deep_answers(self) -> None:
        lam = (0.5, 0.25, 0.125)
        table = dr_tree_scheme(lam, 3)
        gap = tree_cost_breakdown(table, lam).total - expected_cost(table, lam)
        assert gap == pytest.approx(0.375)

    def test_no_answers_cost_nothing(self) -> None:
        assert expected_cost(dr_chain_scheme(2, 3), [0.0, 0.0, 0.0]) == 0.0

    def test_horizon_mismatch(self) -> None:
        with pytest.raises(HorizonMismatchError) as info:
            expected_cost(dr_chain_scheme(2, 3), [0.5, 0.25])
        assert (info.value.expected, info.value.actual) == (3, 2)


class TestSybilProofness:
    def test_normalized_chain_passes_with_ties(self) -> None:
        report = check_sybil_proofness(dr_chain_scheme(2, 3), n=2)
        assert report.verdict == Verdict.SYBIL_PROOF
        assert report.witnesses == []
        assert report.min_margin == pytest.approx(0.0, abs=1e-12)
        assert report.cost == pytest.approx(3.0)

    def test_verbatim_chain_witness(self) -> None:
        report = check_sybil_proofness(dr_chain_scheme(2, 3, normalized=False), n=2)
        assert report.verdict == Verdict.VIOLATED
        assert len(report.witnesses) == 1
        witness = report.witnesses[0]
        assert (witness.i, witness.k, witness.holder) == (1, 2, True)
        assert witness.honest == pytest.approx(1.5)
        assert witness.deviant == pytest.approx(2.0)
        assert witness.confirmed

    def test_split_counterexample(self) -> None:
        report = check_sybil_proofness(split_counterexample_scheme(2, 4), n=2)
        assert report.verdict == Verdict.VIOLATED
        witness = report.witnesses[0]
        assert (witness.i, witness.k, witness.holder, witness.honest, witness.deviant) == (1, 1, True, 4.0, 6.0)

    def test_flat_split_pays_for_sybils(self) -> None:
        report = check_sybil_proofness(split_counterexample_scheme(3, 1), n=2)
        assert report.verdict == Verdict.VIOLATED
        assert any(w.holder and w.k == 1 for w in report.witnesses)
        # each sybil also collects the unit floor of a forwarding position
        assert any(not w.holder for w in report.witnesses)

    @pytest.mark.parametrize("n", [2, 5, 20, 100])
    @pytest.mark.parametrize("h", [1, 2, 9, 30])
    def test_normalized_chain_always_passes(self, n: float, h: int) -> None:
        report = check_sybil_proofness(dr_chain_scheme(n, h), n=n)
        assert report.verdict == Verdict.SYBIL_PROOF
        assert report.min_margin is None or report.min_margin >= -1e-9
        assert all(check.passed for check in report.property_checks)

    @pytest.mark.parametrize("c", [
        (0.4, 0.0, 0.6), (0.25, 0.0, 0.75), (0.0, 0.75, 0.0, 0.25), (0.15, 0.3, 0.0, 0.0, 0.55),
    ])
    @pytest.mark.parametrize("n", [20, 100])
    @pytest.mark.parametrize("h", [20, 30])
    def test_tree_passes(self, c: tuple[float, ...], n: float, h: int) -> None:
        dist = OffspringDistribution(d=len(c) - 1, c=c)
        lam = branching_profile(dist, n, h, with_landmarks=False).lam
        report = check_sybil_proofness(dr_tree_scheme(lam, h), n=n, lam=lam, d=dist.d)
        assert report.verdict == Verdict.SYBIL_PROOF
        assert [check.name for check in report.property_checks] == ["holder_identity", "referral_at_least_one"]
        assert all(check.passed for check in report.property_checks)

    def test_missing_inputs(self) -> None:
        with pytest.raises(MissingInputError) as info:
            check_sybil_proofness(dr_tree_scheme((0.5, 0.25), 2), n=2)
        assert info.value.missing == ["lam", "d"]
        with pytest.raises(MissingInputError):
            check_sybil_proofness(split_counterexample_scheme(2, 4))

    def test_montecarlo_confirms_split_witness(self) -> None:
        report = check_sybil_proofness(split_counterexample_scheme(2, 4), n=2, mode=AuditMode.MONTECARLO,
                                       trials=1_000, master_seed=5)
        assert report.verdict == Verdict.VIOLATED
        witness = next(w for w in report.witnesses if w.holder and w.k == 1)
        assert witness.confirmed
        assert witness.mc_gain == pytest.approx(2.0)

    def test_montecarlo_keeps_exact_violation(self) -> None:
        base = dr_chain_scheme(2, 3)
        entries = dict(base.entries)
        # a non-holder at level 1 now gains 2e-6 from one sybil, far below sampling noise
        entries[(1, 2)] = base.r(1, 2) + 8e-6
        table = RewardTable(h=3, kind=TableKind.CUSTOM, entries=entries, n=2.0)
        report = check_sybil_proofness(table, mode=AuditMode.MONTECARLO, trials=2_000, master_seed=3)
        assert report.verdict == Verdict.VIOLATED
        witness = next(w for w in report.witnesses if (w.i, w.k, w.holder) == (1, 1, False))
        assert witness.margin == pytest.approx(-2e-6, rel=1e-4)
        assert witness.confirmed
        assert witness.mc_gain is not None

    def test_both_modes_keep_ties_passing(self) -> None:
        report = check_sybil_proofness(dr_chain_scheme(2, 3), n=2, mode=AuditMode.BOTH, trials=2_000,
                                       master_seed=13)
        assert report.verdict == Verdict.SYBIL_PROOF
        assert report.trials == 2_000

    def test_tree_montecarlo_needs_distribution(self) -> None:
        lam = (0.5, 0.25)
        with pytest.raises(MissingInputError) as info:
            check_sybil_proofness(dr_tree_scheme(lam, 2), n=2, lam=lam, d=2, mode=AuditMode.BOTH)
        assert info.value.missing == ["dist"]

    def test_report_json(self, tmp_path: Path) -> None:
        report = check_sybil_proofness(dr_chain_scheme(2, 3, normalized=False), n=2)
        report.write(tmp_path)
        raw = json.loads((tmp_path / "audit.json").read_text())
        assert raw["verdict"] == "violated"
        assert raw["tolerance"] == 1e-9
        assert raw["witnesses"][0]["margin"] == pytest.approx(-0.5)
        assert set(raw["property_checks"][0]) >= {"name", "pass", "violation"}
        header = (tmp_path / "witnesses.csv").read_text().splitlines()[0]
        assert header.startswith("i,k,holder,honest,deviant,margin")


class TestCostScaling:
    def test_chain_inside_bracket(self) -> None:
        rows = cost_scaling_report(CHAIN, 50, [8, 16, 32, 64, 128])
        assert [row.h for row in rows] == [8, 16, 32, 64, 128]
        assert all(row.in_bracket for row in rows)

    def test_single_level_chain(self) -> None:
        row = cost_scaling_report(CHAIN, 4, [1])[0]
        assert row.cost == pytest.approx(0.25 * dr_chain_scheme(4, 1, normalized=False).r(1, 0))

    def test_tree_quadratic_band(self) -> None:
        dist = OffspringDistribution(d=2, c=(0.4, 0.0, 0.6))
        rows = cost_scaling_report(dist, 1000, list(range(10, 101, 10)))
        assert all(row.in_bracket is None for row in rows)
        deep = [row.cost_per_h2_success for row in rows if row.h >= 40]
        assert max(deep) <= 10 * min(deep)

    def test_subcritical_tree_rejected(self) -> None:
        with pytest.raises(UnsupportedRegimeError):
            cost_scaling_report(OffspringDistribution(d=2, c=(0.5, 0.0, 0.5)), 10, [5])

    def test_horizons_must_ascend(self) -> None:
        with pytest.raises(ValueError):
            cost_scaling_report(CHAIN, 10, [8, 4])


class TestXProperties:
    def test_tree_checks_pass(self) -> None:
        dist = OffspringDistribution(d=2, c=(0.25, 0.0, 0.75))
        profile = branching_profile(dist, 2, 10)
        checks = check_x_properties(dr_tree_scheme_for(dist, 2, 10), profile)
        assert [c.name for c in checks] == ["x_decreasing", "x_tail_bound", "x_head_bound"]
        assert all(c.passed for c in checks)

    def test_chain_referral_bound(self) -> None:
        checks = check_x_properties(dr_chain_scheme(2, 3, normalized=False))
        assert checks[0].passed
        assert "6.25" in checks[0].detail

    def test_needs_landmarks(self) -> None:
        dist = OffspringDistribution(d=2, c=(0.25, 0.0, 0.75))
        table = dr_tree_scheme_for(dist, 2, 5)
        with pytest.raises(MissingInputError):
            check_x_properties(table, branching_profile(dist, 2, 5, with_landmarks=False))

    def test_profile_horizon_must_match(self) -> None:
        dist = OffspringDistribution(d=2, c=(0.25, 0.0, 0.75))
        with pytest.raises(HorizonMismatchError):
            check_x_properties(dr_tree_scheme_for(dist, 2, 5), branching_profile(dist, 2, 6))


class TestOptimality:
    def test_small_case_exact(self) -> None:
        check = optimality_check(2, 3)
        assert check.passed and check.violation == 0.0

    @pytest.mark.parametrize("n", [10, 100])
    def test_large_horizon(self, n: float) -> None:
        check = optimality_check(n, 50)
        assert check.passed

    def test_single_level(self) -> None:
        assert optimality_check(2, 1).passed
