import pytest

from referral.deviation import (
    LevelOutOfHorizonError,
    chain_holder_payoff,
    chain_lower_bounds,
    chain_payoff_grid,
    chain_referral_payoff,
    payoff_grid_frame,
    tree_honest_payoff,
    tree_path_probabilities,
    tree_payoff_grid,
    tree_referral_payoff,
)
from referral.branching import OffspringDistribution, branching_profile
from referral.schemes import answer_within, dr_chain_scheme, dr_tree_scheme, split_counterexample_scheme

LAM = (0.5, 0.25, 0.125)


class TestChainReferral:
    def test_verbatim_values(self) -> None:
        table = dr_chain_scheme(2, 3, normalized=False)
        assert chain_referral_payoff(table, 1, 0).value == pytest.approx(0.5)
        assert chain_referral_payoff(table, 1, 1).value == pytest.approx(0.5)
        assert chain_referral_payoff(table, 1, 2).value == 0.0

    def test_normalized_values(self) -> None:
        table = dr_chain_scheme(2, 3)
        assert chain_referral_payoff(table, 1, 0).value == pytest.approx(1.0)
        assert chain_referral_payoff(table, 1, 1).value == pytest.approx(1.0)

    @pytest.mark.parametrize("normalized", [False, True])
    def test_no_sybils_is_expected_income(self, normalized: bool) -> None:
        table = dr_chain_scheme(5, 8, normalized=normalized)
        assert table.chain is not None
        for i in range(1, 9):
            assert chain_referral_payoff(table, i, 0).value == pytest.approx(table.chain.R[i - 1], abs=1e-12)

    def test_verbatim_closed_form(self) -> None:
        n, h = 4, 9
        table = dr_chain_scheme(n, h, normalized=False)
        assert table.chain is not None
        R = table.chain.R
        for i in range(1, h):
            for k in range(0, h - i + 1):
                closed = (R[i + k - 1] if i + k <= h else 0.0) + k * answer_within(n, h - i - k)
                assert chain_referral_payoff(table, i, k).value == pytest.approx(closed, abs=1e-12)

    @pytest.mark.parametrize("normalized", [False, True])
    @pytest.mark.parametrize("n", [2, 5, 20])
    def test_more_sybils_never_help(self, normalized: bool, n: float) -> None:
        table = dr_chain_scheme(n, 12, normalized=normalized)
        for i in range(1, 12):
            values = [chain_referral_payoff(table, i, k).value for k in range(0, 13 - i)]
            assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_beyond_horizon(self) -> None:
        payoff = chain_referral_payoff(dr_chain_scheme(2, 3), 2, 2)
        assert payoff.out_of_horizon and payoff.value == 0.0

    def test_needs_rarity(self) -> None:
        with pytest.raises(ValueError):
            chain_referral_payoff(split_counterexample_scheme(3, 4), 1, 1)
        assert chain_referral_payoff(split_counterexample_scheme(3, 4), 1, 1, n=2).value >= 0.0

    def test_conditioning_label(self) -> None:
        assert chain_referral_payoff(dr_chain_scheme(2, 3), 1, 0).conditioning == "no answer in levels 1..i"


class TestChainHolder:
    def test_no_sybils_keeps_answer_reward(self) -> None:
        table = dr_chain_scheme(2, 3)
        assert chain_holder_payoff(table, 1, 0).value == table.r(1, 0)

    def test_verbatim_boundary_gap(self) -> None:
        table = dr_chain_scheme(2, 3, normalized=False)
        assert chain_holder_payoff(table, 1, 2).value == pytest.approx(2.0)
        assert table.r(1, 0) == pytest.approx(1.5)

    def test_normalized_holder(self) -> None:
        table = dr_chain_scheme(2, 3)
        assert chain_holder_payoff(table, 1, 2).value == pytest.approx(3.0)

    @pytest.mark.parametrize("n,h", [(2, 6), (7, 10), (100, 15)])
    def test_normalized_never_profitable(self, n: float, h: int) -> None:
        table = dr_chain_scheme(n, h)
        for i in range(1, h):
            assert chain_holder_payoff(table, i, 1).value == pytest.approx(table.r(i, 0))
            for k in range(1, h - i + 1):
                assert chain_holder_payoff(table, i, k).value <= table.r(i, 0) + 1e-9

    @pytest.mark.parametrize("n,h", [(2, 3), (3, 7), (10, 12)])
    def test_verbatim_witness_two_above_horizon(self, n: float, h: int) -> None:
        table = dr_chain_scheme(n, h, normalized=False)
        assert chain_holder_payoff(table, h - 2, 2).value == pytest.approx(2.0)
        assert table.r(h - 2, 0) == pytest.approx(1 + 1 / n)


class TestTreePayoffs:
    def test_path_probabilities(self) -> None:
        probs = tree_path_probabilities(LAM, 2, 1, 3, 2)
        assert probs.p_dr == pytest.approx(0.125)
        assert probs.p_rev == pytest.approx(0.1875)
        assert probs.p_dr_na == pytest.approx(0.25)
        assert probs.p_rev_na == pytest.approx(0.375)

    def test_last_referral_level(self) -> None:
        probs = tree_path_probabilities(LAM, 2, 2, 3, 2)
        assert probs.p_rev == probs.p_dr == pytest.approx(0.125 / 4)

    def test_referral_values(self) -> None:
        table = dr_tree_scheme(LAM, 3)
        honest = tree_referral_payoff(table, LAM, 2, 2, 1, 0)
        bound = tree_referral_payoff(table, LAM, 2, 2, 1, 1)
        assert honest.value == pytest.approx(1.125)
        assert not honest.upper_bound
        assert bound.value == pytest.approx(1.0)
        assert bound.upper_bound

    def test_table_consistent_honest_payoff(self) -> None:
        table = dr_tree_scheme(LAM, 3)
        assert tree_honest_payoff(table, LAM, 2, 2, 1).value == pytest.approx(2 * (0.25 * 3 + 0.125) / 2)

    def test_out_of_horizon(self) -> None:
        table = dr_tree_scheme(LAM, 3)
        with pytest.raises(LevelOutOfHorizonError):
            tree_referral_payoff(table, LAM, 2, 2, 3, 0)

    @pytest.mark.parametrize("c", [(0.4, 0.0, 0.6), (0.25, 0.0, 0.75), (0.1, 0.2, 0.7)])
    def test_honest_dominates_bound(self, c: tuple[float, float, float]) -> None:
        dist = OffspringDistribution(d=2, c=c)
        lam = branching_profile(dist, 20, 15, with_landmarks=False).lam
        table = dr_tree_scheme(lam, 15)
        for row in tree_payoff_grid(table, lam, 2, 20):
            assert row.margin >= -1e-9 * max(1.0, abs(row.honest))


class TestLowerBounds:
    def test_small_case(self) -> None:
        bounds = chain_lower_bounds(2, 3)
        assert bounds.r_min[0] == pytest.approx(0.5)
        assert bounds.a_min[0] == pytest.approx(1.5)
        assert bounds.a_min[-1] == 1.0

    def test_single_level(self) -> None:
        bounds = chain_lower_bounds(2, 1)
        assert bounds.r_min == () and bounds.a_min == (1.0,)

    @pytest.mark.parametrize("n", [2, 10, 100])
    @pytest.mark.parametrize("h", [2, 17, 50])
    def test_verbatim_attains_bounds(self, n: float, h: int) -> None:
        table = dr_chain_scheme(n, h, normalized=False)
        bounds = chain_lower_bounds(n, h)
        for i in range(1, h):
            assert table.r(i, 1) == pytest.approx(bounds.r_min[i - 1], abs=1e-12, rel=1e-12)
        for i in range(1, h + 1):
            assert table.r(i, 0) == pytest.approx(bounds.a_min[i - 1], rel=1e-12)

    def test_normalized_pays_at_least_bounds(self) -> None:
        table = dr_chain_scheme(3, 10)
        bounds = chain_lower_bounds(3, 10)
        assert all(table.r(i, 1) >= bounds.r_min[i - 1] for i in range(1, 10))


class TestGrid:
    def test_chain_grid_shape(self) -> None:
        grid = chain_payoff_grid(dr_chain_scheme(2, 3))
        # (i, k) in {(1,1), (1,2), (2,1)} for both holder flags
        assert len(grid) == 6
        assert {(row.i, row.k, row.holder) for row in grid} == {
            (1, 1, False), (1, 1, True), (1, 2, False), (1, 2, True), (2, 1, False), (2, 1, True),
        }

    def test_frame_columns(self) -> None:
        frame = payoff_grid_frame(chain_payoff_grid(dr_chain_scheme(2, 3, normalized=False)))
        assert list(frame.columns) == ["i", "k", "holder", "honest", "deviant", "margin", "conditioning"]
        worst = frame.loc[frame["margin"].idxmin()]
        assert (worst["i"], worst["k"], bool(worst["holder"])) == (1, 2, True)
        assert worst["margin"] == pytest.approx(-0.5)
