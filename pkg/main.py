#!/usr/bin/env -S uv run --script
# /// script
# dependencies = [
#   "click",
#   "toml",
#   "pydantic",
#   "numpy",
#   "pandas"
# ]
# ///

from pathlib import Path
from typing import Any, Callable, TextIO, TypeVar
import functools
import json
import logging
import math

from pydantic import BaseModel, ConfigDict, model_validator
import click
import toml

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
)
from referral.branching import (
    DegenerateInputError,
    OffspringDistribution,
    UnsupportedRegimeError,
    branching_profile,
    landmarks,
    verify_lambda_properties,
)
from referral.deviation import (
    Deviation,
    chain_payoff_grid,
    chain_referral_payoff,
    payoff_grid_frame,
    tree_honest_payoff,
    tree_payoff_grid,
)
from referral.montecarlo import estimate
from referral.schemes import (
    InvalidHorizonError,
    RewardTable,
    SelectionRule,
    TableKind,
    dr_chain_scheme,
    dr_tree_scheme,
    dr_tree_scheme_for,
    split_counterexample_scheme,
)
from referral.shared import FLOAT_FORMAT, sigma_units, write_csv, write_json

LOG = logging.getLogger(__name__)

SIGMA_LIMIT = 3.0

CONFIG_ERRORS = (
    ValueError,
    UnsupportedRegimeError,
    InvalidHorizonError,
    MissingInputError,
    HorizonMismatchError,
    DegenerateInputError,
)

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class BranchingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    distribution: OffspringDistribution
    n: float
    h: int
    # None computes landmarks whenever b > 1
    landmarks: bool | None = None
    require_growth: bool = False


class SchemeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: TableKind
    h: int | None = None
    n: float | None = None
    distribution: OffspringDistribution | None = None
    lam: list[float] | None = None
    base: float | None = None
    table_file: Path | None = None

    @model_validator(mode="after")
    def _check_inputs(self) -> "SchemeConfig":
        if self.kind == TableKind.CUSTOM:
            if self.table_file is None:
                raise ValueError("A custom table needs table_file")
            return self
        if self.h is None:
            raise ValueError(f"A {self.kind.value} table needs h")
        if self.kind.is_chain_dr and self.n is None:
            raise ValueError(f"A {self.kind.value} table needs n")
        if self.kind == TableKind.TREE_DR and self.lam is None and (self.distribution is None or self.n is None):
            raise ValueError("A tree_dr table needs lam, or distribution and n")
        if self.kind == TableKind.SPLIT_COUNTEREXAMPLE and self.base is None:
            raise ValueError("A split_counterexample table needs base")
        return self


class AuditConfig(SchemeConfig):
    d: int | None = None
    mode: AuditMode = AuditMode.ANALYTIC
    tolerance: float = 1e-9
    trials: int = 20_000
    master_seed: int = 0
    rule: SelectionRule = SelectionRule.RW


class SimulateConfig(SchemeConfig):
    rule: SelectionRule = SelectionRule.SP
    deviation: Deviation | None = None
    trials: int = 10_000
    master_seed: int = 0
    block_size: int = 100_000
    workers: int = 1

    @model_validator(mode="after")
    def _check_sampling(self) -> "SimulateConfig":
        if self.n is None:
            raise ValueError("Simulation needs the answer rarity n")
        if self.kind == TableKind.TREE_DR and self.distribution is None:
            raise ValueError("Simulating a tree_dr table needs its distribution")
        return self


class CostScalingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    distribution: OffspringDistribution
    n: float
    h_list: list[int]
    normalized: bool = False


def load_config(model: type[ConfigT], config: TextIO, **overrides: Any) -> ConfigT:
    raw = json.load(config) if config.name.endswith(".json") else toml.load(config)
    raw.update({key: value for key, value in overrides.items() if value is not None})
    return model(**raw)


def usage_errors(command: Callable[..., None]) -> Callable[..., None]:
    """Report bad configurations as usage errors (exit code 2)."""
    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            command(*args, **kwargs)
        except CONFIG_ERRORS as exc:
            raise click.UsageError(str(exc)) from exc
    return wrapper


def fail(message: str) -> None:
    click.echo(message, err=True)
    click.get_current_context().exit(1)


def build_table(cfg: SchemeConfig) -> RewardTable:
    match cfg.kind:
        case TableKind.CUSTOM:
            assert cfg.table_file
            table = RewardTable.from_json(cfg.table_file.read_text(encoding="utf-8"))
        case TableKind.CHAIN_DR_VERBATIM | TableKind.CHAIN_DR_NORMALIZED:
            assert cfg.n and cfg.h is not None
            table = dr_chain_scheme(cfg.n, cfg.h, normalized=cfg.kind == TableKind.CHAIN_DR_NORMALIZED)
        case TableKind.TREE_DR:
            assert cfg.h is not None
            if cfg.lam is not None:
                table = dr_tree_scheme(cfg.lam, cfg.h)
            else:
                assert cfg.distribution and cfg.n
                table = dr_tree_scheme_for(cfg.distribution, cfg.n, cfg.h)
        case TableKind.SPLIT_COUNTEREXAMPLE:
            assert cfg.base is not None and cfg.h is not None
            table = split_counterexample_scheme(cfg.h, cfg.base)
    if cfg.n is not None and table.n is None:
        table = table.model_copy(update={"n": cfg.n})
    return table


def first_answer(cfg: SchemeConfig, table: RewardTable) -> list[float] | None:
    """lambda_1..lambda_h of the process the table is evaluated on."""
    if table.kind != TableKind.TREE_DR:
        return chain_first_answer(cfg.n, table.h) if cfg.n else None
    if cfg.lam is not None:
        return cfg.lam[:table.h]
    if cfg.distribution and cfg.n:
        return list(branching_profile(cfg.distribution, cfg.n, table.h, with_landmarks=False).lam)
    return None


@click.group()
@click.option('--verbose', '-v', is_flag=True, help="Log every numeric step")
def cli(verbose: bool) -> None:
    """Build and audit sybil-proof direct referral query incentive mechanisms"""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


def config_option(command: Callable[..., None]) -> Callable[..., None]:
    return click.option('--config', '-c', required=True, help="The TOML or JSON configuration file",
                        type=click.File(mode='r', encoding='utf-8'))(command)


def out_option(command: Callable[..., None]) -> Callable[..., None]:
    return click.option('--out', '-o', default="results", help="Directory the reports are written to",
                        type=click.Path(file_okay=False, path_type=Path))(command)


@cli.command('analyze-branching')
@config_option
@out_option
@usage_errors
def analyze_branching(config: TextIO, out: Path) -> None:
    cfg = load_config(BranchingConfig, config)
    if cfg.landmarks and cfg.distribution.b <= 1:
        raise UnsupportedRegimeError("branching factor b must exceed 1 for landmarks", cfg.distribution.b)
    with_landmarks = cfg.landmarks if cfg.landmarks is not None else cfg.distribution.b > 1
    profile = branching_profile(cfg.distribution, cfg.n, cfg.h, with_landmarks=False)
    rows = [{"level": i, "phi": phi, "lambda": profile.lam[i - 1] if i else None} for i, phi in enumerate(profile.phi)]
    write_csv(out / "branching.csv", rows, ["level", "phi", "lambda"])
    print(f"b={cfg.distribution.b} zeta={profile.zeta} success probability {profile.success_probability}")
    if not with_landmarks:
        return

    marks = landmarks(cfg.distribution, cfg.n, cfg.h, require_growth=cfg.require_growth,
                      phi=list(profile.phi), lam=list(profile.lam))
    profile = profile.model_copy(update={"landmarks": marks})
    write_json(out / "landmarks.json", {
        "b": cfg.distribution.b,
        "zeta": profile.zeta,
        "success_probability": profile.success_probability,
        "landmarks": marks,
    })
    checks = verify_lambda_properties(profile)
    write_json(out / "lambda_properties.json", checks)
    failed = [check.name for check in checks if not check.passed]
    if failed:
        fail(f"Lambda properties failed: {', '.join(failed)}")


@cli.command('build-scheme')
@config_option
@out_option
@usage_errors
def build_scheme(config: TextIO, out: Path) -> None:
    cfg = load_config(SchemeConfig, config)
    table = build_table(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scheme.json").write_text(table.to_json(), encoding="utf-8")
    if table.tree:
        print(f"h={table.h} kind={table.kind.value} x_1={table.tree.x[0]:.17g} a_1={table.tree.a[0]:.17g}")
    else:
        print(f"h={table.h} kind={table.kind.value} r(1,0)={table.r(1, 0):.17g}")


@cli.command()
@config_option
@out_option
@click.option('--seed', type=int, help="Master seed, overrides the configuration")
@click.option('--trials', type=int, help="Monte Carlo trials, overrides the configuration")
@usage_errors
def audit(config: TextIO, out: Path, seed: int | None, trials: int | None) -> None:
    cfg = load_config(AuditConfig, config, master_seed=seed, trials=trials)
    table = build_table(cfg)
    lam = first_answer(cfg, table)
    d = cfg.d or (cfg.distribution.d if cfg.distribution else None)
    report = check_sybil_proofness(table, n=cfg.n, lam=lam, d=d, dist=cfg.distribution, mode=cfg.mode,
                                   tol=cfg.tolerance, trials=cfg.trials, master_seed=cfg.master_seed, rule=cfg.rule)

    checks = list(report.property_checks)
    if table.kind.is_chain_dr:
        assert table.n
        checks.append(optimality_check(table.n, table.h))
        checks.extend(check_x_properties(table))
    elif table.kind == TableKind.TREE_DR and cfg.distribution and cfg.n and cfg.distribution.b > 1:
        checks.extend(check_x_properties(table, branching_profile(cfg.distribution, cfg.n, table.h)))
    report = report.model_copy(update={"property_checks": checks})
    report.write(out)

    if table.kind == TableKind.TREE_DR:
        assert lam is not None and d is not None and cfg.n
        grid = tree_payoff_grid(table, lam, d, cfg.n)
    else:
        grid = chain_payoff_grid(table, cfg.n)
    payoff_grid_frame(grid).to_csv(out / "payoff_grid.csv", index=False, float_format=FLOAT_FORMAT,
                                   lineterminator="\r\n")

    print(f"{report.verdict.value}: {len(report.witnesses)} witnesses, cost {report.cost:.17g}")
    failed = [check.name for check in checks if not check.passed]
    if report.verdict == Verdict.VIOLATED or failed:
        fail(f"Audit failed: verdict {report.verdict.value}, failed checks {failed}")


def analytic_utility(cfg: SimulateConfig, table: RewardTable, lam: list[float]) -> float | None:
    """Unconditioned honest payoff of a forced non-holder, where a closed form exists."""
    deviation = cfg.deviation
    if deviation is None or deviation.sybils != 0 or deviation.holder is not False or deviation.level >= table.h:
        return None
    assert cfg.n
    if table.kind == TableKind.TREE_DR:
        assert cfg.distribution
        return tree_honest_payoff(table, lam, cfg.distribution.d, cfg.n, deviation.level).value
    reach = (1 - 1 / cfg.n) ** (deviation.level - 1)
    return reach * chain_referral_payoff(table, deviation.level, 0, cfg.n).value


@cli.command()
@config_option
@out_option
@click.option('--seed', type=int, help="Master seed, overrides the configuration")
@click.option('--trials', type=int, help="Monte Carlo trials, overrides the configuration")
@usage_errors
def simulate(config: TextIO, out: Path, seed: int | None, trials: int | None) -> None:
    cfg = load_config(SimulateConfig, config, master_seed=seed, trials=trials)
    table = build_table(cfg)
    assert cfg.n
    dist = cfg.distribution if table.kind == TableKind.TREE_DR else OffspringDistribution.chain()
    assert dist
    result = estimate(dist, cfg.n, table.h, table, cfg.rule, deviation=cfg.deviation, trials=cfg.trials,
                      master_seed=cfg.master_seed, block_size=cfg.block_size, workers=cfg.workers)

    levels = [f"level_{i}" for i in range(1, table.h + 1)]
    rows = []
    for block in result.blocks:
        low, high = block.cost.confidence_interval()
        utility_low, utility_high = block.utility.confidence_interval()
        rows.append({
            "trial_block": block.block,
            "trials": block.trials,
            "mean_cost": block.cost.mean,
            "ci_low": low,
            "ci_high": high,
            **{level: count / block.trials for level, count in zip(levels, block.level_counts)},
            "mean_utility": block.utility.mean,
            "utility_ci": (utility_high - utility_low) / 2,
        })
    write_csv(out / "results.csv", rows,
              ["trial_block", "trials", "mean_cost", "ci_low", "ci_high", *levels, "mean_utility", "utility_ci"])

    summary: dict[str, Any] = result.model_dump(exclude={"blocks"})
    lam = first_answer(cfg, table)
    assert lam is not None
    # selected answer is the first one only when SP picks it or the chain has a single candidate
    comparable = cfg.rule == SelectionRule.SP or table.kind != TableKind.TREE_DR
    deltas: dict[str, Any] = {}
    if comparable and cfg.deviation is None:
        analytic_cost = expected_cost(table, lam)
        deltas["expected_cost"] = analytic_cost
        deltas["cost_sigma"] = sigma_units(result.mean_cost, analytic_cost, result.cost_stderr)
    if cfg.deviation is None:
        deltas["level_sigma"] = [
            sigma_units(freq, expected, math.sqrt(expected * (1 - expected) / result.trials))
            for freq, expected in zip(result.level_histogram, lam)
        ]
    utility = analytic_utility(cfg, table, lam) if comparable else None
    if utility is not None:
        deltas["expected_utility"] = utility
        deltas["utility_sigma"] = sigma_units(result.mean_utility, utility, result.utility_stderr)
    summary["analytic"] = deltas
    write_json(out / "summary.json", summary)
    print(f"mean cost {result.mean_cost:.17g} over {result.trials} trials")

    if result.trials < 2:
        LOG.warning("A single trial has no confidence interval; not enforcing the analytic comparison")
        return
    sigmas = [deltas.get("cost_sigma", 0.0), deltas.get("utility_sigma", 0.0), *deltas.get("level_sigma", [])]
    worst = max((abs(value) for value in sigmas), default=0.0)
    if worst > SIGMA_LIMIT:
        fail(f"Simulation deviates from the analytic value by {worst} standard errors")


@cli.command('cost-scaling')
@config_option
@out_option
@usage_errors
def cost_scaling(config: TextIO, out: Path) -> None:
    cfg = load_config(CostScalingConfig, config)
    rows = cost_scaling_report(cfg.distribution, cfg.n, cfg.h_list, normalized=cfg.normalized)
    write_csv(out / "cost_scaling.csv", [row.model_dump() for row in rows], list(rows[0].model_dump()) if rows else [])
    outside = [row.h for row in rows if row.in_bracket is False]
    if outside:
        fail(f"Chain cost outside the bracket at h={outside}")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    cli()
