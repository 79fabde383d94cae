from concurrent.futures import ProcessPoolExecutor
import logging
import math

import numpy as np
from pydantic import BaseModel

from referral.branching import OffspringDistribution
from referral.schemes import RewardTable, SelectionRule, allocate, reachable_answers, select_answer
from referral.shared import RunningStats, trial_rng

from .tree import Deviation, SampledTree, inject_sybils, sample_tree

LOG = logging.getLogger(__name__)

TREE_STREAM = 0
SELECTION_STREAM = 1


class TrialOutcome(BaseModel):
    answer_level: int | None = None
    # shallowest reachable answer, whichever one the rule selects
    first_answer_level: int | None = None
    path: list[int] = []
    rewards: list[float] = []
    total_cost: float = 0.0
    monitored_utility: float = 0.0
    monitored_active: bool = False
    # the monitored agent forwarded an answer held by someone else / by its child
    on_path: bool = False
    direct_referral: bool = False


def run_trial(tree: SampledTree, table: RewardTable, rule: SelectionRule, rng: np.random.Generator,
              deviation: Deviation | None = None) -> TrialOutcome:
    """Play the equilibrium profile on one sampled tree, with at most one deviating agent."""
    horizon = table.h
    agent: int | None = None
    work = tree
    if deviation is not None:
        candidate = tree.spine_node(deviation.level)
        if candidate is not None and tree.reached(candidate, horizon):
            agent = candidate
            if deviation.holder is not None and tree.answer[agent] != deviation.holder:
                work = tree.copy()
                work.answer[agent] = deviation.holder
            work = inject_sybils(work, deviation, agent)
        else:
            LOG.debug(f"Monitored agent at level {deviation.level} is not active in this tree")

    answers = reachable_answers(work, horizon)
    first = min((work.level[node] for node in answers), default=None)
    path = select_answer(work, rule, rng, horizon)
    if path is None:
        return TrialOutcome(monitored_active=agent is not None)
    rewards = allocate(table, len(path))
    outcome = TrialOutcome(
        answer_level=len(path),
        first_answer_level=first,
        path=path,
        rewards=rewards,
        total_cost=math.fsum(rewards),
        monitored_active=agent is not None,
    )
    if agent is not None:
        mine = [idx for idx, node in enumerate(path) if node == agent or work.owner[node] == agent]
        outcome.monitored_utility = math.fsum(rewards[idx] for idx in mine)
        outcome.on_path = agent in path[:-1]
        outcome.direct_referral = len(path) >= 2 and path[-2] == agent
    return outcome


class BlockSummary(BaseModel):
    block: int
    trials: int
    cost: RunningStats
    utility: RunningStats
    level_counts: list[int]
    selected_counts: list[int]
    on_path: int = 0
    direct_referral: int = 0
    not_active: int = 0

    def merge(self, other: "BlockSummary") -> "BlockSummary":
        return BlockSummary(
            block=min(self.block, other.block),
            trials=self.trials + other.trials,
            cost=self.cost.merge(other.cost),
            utility=self.utility.merge(other.utility),
            level_counts=[a + b for a, b in zip(self.level_counts, other.level_counts)],
            selected_counts=[a + b for a, b in zip(self.selected_counts, other.selected_counts)],
            on_path=self.on_path + other.on_path,
            direct_referral=self.direct_referral + other.direct_referral,
            not_active=self.not_active + other.not_active,
        )


class Estimate(BaseModel):
    trials: int
    mean_cost: float
    cost_stderr: float
    cost_ci: tuple[float, float]
    level_histogram: list[float]
    selected_histogram: list[float]
    mean_utility: float
    utility_stderr: float
    utility_ci: tuple[float, float]
    rev_frequency: float
    dr_frequency: float
    not_active_frequency: float
    blocks: list[BlockSummary]

    def level_stderr(self, level: int) -> float:
        freq = self.level_histogram[level - 1]
        return math.sqrt(freq * (1 - freq) / self.trials)


def _run_block(dist: OffspringDistribution, n: float, table: RewardTable, rule: SelectionRule,
               deviation: Deviation | None, first: int, count: int, master_seed: int, block: int) -> BlockSummary:
    summary = BlockSummary(block=block, trials=count, cost=RunningStats(), utility=RunningStats(),
                           level_counts=[0] * table.h, selected_counts=[0] * table.h)
    for trial in range(first, first + count):
        tree = sample_tree(dist, n, table.h, trial_rng(master_seed, trial, TREE_STREAM))
        outcome = run_trial(tree, table, rule, trial_rng(master_seed, trial, SELECTION_STREAM), deviation)
        summary.cost.push(outcome.total_cost)
        summary.utility.push(outcome.monitored_utility)
        if outcome.first_answer_level is not None:
            summary.level_counts[outcome.first_answer_level - 1] += 1
        if outcome.answer_level is not None:
            summary.selected_counts[outcome.answer_level - 1] += 1
        summary.on_path += outcome.on_path
        summary.direct_referral += outcome.direct_referral
        summary.not_active += deviation is not None and not outcome.monitored_active
    LOG.info(f"Block {block}: {count} trials, mean cost {summary.cost.mean}")
    return summary


def estimate(dist: OffspringDistribution, n: float, h: int, table: RewardTable, rule: SelectionRule,
             deviation: Deviation | None = None, trials: int = 10_000, master_seed: int = 0,
             block_size: int = 100_000, workers: int = 1) -> Estimate:
    if trials < 1:
        raise ValueError(f"Need at least one trial, got {trials}")
    if h != table.h:
        raise ValueError(f"Horizon {h} does not match the table horizon {table.h}")
    starts = list(range(0, trials, block_size))
    jobs = [(dist, n, table, rule, deviation, start, min(block_size, trials - start), master_seed, idx)
            for idx, start in enumerate(starts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_run_block, *zip(*jobs)))
    else:
        blocks = [_run_block(*job) for job in jobs]

    total = blocks[0]
    for block in blocks[1:]:
        total = total.merge(block)
    return Estimate(
        trials=trials,
        mean_cost=total.cost.mean,
        cost_stderr=total.cost.stderr,
        cost_ci=total.cost.confidence_interval(),
        level_histogram=[count / trials for count in total.level_counts],
        selected_histogram=[count / trials for count in total.selected_counts],
        mean_utility=total.utility.mean,
        utility_stderr=total.utility.stderr,
        utility_ci=total.utility.confidence_interval(),
        rev_frequency=total.on_path / trials,
        dr_frequency=total.direct_referral / trials,
        not_active_frequency=total.not_active / trials,
        blocks=blocks,
    )


class GainEstimate(BaseModel):
    trials: int
    mean: float
    stderr: float
    ci: tuple[float, float]

    def significant(self, tol: float, sigmas: float = 3.0) -> bool:
        """Whether the deviation gains more than tol beyond sampling noise."""
        return self.mean - sigmas * self.stderr > tol


def estimate_gain(dist: OffspringDistribution, n: float, table: RewardTable, rule: SelectionRule,
                  deviation: Deviation, trials: int = 10_000, master_seed: int = 0) -> GainEstimate:
    """Deviant minus honest utility of the monitored agent, both played on the same trees and streams."""
    stats = RunningStats()
    honest = deviation.honest()
    for trial in range(trials):
        tree = sample_tree(dist, n, table.h, trial_rng(master_seed, trial, TREE_STREAM))
        base = run_trial(tree, table, rule, trial_rng(master_seed, trial, SELECTION_STREAM), honest)
        deviant = run_trial(tree, table, rule, trial_rng(master_seed, trial, SELECTION_STREAM), deviation)
        stats.push(deviant.monitored_utility - base.monitored_utility)
    LOG.info(f"Gain of {deviation}: {stats.mean} +- {stats.stderr} over {trials} trials")
    return GainEstimate(trials=trials, mean=stats.mean, stderr=stats.stderr, ci=stats.confidence_interval())
