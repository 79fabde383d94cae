from enum import Enum
from typing import TYPE_CHECKING
import logging

import numpy as np

if TYPE_CHECKING:
    from referral.montecarlo.tree import SampledTree

LOG = logging.getLogger(__name__)


class SelectionRule(str, Enum):
    RW = "RW"
    SP = "SP"


def reachable_answers(tree: "SampledTree", horizon: int) -> list[int]:
    """Answer holders the query reaches under the equilibrium profile.

    A holder reports and stops propagating, agents at the horizon stop, and
    the root never holds an answer.
    """
    found: list[int] = []
    stack = [tree.root]
    while stack:
        node = stack.pop()
        level = tree.level[node]
        if node != tree.root and tree.answer[node]:
            found.append(node)
            continue
        if level >= horizon:
            continue
        stack.extend(tree.children[node])
    return found


def _reporting(tree: "SampledTree", targets: set[int]) -> set[int]:
    """Nodes whose subtree reports one of the targets: the targets and their ancestors."""
    reporting: set[int] = set()
    for node in targets:
        while node != -1 and node not in reporting:
            reporting.add(node)
            node = tree.parent[node]
    return reporting


def select_answer(tree: "SampledTree", rule: SelectionRule, rng: np.random.Generator,
                  horizon: int | None = None) -> list[int] | None:
    """The answer path root -> holder (root excluded), or None when nothing is reachable."""
    answers = reachable_answers(tree, tree.depth if horizon is None else horizon)
    if not answers:
        return None
    if rule == SelectionRule.SP:
        closest = min(tree.level[node] for node in answers)
        answers = [node for node in answers if tree.level[node] == closest]
    targets = set(answers)
    reporting = _reporting(tree, targets)

    path: list[int] = []
    node = tree.root
    while node not in targets:
        candidates = [child for child in tree.children[node] if child in reporting]
        node = candidates[int(rng.integers(len(candidates)))]
        path.append(node)
    return path
