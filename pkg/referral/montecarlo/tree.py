from enum import Enum
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from referral.branching import OffspringDistribution

LOG = logging.getLogger(__name__)


class Placement(str, Enum):
    AGENT = "agent"
    LAST_SYBIL = "last_sybil"


class Deviation(BaseModel):
    """A single agent at `level` inserting a chain of `sybils` fake identities below itself.

    `holder` forces the agent's answer mark (None keeps the sampled one), so
    payoffs can be measured conditioned on holding or not holding an answer.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    level: int = Field(ge=1)
    sybils: int = Field(default=0, ge=0)
    holder: bool | None = None
    placement: Placement = Placement.LAST_SYBIL

    def honest(self) -> "Deviation":
        return self.model_copy(update={"sybils": 0})


class SampledTree:
    """A realized active tree truncated at `depth`; node 0 is the root at level 0.

    Nodes keep the slot they occupy among their parent's d possible children,
    so a node is on the spine (the leftmost path of the underlying d-ary tree)
    when every slot on its path is 0.
    """
    arity: int
    depth: int
    parent: list[int]
    children: list[list[int]]
    level: list[int]
    slot: list[int]
    answer: list[bool]
    sybil: list[bool]
    # real agent a sybil belongs to, -1 for real agents
    owner: list[int]

    root = 0

    def __init__(self, arity: int, depth: int) -> None:
        self.arity = arity
        self.depth = depth
        self.parent = [-1]
        self.children = [[]]
        self.level = [0]
        self.slot = [0]
        self.answer = [False]
        self.sybil = [False]
        self.owner = [-1]

    def __len__(self) -> int:
        return len(self.parent)

    def add_node(self, parent: int, slot: int = 0, answer: bool = False, sybil: bool = False, owner: int = -1) -> int:
        node = len(self.parent)
        self.parent.append(parent)
        self.children.append([])
        self.level.append(self.level[parent] + 1)
        self.slot.append(slot)
        self.answer.append(answer)
        self.sybil.append(sybil)
        self.owner.append(owner)
        self.children[parent].append(node)
        return node

    def copy(self) -> "SampledTree":
        other = SampledTree(self.arity, self.depth)
        other.parent = list(self.parent)
        other.children = [list(c) for c in self.children]
        other.level = list(self.level)
        other.slot = list(self.slot)
        other.answer = list(self.answer)
        other.sybil = list(self.sybil)
        other.owner = list(self.owner)
        return other

    def spine_node(self, level: int) -> int | None:
        node = self.root
        for _ in range(level):
            nxt = next((c for c in self.children[node] if self.slot[c] == 0 and not self.sybil[c]), None)
            if nxt is None:
                return None
            node = nxt
        return node

    def ancestors(self, node: int) -> list[int]:
        """Strict ancestors of node, root excluded, nearest first."""
        result = []
        node = self.parent[node]
        while node not in (-1, self.root):
            result.append(node)
            node = self.parent[node]
        return result

    def descendants(self, node: int) -> list[int]:
        result = []
        stack = list(self.children[node])
        while stack:
            current = stack.pop()
            result.append(current)
            stack.extend(self.children[current])
        return result

    def reached(self, node: int, horizon: int) -> bool:
        """Whether the query arrives at node: no ancestor holds an answer and all ancestors propagate."""
        if self.level[node] > horizon:
            return False
        return not any(self.answer[a] for a in self.ancestors(node))


def sample_tree(dist: OffspringDistribution, n: float, depth: int, rng: np.random.Generator,
                expand_spine: bool = True) -> SampledTree:
    """Sample the active tree level by level down to `depth`.

    Answer holders stop the query, so their subtrees are not generated,
    except along the spine where a deviation may later overwrite the mark.
    """
    if depth < 0:
        raise ValueError(f"Depth must be non-negative, got {depth}")
    p = 1.0 / n
    tree = SampledTree(dist.d, depth)
    probabilities = np.asarray(dist.c, dtype=np.float64)
    frontier = [tree.root]
    spine = {tree.root}
    for _ in range(depth):
        next_frontier = []
        for node in frontier:
            if node != tree.root and tree.answer[node] and not (expand_spine and node in spine):
                continue
            count = int(rng.choice(dist.d + 1, p=probabilities))
            slots = sorted(int(s) for s in rng.choice(dist.d, size=count, replace=False)) if count else []
            for slot in slots:
                child = tree.add_node(node, slot=slot, answer=bool(rng.random() < p))
                if node in spine and slot == 0:
                    spine.add(child)
                next_frontier.append(child)
        frontier = next_frontier
    return tree


def inject_sybils(tree: SampledTree, deviation: Deviation, agent: int | None = None) -> SampledTree:
    """Insert the deviation's sybil chain below the agent and re-attach its children to the last sybil."""
    if deviation.level > tree.depth:
        raise ValueError(f"Deviation level {deviation.level} is below the sampled depth {tree.depth}")
    if deviation.sybils == 0:
        return tree
    agent = tree.spine_node(deviation.level) if agent is None else agent
    if agent is None:
        return tree
    result = tree.copy()
    original_children = result.children[agent]
    result.children[agent] = []
    last = agent
    for _ in range(deviation.sybils):
        last = result.add_node(last, slot=0, sybil=True, owner=agent)
    result.children[last] = original_children
    for child in original_children:
        result.parent[child] = last
        for node in [child, *result.descendants(child)]:
            result.level[node] += deviation.sybils
    if result.answer[agent] and deviation.placement == Placement.LAST_SYBIL:
        result.answer[agent] = False
        result.answer[last] = True
    result.depth = tree.depth + deviation.sybils
    return result
