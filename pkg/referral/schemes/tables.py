from enum import Enum
from typing import Any, Sequence
import json
import logging
import math

from pydantic import BaseModel, ConfigDict

from referral.branching import (
    DegenerateInputError,
    OffspringDistribution,
    first_answer_recurrence,
    no_answer_probabilities,
)
from referral.shared import TINY, dumps

LOG = logging.getLogger(__name__)


class InvalidHorizonError(Exception):
    h: int

    def __init__(self, h: int, reason: str = "horizon must be at least 1") -> None:
        super().__init__(f"Invalid horizon h={h}: {reason}")
        self.h = h


class OutOfHorizonError(Exception):
    path_len: int
    h: int

    def __init__(self, path_len: int, h: int) -> None:
        super().__init__(f"Answer path of length {path_len} is outside the horizon 1..{h}")
        self.path_len = path_len
        self.h = h


class TableKind(str, Enum):
    CHAIN_DR_VERBATIM = "chain_dr_verbatim"
    CHAIN_DR_NORMALIZED = "chain_dr_normalized"
    TREE_DR = "tree_dr"
    CUSTOM = "custom"
    SPLIT_COUNTEREXAMPLE = "split_counterexample"

    @property
    def is_chain_dr(self) -> bool:
        return self in (TableKind.CHAIN_DR_VERBATIM, TableKind.CHAIN_DR_NORMALIZED)


class ChainAux(BaseModel):
    model_config = ConfigDict(frozen=True)

    # P[j - 1] = P_j, R[i - 1] = R_i
    P: tuple[float, ...]
    R: tuple[float, ...]


class TreeAux(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: tuple[float, ...]
    a: tuple[float, ...]


class RewardTable(BaseModel):
    """An oblivious reward scheme: r(i, s) pays the i-th agent of a path whose answer sits at level i + s."""
    model_config = ConfigDict(frozen=True)

    h: int
    kind: TableKind
    entries: dict[tuple[int, int], float]
    n: float | None = None
    chain: ChainAux | None = None
    tree: TreeAux | None = None

    def r(self, i: int, s: int) -> float:
        return self.entries.get((i, s), 0.0)

    def to_json(self) -> str:
        aux: dict[str, Any] = {}
        if self.chain:
            aux = {"P": list(self.chain.P), "R": list(self.chain.R)}
        if self.tree:
            aux = {"x": list(self.tree.x), "a": list(self.tree.a)}
        if self.n is not None:
            aux["n"] = self.n
        return dumps({
            "h": self.h,
            "kind": self.kind.value,
            "entries": [[i, s, r] for (i, s), r in sorted(self.entries.items())],
            "aux": aux,
        })

    @classmethod
    def from_json(cls, text: str) -> "RewardTable":
        """Load a table; the aux record is kept only for kinds that define one."""
        raw = json.loads(text)
        h = int(raw["h"])
        if h < 1:
            raise InvalidHorizonError(h)
        kind = TableKind(raw.get("kind", TableKind.CUSTOM.value))
        entries: dict[tuple[int, int], float] = {}
        for i, s, value in raw["entries"]:
            if not (i >= 1 and s >= 0 and i + s <= h):
                raise ValueError(f"Entry ({i}, {s}) is outside the domain of a table with h={h}")
            entries[(int(i), int(s))] = float(value)
        aux = raw.get("aux", {})
        chain = ChainAux(P=tuple(aux["P"]), R=tuple(aux["R"])) if kind.is_chain_dr and "P" in aux else None
        tree = TreeAux(x=tuple(aux["x"]), a=tuple(aux["a"])) if kind == TableKind.TREE_DR and "x" in aux else None
        return cls(h=h, kind=kind, entries=entries, n=aux.get("n"), chain=chain, tree=tree)


def _check_horizon(h: int) -> None:
    if h < 1:
        raise InvalidHorizonError(h)


def answer_within(n: float, j: int) -> float:
    """P_j: probability of an answer among j consecutive agents."""
    return 1.0 - (1.0 - 1.0 / n) ** j if j > 0 else 0.0


def dr_chain_scheme(n: float, h: int, normalized: bool = True) -> RewardTable:
    if not n > 1:
        raise ValueError(f"Answer rarity n must exceed 1, got {n}")
    _check_horizon(h)
    p = 1.0 / n
    P = [answer_within(n, j) for j in range(0, h + 1)]
    r1 = [0.0] * (h + 1)
    R = [0.0] * (h + 2)
    # R_h is the empty sum
    for i in range(h - 1, 0, -1):
        value = n * R[i + 1] + P[h - i - 1]
        if normalized:
            value = max(value, 1.0)
        r1[i] = value
        R[i] = p * value + (1 - p) * P[h - i - 1]

    entries: dict[tuple[int, int], float] = {}
    for i in range(1, h + 1):
        entries[(i, 0)] = math.fsum(r1[i:h]) + 1.0
        if i <= h - 1:
            entries[(i, 1)] = r1[i]
        for s in range(2, h - i + 1):
            entries[(i, s)] = 1.0
    kind = TableKind.CHAIN_DR_NORMALIZED if normalized else TableKind.CHAIN_DR_VERBATIM
    LOG.info(f"Built {kind.value} table n={n} h={h}: r(1,0)={entries[(1, 0)]}")
    return RewardTable(h=h, kind=kind, entries=entries, n=n,
                       chain=ChainAux(P=tuple(P[1:]), R=tuple(R[1:h + 1])))


def dr_tree_scheme(lam: Sequence[float], h: int) -> RewardTable:
    _check_horizon(h)
    if len(lam) < h:
        raise InvalidHorizonError(h, f"only {len(lam)} first-answer probabilities given")
    for level in range(1, h + 1):
        if lam[level - 1] <= TINY:
            raise DegenerateInputError(level, lam[level - 1])

    x = [0.0] * (h + 1)
    for i in range(h - 1, 0, -1):
        pressure = math.fsum(lam[i:h]) / lam[i]
        best, best_j = -math.inf, i + 1
        for j in range(i + 1, h + 1):
            candidate = x[j] + (j - i) * pressure
            if candidate > best:
                best, best_j = candidate, j
        x[i] = best
        LOG.debug(f"x_{i} = {best} attained at j={best_j}")

    a = [0.0] * (h + 2)
    a[h] = 1.0
    for i in range(h - 1, 0, -1):
        a[i] = x[i] + a[i + 1] + 1.0

    entries: dict[tuple[int, int], float] = {}
    for i in range(1, h + 1):
        entries[(i, 0)] = a[i]
        if i <= h - 1:
            entries[(i, 1)] = x[i]
        for s in range(2, h - i + 1):
            entries[(i, s)] = 1.0
    LOG.info(f"Built tree_dr table h={h}: x_1={x[1]}, a_1={a[1]}")
    return RewardTable(h=h, kind=TableKind.TREE_DR, entries=entries,
                       tree=TreeAux(x=tuple(x[1:h + 1]), a=tuple(a[1:h + 1])))


def dr_tree_scheme_for(dist: OffspringDistribution, n: float, h: int) -> RewardTable:
    lam = first_answer_recurrence(dist, n, no_answer_probabilities(dist, n, h))
    table = dr_tree_scheme(lam, h)
    return table.model_copy(update={"n": n})


def split_counterexample_scheme(h: int, base: float) -> RewardTable:
    """Every agent at position i is paid max(1, base / 2^(i-1)) whatever the answer depth.

    A holder that appends sybils collects the share of every position it
    fakes, the same way a ratio-0 split contract hands the whole reward to a sybil.
    """
    if h < 2:
        raise InvalidHorizonError(h, "the split counterexample needs h >= 2")
    if base < 1:
        raise ValueError(f"Base reward must be at least 1, got {base}")
    entries = {
        (i, s): max(1.0, base / 2 ** (i - 1))
        for i in range(1, h + 1)
        for s in range(0, h - i + 1)
    }
    return RewardTable(h=h, kind=TableKind.SPLIT_COUNTEREXAMPLE, entries=entries)


def allocate(table: RewardTable, path_len: int) -> list[float]:
    if not 1 <= path_len <= table.h:
        raise OutOfHorizonError(path_len, table.h)
    return [table.r(i, path_len - i) for i in range(1, path_len + 1)]
