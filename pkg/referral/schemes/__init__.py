from .tables import (
    ChainAux,
    InvalidHorizonError,
    OutOfHorizonError,
    RewardTable,
    TableKind,
    TreeAux,
    allocate,
    answer_within,
    dr_chain_scheme,
    dr_tree_scheme,
    dr_tree_scheme_for,
    split_counterexample_scheme,
)
from .selection import SelectionRule, reachable_answers, select_answer
