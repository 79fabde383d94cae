from .cost import (
    CostBreakdown,
    CostScalingRow,
    HorizonMismatchError,
    chain_cost_bracket,
    chain_first_answer,
    cost_scaling_report,
    expected_cost,
    tree_cost_breakdown,
)
from .sybil import AuditMode, AuditReport, MissingInputError, Verdict, Witness, check_sybil_proofness
from .properties import check_x_properties, optimality_check
