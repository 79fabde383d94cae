from .process import (
    ConvergenceError,
    DegenerateInputError,
    OffspringDistribution,
    UnsupportedRegimeError,
    branching_factor,
    checked_ratio,
    extinction_probability,
    first_answer_distribution,
    first_answer_recurrence,
    no_answer_map,
    no_answer_map_derivative,
    no_answer_probabilities,
)
from .profile import BranchingProfile, Landmarks, PropertyCheck, branching_profile, landmarks, verify_lambda_properties
