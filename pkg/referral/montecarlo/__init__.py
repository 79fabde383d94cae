from .tree import Deviation, Placement, SampledTree, inject_sybils, sample_tree
from .protocol import BlockSummary, Estimate, GainEstimate, TrialOutcome, estimate, estimate_gain, run_trial
