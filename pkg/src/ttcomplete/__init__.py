"""Low-rank tensor completion in the tensor train format."""

from ttcomplete.sampling import SampleSet, draw_sample_set, generate_index_set
from ttcomplete.solvers import Algorithm, SolverConfig, SolverReport, SweepOrder, solve
from ttcomplete.tt_core import TTRep, evaluate, full_tensor

__all__ = [
    "Algorithm",
    "SampleSet",
    "SolverConfig",
    "SolverReport",
    "SweepOrder",
    "TTRep",
    "draw_sample_set",
    "evaluate",
    "full_tensor",
    "generate_index_set",
    "solve",
]
