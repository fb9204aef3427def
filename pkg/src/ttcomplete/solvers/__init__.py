from ttcomplete.solvers.adf import adf_solve
from ttcomplete.solvers.als import als_solve
from ttcomplete.solvers.common import Algorithm, SolverConfig, SolverReport, SweepOrder, rank_increase

__all__ = [
    "Algorithm",
    "SolverConfig",
    "SolverReport",
    "SweepOrder",
    "adf_solve",
    "als_solve",
    "rank_increase",
    "solve",
]


def solve(samples, control=None, cfg=None, init=None):
    """Dispatch on ``cfg.algorithm``."""
    cfg = cfg or SolverConfig()
    if cfg.algorithm is Algorithm.ALS:
        return als_solve(samples, control, cfg, init)
    return adf_solve(samples, control, cfg, init, sor=cfg.algorithm is Algorithm.ADF_SOR)
