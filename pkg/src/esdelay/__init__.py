"""Discrete-time extremum seeking under unknown bounded time-varying delays.

Simulation of the unbiased and classical ES loops on quadratic maps with a
delayed measurement channel, closed-form stability certification for both
variants, and searches for the maximal admissible step parameter epsilon*.
"""

from esdelay.plant import QuadraticMap, DelayModel, UncertaintyBounds, SplitMix64
from esdelay.dither import DitherConfig, GainSchedule, make_period
from esdelay.estimator import EsRunConfig, Trajectory, run, run_error_system
from esdelay.bounds import BoundInputs, BoundChain, ChainUndefinedError
from esdelay.feasibility import SearchConfig, ConvergenceCriterion, FeasibilityReport

__all__ = [
    "QuadraticMap",
    "DelayModel",
    "UncertaintyBounds",
    "SplitMix64",
    "DitherConfig",
    "GainSchedule",
    "make_period",
    "EsRunConfig",
    "Trajectory",
    "run",
    "run_error_system",
    "BoundInputs",
    "BoundChain",
    "ChainUndefinedError",
    "SearchConfig",
    "ConvergenceCriterion",
    "FeasibilityReport",
]

__version__ = "0.1.0"
