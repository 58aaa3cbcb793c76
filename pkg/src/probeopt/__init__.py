"""Optimal Bayesian strategies for probing parameter-encoding quantum channels.

Subpackages build up from a labeled operator core to channel models, prior
discretizations, tester semidefinite programs, the seesaw driver, adaptive
greedy Monte Carlo, and physical-realization extraction.  The names most
workflows need are re-exported here.
"""

from .channels import (
    amplitude_damping_channel,
    compose,
    phase_channel,
    su2_channel,
    thermometry_channel,
)
from .costs import kernel_by_name
from .greedy import GreedyConfig, GreedyReport, run_greedy
from .priors import haar_prior_su2, sine_exp_prior, uniform_prior, with_channel
from .realization import (
    realization_bundle,
    realize_general,
    realize_parallel,
    realize_sequential_k2,
)
from .sdp import TesterSet, general, parallel, sequential, solve_testers, strategy_by_name
from .seesaw import SeesawConfig, SeesawProblem, SeesawResult, run_seesaw

__version__ = "0.1.0"

__all__ = [
    "amplitude_damping_channel",
    "compose",
    "phase_channel",
    "su2_channel",
    "thermometry_channel",
    "kernel_by_name",
    "GreedyConfig",
    "GreedyReport",
    "run_greedy",
    "haar_prior_su2",
    "sine_exp_prior",
    "uniform_prior",
    "with_channel",
    "realization_bundle",
    "realize_general",
    "realize_parallel",
    "realize_sequential_k2",
    "general",
    "parallel",
    "sequential",
    "strategy_by_name",
    "solve_testers",
    "TesterSet",
    "SeesawConfig",
    "SeesawProblem",
    "SeesawResult",
    "run_seesaw",
    "__version__",
]
