"""Random-walk approximation of forward-backward SDEs."""

import json

from ._rwbsde import (
    Error,
    brute_force_y0,
    embedding_stats_csv,
    fit_slope,
    problem_names,
    reference,
    solve_levels,
    solve_y_z,
    validate,
    z_weight_estimate,
)
from . import _rwbsde

__all__ = [
    "Error",
    "brute_force_y0",
    "embedding_stats_csv",
    "fit_slope",
    "problem_names",
    "reference",
    "run_convergence",
    "run_zhat",
    "solve_levels",
    "solve_y_z",
    "validate",
    "z_weight_estimate",
]


def run_convergence(config):
    """Coupled convergence experiment; `config` is a dict in the CLI config format."""
    return json.loads(_rwbsde.run_convergence_json(json.dumps(config)))


def run_zhat(config):
    return json.loads(_rwbsde.run_zhat_json(json.dumps(config)))
