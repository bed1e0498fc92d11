"""Pinned Ginzburg-Landau on 2D grids: Meissner state, first critical field,
vortex balls and energy minimization."""

from .balls import (
    Ball,
    BallCollection,
    LowerBoundParams,
    Lambda_eps,
    bad_set,
    ball_lower_bound,
    degree,
    grow_and_merge,
    initial_balls,
    lambda_eps,
    vorticity_estimate_check,
)
from .configs import make_meissner_config, make_vortex_config, radial_profile, random_config
from .driver import ExperimentSpec, SweepRow, parse_spec, report, run_sweep
from .elliptic import NonConvergence, SolveReport, coulomb_project, solve_rho, solve_xi
from .energetics import (
    Configuration,
    convexity_gap,
    el_residual,
    free_energy_weighted,
    gauge_transform,
    gl_energy,
    lm_decouple_check,
    split_energy,
    vorticity,
)
from .fields import ComplexField, PinningSpec, ScalarField, VectorField, make_pinning, read_dump, write_dump
from .grid import Grid, build_grid
from .meissner import MeissnerState, build_meissner, meissner_energy, verify_state
from .minimizer import MinimizeParams, energy_gradient, minimize_gl, minimize_local_U, phase_align
from .operators import curl, div, grad, integrate, perp_grad

__all__ = [name for name in dir() if not name.startswith("_")]
