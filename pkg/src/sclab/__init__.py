"""Small-noise stochastic conservation laws: solvers, kinetic diagnostics and LDP probes."""

__version__ = "0.1.0"

from .errors import (BlowUpError, ConfigError, CostError, DomainError, InsufficientDataError,
                     RangeError, SclabError, StabilityError)
from .models import (BoundsReport, Control, Field, FluxModel, NoiseModel, TorusGrid,
                     certify_bounds, control_norm_sq, flux_eval, flux_truncate, noise_eval)
from .hyperbolic import (SolverConfig, Trajectory, l1l1_distance, numerical_flux,
                         solve_parabolic, solve_skeleton, step_parabolic, step_skeleton)
from .stochastic import (NoisePath, derive_seed, increment_at, sample_increments,
                         simulate_batch, solve_stochastic, step_controlled)
from .kinetic import (DiscreteKineticMeasure, KineticSnapshot, TestFunction, XiGrid,
                      contraction_check, doubling_functional, heat_kinetic_residual,
                      kinetic_lift, l1_via_kinetic, mollifier_pair, parabolic_kinetic_measure)
from .ldp import (ActionResult, LDPFit, MCTable, OptConfig, RareEvent, action,
                  condition_b_gap, doubling_schedule, ldp_fit, mc_rare_event, minimize_action,
                  weak_continuity_probe)
from .config import ExperimentSpec, parse_config
from .cli import main, run_experiment
