"""Mean-field jump-diffusion particle systems: first-order tamed integrators
with refinement-coupled noise and a strong-convergence verification harness."""

__version__ = "0.1.0"

from .core import (Grid, MarkMeasure, ModelSpec, RunConfig, substream,
                   validate_model)
from .measure import (EmpiricalMeasure, ShiftedMeasure, measure_taylor_check,
                      shifted, w2_1d_exact, w2_index_bound, w2_to_dirac0)
from .models import (cubic_mean_field, mean_field_ou_jump, model_from_name,
                     moment_ode_solution, operator_dmu, operator_dx)
from .noise import (JumpEvent, NoiseRealization, ResolutionView,
                    iterated_integrals, sample_realization)
from .schemes import (Trajectory, euler_step, milstein_step,
                      needs_foreign_splits, simulate, step_data)
from .taming import TamedModel, make_tamed, probe_assumptions, tame_scalar_family
from .analysis import (ExperimentError, fit_rate, ito_verify, moment_trend,
                       poc_experiment, pth_power_inequality_check,
                       rate_experiment, strong_error)
