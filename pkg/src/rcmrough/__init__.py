"""Random walks among random conductances, their level-2 lifts, and
Monte Carlo checks of the rough invariance principle on periodic boxes."""

from .corrector import (
    CocycleField,
    HomogenizedStats,
    SolverError,
    potential_box_average,
    sigma_gamma,
    solve_harmonic,
)
from .diagnostics import (
    DiagnosticsReport,
    EnsembleSpec,
    isotropy_check,
    recompute_verdicts,
    run_diagnostics,
    run_ensemble,
)
from .env import (
    Constant,
    Environment,
    LineModel,
    LongRangePoly,
    ParameterError,
    PercolationWeighted,
    UniformInterval,
    clusters,
    gen_env,
    shift_view,
)
from .pvar import p2var_exact, pvar_capped, pvar_exact, rough_norm
from .roughpath import (
    Level2Path,
    StepPath,
    chen_eval,
    decompose,
    ito_lift,
    left_point_integral,
    quadratic_covariation,
    rescale,
    stratonovich_lift,
)
from .walk import JumpPath, simulate

__version__ = "0.1.0"
