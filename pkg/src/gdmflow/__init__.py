"""gdmflow: hybrid-finite-volume solver for incompressible flow coupled with
heat transport through a temperature-dependent viscosity, on polygonal meshes,
with a manufactured-solution convergence harness."""

from .errors import (
    ConfigError,
    DegenerateCell,
    EigSolverFailure,
    GdmflowError,
    InsufficientLevels,
    LinearSolverFailure,
    NonpositiveValue,
    ParseError,
    PicardDivergence,
    SingularGram,
    TopologyError,
    ViscosityRangeError,
    ZeroNormError,
)
from .gd_core import (
    DiscreteConstants,
    GradientDiscretisation,
    TimeGrid,
    compute_BD,
    compute_CD,
    dual_seminorm_scalar,
    dual_seminorm_velocity,
    interpolate_scalar,
    interpolate_velocity,
)
from .hfv import assemble_viscous, build_hfv, conv_A, conv_B
from .mesh import (
    Mesh,
    MeshGeometry,
    build_distorted,
    build_triangular,
    compute_geometry,
    load_mesh,
)
from .mms import (
    ConvergenceReport,
    ExactSolution,
    compute_errors,
    convergence_study,
    fit_rate,
    forcing_from_exact,
    make_problem,
    taylor_green_solution,
)
from .scheme import (
    ProblemSpec,
    SolverConfig,
    State,
    StepDiagnostics,
    ViscosityModel,
    constant_viscosity,
    initial_state,
    solve_transient,
    sqrt_coupled_viscosity,
    step,
)

__version__ = "0.1.0"
