"""Energy-shaping regulation of the Chaplygin sleigh.

A numpy library for simulating the sleigh's reduced port-Hamiltonian
dynamics under a discontinuous energy-shaping / damping-injection law, and
for numerically verifying the closed loop's stability structure: shaped
energy dissipation, invariance of the region away from the control
singularity, absence of interior rest points, and regulation of the
configuration to the origin.
"""

from .analysis import (
    ConvergenceMetrics,
    ResidualSystem,
    VerificationReport,
    check_dissipation,
    check_invariance_of_U,
    check_matching,
    check_rate_agreement,
    check_schwarz,
    convergence_metrics,
    equilibrium_residual,
    equilibrium_residual_search,
    finite_difference_gradient,
    finite_difference_jacobian,
    schwarz_sweep,
)
from .config import (
    ConfigError,
    OutputSpec,
    RunConfig,
    Scenario,
    apply_overrides,
    default_config_path,
    load_raw_config,
    load_run_config,
    parse_run_config,
)
from .controller import (
    ControllerParams,
    closed_loop_energy,
    closed_loop_rhs_w,
    control,
    control_from_q,
    dissipation_rate,
)
from .integrator import (
    EPS_INIT,
    InitialSingularityError,
    IntegratorConfig,
    NonFiniteError,
    SimulationError,
    StepStats,
    StepUnderflowError,
    Trajectory,
    batch_simulate,
    simulate,
)
from .io import CSV_COLUMNS, write_trajectory_csv
from .model import (
    ConstantDamping,
    CoulombApproxDamping,
    DampingModel,
    ModelParams,
    QState,
    ZeroDamping,
    constraint_residual,
    gyroscopic_matrix,
    hamiltonian,
    input_matrix_q,
    mass_matrix,
    open_loop_rhs,
    passive_output,
    plant_velocity,
)
from .transforms import (
    EPS_SING,
    SingularityError,
    annihilator_z,
    input_matrix_w,
    input_matrix_z,
    jacobian_q_to_z,
    jacobian_w_to_z,
    jacobian_z_to_w,
    q_to_z,
    velocity_to_momentum_gradient,
    w_to_z,
    z_to_q,
    z_to_w,
)

__version__ = "0.1.0"
