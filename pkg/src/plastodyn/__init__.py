"""Dynamic small-strain elastoplasticity with kinematic hardening.

Forward solves of the regularized flow-rule evolution (Yosida and
smoothed resolvents), adjoint-based reduced gradients for tracking-type
volume-force control, a metric L-BFGS optimizer with regularization
continuation, and a command line driver with CSV / legacy-VTK export.
"""

from .adjoint import (
    AdjointTrajectory,
    ControlSpaceMetric,
    FdReport,
    Scenario,
    TrackingTarget,
    build_control_metric,
    fd_check,
    reduced_gradient,
    solve_adjoint,
    tracking_gradient_H,
    tracking_objective,
    xc_riesz_apply_inverse,
)
from .evolution import (
    ControlTrajectory,
    StateTrajectory,
    TimeGrid,
    convergence_study,
    elastic_energy,
    integrate_F,
    q_from_z,
    solve_elastic_reference,
    solve_regularized_reference,
    solve_state,
    solve_state_jvp,
    trajectory_h1_distance,
    z_from_q,
)
from .fem import (
    DiscreteOperators,
    FeSpace,
    Mesh,
    apply_dirichlet,
    assemble_operators,
    build_mesh,
    h_inner,
    make_space,
    pointwise_block_operator,
)
from .flow_rule import (
    FlowRuleParams,
    project_K,
    smooth_max,
    smooth_resolvent,
    smooth_resolvent_deriv,
    yosida_A,
    yosida_gap_bound,
)
from .optimize import (
    ContinuationSchedule,
    OptimizeHistory,
    OptimizerConfig,
    StageResult,
    continuation_run,
    evaluate_reduced,
    minimize,
)
from .resolvent import (
    NewtonSettings,
    PointwiseMap,
    TripleField,
    apply_A_s,
    apply_resolvent,
    apply_resolvent_deriv,
    solve_T,
    solve_T_deriv,
)
from .scenario import ScenarioConfig, ScenarioError, build_runtime, load_scenario
from .tensors import (
    MaterialModel,
    Rank4Tensor,
    SymTensor2,
    apply_rank4,
    coercivity_constant,
    derive_coupling_tensors,
    deviator,
    isotropic_rank4,
    sym_matrix_to_voigt,
    voigt_to_sym_matrix,
)

__version__ = "0.1.0"
