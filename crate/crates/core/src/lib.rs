//! Pathwise solvers and Monte Carlo verification tools for one-dimensional
//! Poisson-driven stochastic differential equations with two-point boundary
//! conditions X_0 = psi(X_1).
//!
//! The crate covers the forward equation (jump integrands at the left
//! limit), the backward equation (integrands at the post-jump value, solved
//! by conversion to a forward one), and the anticipating Skorohod equation
//! on the canonical jump space (solved level by level in the jump count).
//! On top of the solvers sit estimators and statistical checks: the
//! atom-plus-density decomposition of the solution law, analytic jump-time
//! sensitivities with a finite-difference oracle, truncated chaos expansions
//! for the closed-form examples, and a conditional-independence harness.

pub mod bvp;
pub mod error;
pub mod flow;
pub mod law;
pub mod linear;
pub mod path;
pub mod quad;
pub mod reciprocal;
pub mod sensitivity;
pub mod skorohod;
pub mod stats;
pub mod timefn;
pub mod traj;

pub use bvp::{
    check_backward_existence, find_fixed_point, invert_jump_map, solve_backward_bvp,
    solve_forward_bvp, BackwardVerdict, BoundaryMap, BvpOptions, GenericBvpSolver,
    PathwiseSolver,
};
pub use error::{Error, Result};
pub use flow::{
    det_flow, det_flow_partials, flow_jump_derivative, flow_x_derivative, forward_flow,
    forward_flow_dense, verify_change_of_variables, CoefficientField, FlowResult, SmoothField,
};
pub use law::{
    check_carlen_pardoux, check_condition_p, conditional_bvp_reference,
    conditional_flow_reference, estimate_flow_law, estimate_law, ks_stratified_test,
    AutonomousField, GridSpec, KsOutcome, KsReport, LawEstimate, LawOptions, LawSample,
    StratifiedSamples, StratumStats,
};
pub use linear::{
    deterministic_fixed_point, eta_form_value, solve_linear_backward, solve_linear_bvp,
    solve_linear_forward, LinearBvpSolver, LinearCoefficients, LinearFactors,
};
pub use path::{sample_conditional, sample_conditional_split, sample_path, JumpPath, PathRng};
pub use reciprocal::{
    case_preset, ci_permutation_test, markov_chain_check_case5, representation_check_case3,
    representation_check_case4, sample_quadruples, CaseReport, CellOutcome, CellReport,
    CiOptions, CiReport,
};
pub use sensitivity::{
    dx0_dsj, dxt_dsj, fd_oracle, sensitivity_report, weight_a, weight_b, SensitivityRow,
};
pub use skorohod::{
    build_case5_chaos, eval_chaos, eval_first_order, eval_first_order_window,
    linear_skorohod_closed_form, multiple_integral_indicator, phi_operator, psi_operator,
    solve_skorohod_bvp,
    CanonicalFunctional, CanonicalProcess, ChaosKernel, ChaosSeries, ChaosTerm,
    LinearSkorohodClosedForm, SkorohodMemo, SkorohodOptions,
};
pub use timefn::TimeFn;
pub use traj::{JumpValues, SegmentGrid, Trajectory, TrajectoryKind};
