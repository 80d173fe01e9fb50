//! Identification of price-responsive flexible loads.
//!
//! An aggregate of fixed, adjustable and storage components responds to
//! electricity prices by solving a small cost-minimization problem. This
//! crate solves that forward problem, and recovers the component parameters
//! from observed aggregate responses with Gaussian-process Bayesian
//! optimization.

pub mod bayopt;
pub mod forward;
pub mod gp;
pub mod identify;
pub mod model;
pub mod scenario;
pub mod solver;
pub mod theta;

pub use bayopt::{expected_improvement, optimize, optimize_constrained, BoConfig, OptBudget, OptTrace, Phase, SearchBox};
pub use forward::{
    respond, simulate_dynamic_day, solve_dynamic_step, solve_static_response, ForwardError, ForwardOptions,
    PriceSignal, ResponseMode, ResponseResult,
};
pub use gp::{chol_append, GpState, HyperBounds, Hyperparams, Posterior};
pub use identify::{
    beta_deviation, identification_objective, identify, noise_gap_experiment, nrmse, posterior_slice,
    IdentError, IdentResult, NoiseSpec, ResponseSample, Surrogate,
};
pub use model::{AdjustableParams, AggregateModel, ModelError, StorageParams, TimeGrid};
pub use scenario::{generate_prices, sample_fleet, synthesize_dataset, FleetSpec, PriceKind, PriceSpec};
pub use solver::{solve, Program, ProgramBuilder, SolveOptions, Solution, Status};
pub use theta::{flatten_theta, unflatten_theta, ParamBounds, ParamSelection, ThetaLayout, ThetaVector};
