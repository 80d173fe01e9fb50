//! Static, rolling-horizon and inner-cost response models.
//!
//! Apart from the aggregation identity the feasible set is a Cartesian
//! product over components, and every objective is a sum of per-component
//! terms (the fixed load only contributes a constant). The aggregate
//! minimizer is therefore assembled from independent per-component
//! programs, each a few dozen variables.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    build_storage_propagators, energy_trajectory, validate_model, AdjustableParams,
    AggregateModel, ModelError, StorageParams, ValidationReport,
};
use crate::solver::{solve, Program, ProgramBuilder, SolveOptions, SolverError, Status};

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),
    #[error("price signal: {0}")]
    Prices(String),
    #[error("{component}: infeasible {block}")]
    Infeasible {
        component: String,
        block: &'static str,
    },
    #[error("{component}: response program is unbounded")]
    Unbounded { component: String },
    #[error("rolling horizon: {0}")]
    Horizon(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ForwardError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, ForwardError::Infeasible { .. })
    }
}

/// Actual prices `lambda` and the forecast `lambda_hat` the load acts on, in $/kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal {
    pub lambda: Vec<f64>,
    pub lambda_hat: Vec<f64>,
}

impl PriceSignal {
    pub fn new(lambda: Vec<f64>, lambda_hat: Vec<f64>) -> Result<Self, ForwardError> {
        if lambda.len() != lambda_hat.len() {
            return Err(ForwardError::Prices(format!(
                "actual and forecast lengths differ ({} vs {})",
                lambda.len(),
                lambda_hat.len()
            )));
        }
        if lambda.iter().chain(&lambda_hat).any(|v| !v.is_finite()) {
            return Err(ForwardError::Prices("non-finite price".into()));
        }
        Ok(Self { lambda, lambda_hat })
    }

    /// Prices known in advance: forecast equals actual.
    pub fn known(lambda: Vec<f64>) -> Self {
        Self {
            lambda_hat: lambda.clone(),
            lambda,
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Same signal with the forecast replaced by the actual prices.
    pub fn with_actual_as_forecast(&self) -> Self {
        Self::known(self.lambda.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    Static,
    Dynamic,
    StaticExt,
    DynamicExt,
}

impl ResponseMode {
    pub fn is_dynamic(self) -> bool {
        matches!(self, ResponseMode::Dynamic | ResponseMode::DynamicExt)
    }

    pub fn has_inner_cost(self) -> bool {
        matches!(self, ResponseMode::StaticExt | ResponseMode::DynamicExt)
    }
}

impl std::str::FromStr for ResponseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ResponseMode::Static),
            "dynamic" => Ok(ResponseMode::Dynamic),
            "static_ext" => Ok(ResponseMode::StaticExt),
            "dynamic_ext" => Ok(ResponseMode::DynamicExt),
            other => Err(format!("unknown response mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub solve: SolveOptions,
    /// Periods implemented per rolling-horizon epoch.
    pub t_dc: usize,
    /// Forecast window per epoch.
    pub t_ph: usize,
    pub inner_cost: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            t_dc: 1,
            t_ph: 24,
            inner_cost: false,
        }
    }
}

impl ForwardOptions {
    pub fn for_mode(mode: ResponseMode) -> Self {
        Self {
            inner_cost: mode.has_inner_cost(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseResult {
    pub p_agg: Vec<f64>,
    pub p_adj: Vec<Vec<f64>>,
    pub p_str: Vec<Vec<f64>>,
    pub e_str: Vec<Vec<f64>>,
    /// Cost of the realized profile at the forecast prices, plus the inner
    /// cost when it is enabled.
    pub objective: f64,
}

impl ResponseResult {
    /// Plot-ready CSV: `t,p_agg,p_adj_<j>...,p_str_<i>...,e_str_<i>...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), std::io::Error> {
        let mut header = vec!["t".to_string(), "p_agg".to_string()];
        header.extend((0..self.p_adj.len()).map(|j| format!("p_adj_{j}")));
        header.extend((0..self.p_str.len()).map(|i| format!("p_str_{i}")));
        header.extend((0..self.e_str.len()).map(|i| format!("e_str_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for t in 0..self.p_agg.len() {
            let mut row = vec![t.to_string(), fmt_num(self.p_agg[t])];
            for series in self.p_adj.iter().chain(&self.p_str).chain(&self.e_str) {
                row.push(fmt_num(series[t]));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rolling-horizon state between epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicState {
    pub t: usize,
    pub e: Vec<f64>,
}

impl DynamicState {
    pub fn initial(model: &AggregateModel) -> Self {
        Self {
            t: 0,
            e: model.storages.iter().map(|s| s.e0).collect(),
        }
    }
}

/// Powers implemented in one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecisions {
    pub p_adj: Vec<Vec<f64>>,
    pub p_str: Vec<Vec<f64>>,
}

fn ensure_valid(model: &AggregateModel) -> Result<(), ForwardError> {
    let report = validate_model(model);
    if report.ok {
        Ok(())
    } else {
        Err(ForwardError::InvalidModel(report))
    }
}

/// Storage program over `cost.len()` periods starting from `e_init`.
fn storage_program(
    s: &StorageParams,
    cost: &[f64],
    e_init: f64,
    dt: f64,
    periodic: bool,
) -> Result<Program, ForwardError> {
    let h = cost.len();
    let (gamma, upsilon) = build_storage_propagators(s.sigma, h)?;
    let mut b = ProgramBuilder::new(h)
        .cost(DVector::from_column_slice(cost))
        .bounds(DVector::from_element(h, s.p_lo), DVector::from_element(h, s.p_hi));
    for t in 0..h {
        let row: Vec<f64> = (0..h).map(|k| upsilon[(t, k)] * dt).collect();
        let decay = gamma[t] * e_init;
        b.leq(row.clone(), s.e_hi - decay);
        b.geq(row, s.e_lo - decay);
    }
    if periodic {
        let row: Vec<f64> = (0..h).map(|k| upsilon[(h - 1, k)] * dt).collect();
        b.eq(row, e_init - gamma[h - 1] * e_init);
    }
    Ok(b.build()?)
}

/// Adjustable program; `expect` is the expected profile over the same periods.
fn adjustable_program(
    a: &AdjustableParams,
    prices: &[f64],
    expect: &[f64],
    dt: f64,
    inner_cost: bool,
) -> Result<Program, ForwardError> {
    let h = prices.len();
    let mut b = ProgramBuilder::new(h)
        .bounds(DVector::from_element(h, a.p_lo), DVector::from_element(h, a.p_hi));
    if inner_cost && a.c > 0.0 {
        b = b
            .quadratic(DMatrix::identity(h, h) * (2.0 * a.c))
            .cost(DVector::from_fn(h, |t, _| prices[t] - 2.0 * a.c * expect[t]));
    } else {
        b = b.cost(DVector::from_column_slice(prices));
    }
    for k in 0..h.saturating_sub(1) {
        let mut row = vec![0.0; h];
        row[k] = -1.0;
        row[k + 1] = 1.0;
        b.leq(row.clone(), a.r_hi * dt);
        b.geq(row, a.r_lo * dt);
    }
    Ok(b.build()?)
}

fn solve_component(
    program: &Program,
    opts: &SolveOptions,
    component: String,
    block: &'static str,
) -> Result<Vec<f64>, ForwardError> {
    let sol = solve(program, opts)?;
    match sol.status {
        Status::Optimal => Ok(sol.x.iter().copied().collect()),
        Status::Infeasible => Err(ForwardError::Infeasible { component, block }),
        Status::Unbounded => Err(ForwardError::Unbounded { component }),
    }
}

fn solve_storage(
    i: usize,
    s: &StorageParams,
    cost: &[f64],
    e_init: f64,
    dt: f64,
    periodic: bool,
    opts: &SolveOptions,
) -> Result<Vec<f64>, ForwardError> {
    let program = storage_program(s, cost, e_init, dt, periodic)?;
    let component = format!("storages[{i}]");
    match solve_component(&program, opts, component.clone(), "energy bounds") {
        Err(ForwardError::Infeasible { .. }) if periodic => {
            // Name the block: bounds alone feasible means the periodic constraint is to blame.
            let relaxed = storage_program(s, cost, e_init, dt, false)?;
            let block = match solve(&relaxed, opts)?.status {
                Status::Infeasible => "energy bounds",
                _ => "periodic energy constraint",
            };
            Err(ForwardError::Infeasible { component, block })
        }
        other => other,
    }
}

/// Σ_j c_j ‖P_adj_j − P̌_j‖² over the given adjustable profiles.
pub fn extended_objective_terms(model: &AggregateModel, p_adj: &[Vec<f64>]) -> f64 {
    model
        .adjustables
        .iter()
        .zip(p_adj)
        .filter(|(a, _)| a.c > 0.0)
        .map(|(a, p)| {
            a.c * p
                .iter()
                .zip(&a.p_expect)
                .map(|(x, e)| (x - e) * (x - e))
                .sum::<f64>()
        })
        .sum()
}

fn assemble(
    model: &AggregateModel,
    prices: &[f64],
    p_adj: Vec<Vec<f64>>,
    p_str: Vec<Vec<f64>>,
    inner_cost: bool,
) -> ResponseResult {
    let periods = model.periods();
    let mut p_agg = model.fixed.clone();
    for series in p_adj.iter().chain(&p_str) {
        for (agg, v) in p_agg.iter_mut().zip(series) {
            *agg += v;
        }
    }
    let e_str = model
        .storages
        .iter()
        .zip(&p_str)
        .map(|(s, p)| energy_trajectory(s, p, model.grid.dt))
        .collect();
    let mut objective: f64 = (0..periods).map(|t| prices[t] * p_agg[t]).sum();
    if inner_cost {
        objective += extended_objective_terms(model, &p_adj);
    }
    ResponseResult {
        p_agg,
        p_adj,
        p_str,
        e_str,
        objective,
    }
}

fn check_prices(model: &AggregateModel, prices: &PriceSignal) -> Result<(), ForwardError> {
    if prices.len() < model.periods() {
        return Err(ForwardError::Prices(format!(
            "{} prices for {} periods",
            prices.len(),
            model.periods()
        )));
    }
    Ok(())
}

/// Cost-minimizing response over one decision cycle at the forecast prices,
/// with every storage returning to its initial energy at the end.
pub fn solve_static_response(
    model: &AggregateModel,
    prices: &PriceSignal,
    opts: &ForwardOptions,
) -> Result<ResponseResult, ForwardError> {
    ensure_valid(model)?;
    check_prices(model, prices)?;
    let periods = model.periods();
    let dt = model.grid.dt;
    let lam = &prices.lambda_hat[..periods];

    let p_adj = model
        .adjustables
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let program = adjustable_program(a, lam, &a.p_expect, dt, opts.inner_cost)?;
            solve_component(&program, &opts.solve, format!("adjustables[{j}]"), "ramp limits")
        })
        .collect::<Result<Vec<_>, _>>()?;
    let p_str = model
        .storages
        .iter()
        .enumerate()
        .map(|(i, s)| solve_storage(i, s, lam, s.e0, dt, true, &opts.solve))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(model, lam, p_adj, p_str, opts.inner_cost))
}

/// One rolling-horizon epoch: optimizes `t_dc` periods, pricing purchases at
/// the first `t_dc` window prices and crediting the summed terminal storage
/// energy at the mean of the remaining `t_ph - t_dc` window prices.
pub fn solve_dynamic_step(
    model: &AggregateModel,
    state: &DynamicState,
    window: &[f64],
    t_dc: usize,
    t_ph: usize,
    opts: &ForwardOptions,
) -> Result<(StepDecisions, DynamicState), ForwardError> {
    if t_dc == 0 || t_dc >= t_ph {
        return Err(ForwardError::Horizon(format!(
            "need 0 < t_dc < t_ph, got t_dc = {t_dc}, t_ph = {t_ph}"
        )));
    }
    if window.len() < t_ph {
        return Err(ForwardError::Horizon(format!(
            "window of {} prices is shorter than t_ph = {t_ph}",
            window.len()
        )));
    }
    if state.e.len() != model.storages.len() {
        return Err(ForwardError::Horizon(format!(
            "state carries {} storage energies for {} storages",
            state.e.len(),
            model.storages.len()
        )));
    }
    let dt = model.grid.dt;
    let periods = model.periods();
    let now = &window[..t_dc];
    let terminal_price = window[t_dc..t_ph].iter().sum::<f64>() / (t_ph - t_dc) as f64;

    let p_adj = model
        .adjustables
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let expect: Vec<f64> = (0..t_dc).map(|k| a.p_expect[(state.t + k) % periods]).collect();
            let program = adjustable_program(a, now, &expect, dt, opts.inner_cost)?;
            solve_component(&program, &opts.solve, format!("adjustables[{j}]"), "ramp limits")
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut p_str = Vec::with_capacity(model.storages.len());
    let mut next_e = Vec::with_capacity(model.storages.len());
    for (i, s) in model.storages.iter().enumerate() {
        // e[t_dc] = σ^t_dc e + Σ_k σ^(t_dc-1-k) p_k dt, so the terminal credit
        // lowers the cost of period k by price·σ^(t_dc-1-k)·dt.
        let mut cost = now.to_vec();
        let mut decay = 1.0;
        for k in (0..t_dc).rev() {
            cost[k] -= terminal_price * decay * dt;
            decay *= s.sigma;
        }
        let p = solve_storage(i, s, &cost, state.e[i], dt, false, &opts.solve)?;
        let start = StorageParams {
            e0: state.e[i],
            ..s.clone()
        };
        next_e.push(*energy_trajectory(&start, &p, dt).last().unwrap_or(&state.e[i]));
        p_str.push(p);
    }
    Ok((
        StepDecisions { p_adj, p_str },
        DynamicState {
            t: state.t + t_dc,
            e: next_e,
        },
    ))
}

/// Rolling-horizon response over one day. Forecast windows running past the
/// end of the price series wrap around to its start.
pub fn simulate_dynamic_day(
    model: &AggregateModel,
    prices: &PriceSignal,
    opts: &ForwardOptions,
) -> Result<ResponseResult, ForwardError> {
    ensure_valid(model)?;
    check_prices(model, prices)?;
    let periods = model.periods();
    let series = &prices.lambda_hat;
    let n_adj = model.adjustables.len();
    let n_str = model.storages.len();
    let mut p_adj = vec![Vec::with_capacity(periods); n_adj];
    let mut p_str = vec![Vec::with_capacity(periods); n_str];
    let mut state = DynamicState::initial(model);
    while state.t < periods {
        let window: Vec<f64> = (0..opts.t_ph).map(|k| series[(state.t + k) % series.len()]).collect();
        let (decisions, _) = solve_dynamic_step(model, &state, &window, opts.t_dc, opts.t_ph, opts)?;
        let keep = opts.t_dc.min(periods - state.t);
        for (dst, src) in p_adj.iter_mut().zip(&decisions.p_adj) {
            dst.extend_from_slice(&src[..keep]);
        }
        let mut e = Vec::with_capacity(n_str);
        for (i, (dst, src)) in p_str.iter_mut().zip(&decisions.p_str).enumerate() {
            dst.extend_from_slice(&src[..keep]);
            let start = StorageParams {
                e0: state.e[i],
                ..model.storages[i].clone()
            };
            e.push(*energy_trajectory(&start, &src[..keep], model.grid.dt).last().unwrap());
        }
        state = DynamicState {
            t: state.t + keep,
            e,
        };
    }
    Ok(assemble(model, &series[..periods], p_adj, p_str, opts.inner_cost))
}

/// Dispatches to the static or rolling-horizon response for `mode`.
pub fn respond(
    model: &AggregateModel,
    prices: &PriceSignal,
    mode: ResponseMode,
    opts: &ForwardOptions,
) -> Result<ResponseResult, ForwardError> {
    let opts = ForwardOptions {
        inner_cost: mode.has_inner_cost(),
        ..*opts
    };
    if mode.is_dynamic() {
        simulate_dynamic_day(model, prices, &opts)
    } else {
        solve_static_response(model, prices, &opts)
    }
}
