//! Parameter identification from observed aggregate responses, with the
//! accuracy metrics and noise experiments built around it.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayopt::{optimize_constrained, BoConfig, BoError, OptTrace, SearchBox};
use crate::forward::{fmt_num, respond, ForwardError, ForwardOptions, PriceSignal, ResponseMode};
use crate::gp::GpState;
use crate::model::{validate_model, AggregateModel, ModelError, StorageParams};
use crate::theta::{unflatten_theta, ParamBounds, ParamSelection, ThetaLayout, ThetaVector};

#[derive(Debug, Error)]
pub enum IdentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Optimizer(#[from] BoError),
    #[error("{0}")]
    Metric(String),
    #[error("noise specification: {0}")]
    Noise(String),
    #[error("no samples")]
    Empty,
    #[error("no feasible parameter vector was found")]
    NoFeasiblePoint,
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IdentError {
    /// True when the candidate parameters give an invalid model or a forward
    /// problem without solution.
    pub fn is_infeasible(&self) -> bool {
        match self {
            IdentError::Forward(e) => e.is_infeasible() || matches!(e, ForwardError::InvalidModel(_)),
            IdentError::Model(_) => true,
            _ => false,
        }
    }
}

/// One observed day: the prices the load saw, its measured aggregate power
/// and the predicted fixed-load profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub prices: PriceSignal,
    pub p_obs: Vec<f64>,
    pub p_fix_pred: Vec<f64>,
}

/// Gaussian noise on the aggregate observation and on the fixed-load
/// prediction. With `proportional_factor` set, the observation noise gains
/// an extra independent per-period variance `factor·|P_t|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mu_agg: Vec<f64>,
    pub mu_fix: Vec<f64>,
    pub sigma_agg: DMatrix<f64>,
    pub sigma_fix: DMatrix<f64>,
    #[serde(default)]
    pub proportional_factor: Option<f64>,
}

impl NoiseSpec {
    pub fn zero(periods: usize) -> Self {
        Self {
            mu_agg: vec![0.0; periods],
            mu_fix: vec![0.0; periods],
            sigma_agg: DMatrix::zeros(periods, periods),
            sigma_fix: DMatrix::zeros(periods, periods),
            proportional_factor: None,
        }
    }

    /// Independent zero-mean noise with the given per-period variances.
    pub fn iid(periods: usize, var_agg: f64, var_fix: f64) -> Self {
        Self {
            sigma_agg: DMatrix::identity(periods, periods) * var_agg,
            sigma_fix: DMatrix::identity(periods, periods) * var_fix,
            ..Self::zero(periods)
        }
    }

    pub fn proportional(periods: usize, factor: f64) -> Self {
        Self {
            proportional_factor: Some(factor),
            ..Self::zero(periods)
        }
    }

    pub fn periods(&self) -> usize {
        self.mu_agg.len()
    }

    pub fn is_zero(&self) -> bool {
        self.mu_agg.iter().chain(&self.mu_fix).all(|v| *v == 0.0)
            && self.sigma_agg.iter().chain(self.sigma_fix.iter()).all(|v| *v == 0.0)
            && self.proportional_factor.is_none_or(|f| f == 0.0)
    }

    /// tr(Σ_agg + Σ_fix).
    pub fn trace(&self) -> f64 {
        self.sigma_agg.trace() + self.sigma_fix.trace()
    }
}

/// Square-root factor `S` with `S Sᵀ = Σ`, or `None` for an all-zero matrix.
fn covariance_root(sigma: &DMatrix<f64>, name: &str) -> Result<Option<DMatrix<f64>>, IdentError> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(IdentError::Noise(format!("{name} is not square")));
    }
    if sigma.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    let scale = sigma.amax();
    if (sigma - sigma.transpose()).amax() > 1e-12 * scale {
        return Err(IdentError::Noise(format!("{name} is not symmetric")));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.min() < -1e-10 * scale {
        return Err(IdentError::Noise(format!(
            "{name} is not positive semidefinite (eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(Some(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)))
}

/// Noise drawer with the covariance factors computed once.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    spec: NoiseSpec,
    root_agg: Option<DMatrix<f64>>,
    root_fix: Option<DMatrix<f64>>,
}

impl NoiseSampler {
    pub fn new(spec: &NoiseSpec) -> Result<Self, IdentError> {
        let t = spec.periods();
        if spec.mu_fix.len() != t || spec.sigma_agg.shape() != (t, t) || spec.sigma_fix.shape() != (t, t) {
            return Err(IdentError::Noise(format!("dimensions do not all equal {t}")));
        }
        if let Some(f) = spec.proportional_factor {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(IdentError::Noise(format!("proportional factor {f} must be nonnegative")));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            root_agg: covariance_root(&spec.sigma_agg, "sigma_agg")?,
            root_fix: covariance_root(&spec.sigma_fix, "sigma_fix")?,
        })
    }

    fn draw<R: Rng + ?Sized>(root: &Option<DMatrix<f64>>, mu: &[f64], rng: &mut R) -> Vec<f64> {
        match root {
            None => mu.to_vec(),
            Some(s) => {
                let z = DVector::from_fn(s.ncols(), |_, _| StandardNormal.sample(rng));
                let e = s * z;
                mu.iter().zip(e.iter()).map(|(m, v)| m + v).collect()
            }
        }
    }

    /// Noisy copy of a clean sample, whose `p_obs` is taken as the true aggregate response.
    pub fn apply<R: Rng + ?Sized>(&self, clean: &ResponseSample, rng: &mut R) -> Result<ResponseSample, IdentError> {
        let t = self.spec.periods();
        if clean.p_obs.len() != t || clean.p_fix_pred.len() != t {
            return Err(IdentError::Noise(format!(
                "sample of length {} for a {t}-period specification",
                clean.p_obs.len()
            )));
        }
        let e_agg = Self::draw(&self.root_agg, &self.spec.mu_agg, rng);
        let e_fix = Self::draw(&self.root_fix, &self.spec.mu_fix, rng);
        let mut p_obs: Vec<f64> = clean.p_obs.iter().zip(&e_agg).map(|(p, e)| p + e).collect();
        if let Some(f) = self.spec.proportional_factor.filter(|f| *f > 0.0) {
            for (obs, truth) in p_obs.iter_mut().zip(&clean.p_obs) {
                let var = (f * truth.abs()).max(1e-6);
                let z: f64 = StandardNormal.sample(rng);
                *obs += var.sqrt() * z;
            }
        }
        let p_fix_pred = clean.p_fix_pred.iter().zip(&e_fix).map(|(p, e)| p + e).collect();
        Ok(ResponseSample {
            prices: clean.prices.clone(),
            p_obs,
            p_fix_pred,
        })
    }
}

pub fn apply_noise<R: Rng + ?Sized>(
    sample: &ResponseSample,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<ResponseSample, IdentError> {
    NoiseSampler::new(spec)?.apply(sample, rng)
}

/// The model family searched over: a template fleet whose selected
/// parameters are replaced by the candidate vector.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub template: AggregateModel,
    pub selection: ParamSelection,
    pub bounds: ParamBounds,
    pub mode: ResponseMode,
    pub forward: ForwardOptions,
}

impl Surrogate {
    pub fn new(template: AggregateModel, selection: ParamSelection, bounds: ParamBounds, mode: ResponseMode) -> Self {
        Self {
            template,
            selection,
            bounds,
            mode,
            forward: ForwardOptions::for_mode(mode),
        }
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout::for_model(&self.template, &self.selection)
    }

    pub fn search_box(&self) -> Result<SearchBox, IdentError> {
        let (lo, hi) = self.bounds.boxes(&self.layout())?;
        Ok(SearchBox::new(lo, hi)?)
    }

    /// Parameter vector for raw values, clamped into the box.
    pub fn theta(&self, values: &[f64]) -> Result<ThetaVector, IdentError> {
        let layout = self.layout();
        let (lo, hi) = self.bounds.boxes(&layout)?;
        let clamped = values
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(v, (a, b))| v.clamp(*a, *b))
            .collect();
        Ok(ThetaVector::new(clamped, layout, lo, hi)?)
    }

    pub fn model_at(&self, theta: &ThetaVector) -> Result<AggregateModel, IdentError> {
        Ok(unflatten_theta(theta, &self.template)?)
    }

    /// Whether the parameter values give a valid model. Static modes also
    /// require every storage to be able to return to its initial energy.
    pub fn is_plausible(&self, values: &[f64]) -> bool {
        let Ok(model) = self.theta(values).and_then(|t| self.model_at(&t)) else {
            return false;
        };
        if !validate_model(&model).ok {
            return false;
        }
        self.mode.is_dynamic()
            || model
                .storages
                .iter()
                .all(|s| cycle_reachable(s, model.grid.dt))
    }

    /// Aggregate response of `model` to the sample's prices and fixed-load prediction.
    pub fn predict(&self, model: &AggregateModel, sample: &ResponseSample) -> Result<Vec<f64>, IdentError> {
        let m = model.with_fixed(sample.p_fix_pred.clone());
        Ok(respond(&m, &sample.prices, self.mode, &self.forward)?.p_agg)
    }

    pub fn predict_all(&self, model: &AggregateModel, samples: &[ResponseSample]) -> Result<Vec<Vec<f64>>, IdentError> {
        samples
            .par_iter()
            .map(|s| self.predict(model, s))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }
}

/// Necessary condition for a periodic schedule: with losses, the initial
/// energy must lie between the levels that constant full discharge and
/// constant full charge settle at.
fn cycle_reachable(s: &StorageParams, dt: f64) -> bool {
    if s.sigma >= 1.0 {
        return s.p_lo <= 0.0 && s.p_hi >= 0.0;
    }
    let k = dt / (1.0 - s.sigma);
    let tol = 1e-9 * (1.0 + s.e0.abs());
    s.p_lo * k <= s.e0 + tol && s.e0 <= s.p_hi * k + tol
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over samples of ‖p_obs − P̂_agg(θ)‖².
pub fn identification_objective(
    samples: &[ResponseSample],
    surrogate: &Surrogate,
    theta: &ThetaVector,
) -> Result<f64, IdentError> {
    if samples.is_empty() {
        return Err(IdentError::Empty);
    }
    let model = surrogate.model_at(theta)?;
    let pred = surrogate.predict_all(&model, samples)?;
    let total: f64 = samples
        .iter()
        .zip(&pred)
        .map(|(s, p)| squared_distance(&s.p_obs, p))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Root-mean-square deviation over all samples and periods, divided by the
/// range of the truth.
pub fn nrmse(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<f64, IdentError> {
    if truth.len() != est.len() || truth.iter().zip(est).any(|(a, b)| a.len() != b.len()) {
        return Err(IdentError::Metric("truth and estimate shapes differ".into()));
    }
    let values = truth.iter().flatten();
    let count = values.clone().count();
    if count == 0 {
        return Err(IdentError::Empty);
    }
    let max = values.clone().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Err(IdentError::Metric("truth has zero range".into()));
    }
    let sse: f64 = truth.iter().zip(est).map(|(a, b)| squared_distance(a, b)).sum();
    Ok((sse / count as f64).sqrt() / range)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaDeviation {
    pub beta: f64,
    /// Coordinates left out because their box has zero width.
    pub dropped: Vec<usize>,
}

/// l₂ distance between the two vectors after scaling each coordinate to
/// [0, 1] with the vector's own box.
pub fn beta_deviation(theta_nf: &ThetaVector, theta_nd: &ThetaVector) -> Result<BetaDeviation, IdentError> {
    if theta_nf.layout() != theta_nd.layout() {
        return Err(IdentError::Metric("parameter layouts differ".into()));
    }
    let mut dropped = Vec::new();
    let mut sum = 0.0;
    for i in 0..theta_nf.len() {
        let w_nf = theta_nf.box_hi()[i] - theta_nf.box_lo()[i];
        let w_nd = theta_nd.box_hi()[i] - theta_nd.box_lo()[i];
        if !(w_nf > 0.0 && w_nd > 0.0) {
            dropped.push(i);
            continue;
        }
        let a = (theta_nf.values()[i] - theta_nf.box_lo()[i]) / w_nf;
        let b = (theta_nd.values()[i] - theta_nd.box_lo()[i]) / w_nd;
        sum += (a - b) * (a - b);
    }
    if dropped.len() == theta_nf.len() {
        return Err(IdentError::Metric("every coordinate has a degenerate range".into()));
    }
    Ok(BetaDeviation {
        beta: sum.sqrt(),
        dropped,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentResult {
    pub theta_hat: ThetaVector,
    pub labels: Vec<String>,
    pub f_hat: f64,
    pub trace: OptTrace,
    pub nrmse_train: f64,
    pub nrmse_test: Option<f64>,
    /// Share of evaluations whose forward problem was infeasible.
    pub infeasible_rate: f64,
    #[serde(skip)]
    pub gp: Option<GpState>,
}

/// Identifies the surrogate's parameters from `train` by Bayesian
/// optimization, then scores the fit on both sets.
pub fn identify<R: Rng + ?Sized>(
    train: &[ResponseSample],
    test: Option<&[ResponseSample]>,
    surrogate: &Surrogate,
    cfg: &BoConfig,
    rng: &mut R,
) -> Result<IdentResult, IdentError> {
    if train.is_empty() {
        return Err(IdentError::Empty);
    }
    let bx = surrogate.search_box()?;
    let objective = |values: &[f64]| -> Result<f64, String> {
        let theta = surrogate.theta(values).map_err(|e| e.to_string())?;
        identification_objective(train, surrogate, &theta).map_err(|e| e.to_string())
    };
    let run = optimize_constrained(objective, |v: &[f64]| surrogate.is_plausible(v), &bx, cfg, rng)?;
    let best = run.trace.best_theta.clone().ok_or(IdentError::NoFeasiblePoint)?;
    let theta_hat = surrogate.theta(&best)?;
    let f_hat = identification_objective(train, surrogate, &theta_hat)?;
    let model = surrogate.model_at(&theta_hat)?;
    let score = |samples: &[ResponseSample]| -> Result<f64, IdentError> {
        let est = surrogate.predict_all(&model, samples)?;
        let truth: Vec<Vec<f64>> = samples.iter().map(|s| s.p_obs.clone()).collect();
        nrmse(&truth, &est)
    };
    let nrmse_train = score(train)?;
    let nrmse_test = match test {
        Some(t) if !t.is_empty() => Some(score(t)?),
        _ => None,
    };
    let n = run.trace.iterations.len().max(1);
    Ok(IdentResult {
        labels: theta_hat.layout().labels(),
        theta_hat,
        f_hat,
        infeasible_rate: run.trace.failures() as f64 / n as f64,
        trace: run.trace,
        nrmse_train,
        nrmse_test,
        gp: run.gp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStat {
    pub n: usize,
    pub trials: usize,
    pub mean_gap: f64,
    pub std_err: f64,
    pub variance: f64,
    pub target: f64,
    /// `mean_gap − target`.
    pub deviation: f64,
}

/// For each sample count N, draws `trials` noisy datasets of N days from
/// the truth and records f_nd(θ*) − f_nf(θ*) at the true parameters. Each
/// count uses one fixed set of price days; only the noise is redrawn.
pub fn noise_gap_experiment<R, P>(
    truth: &Surrogate,
    theta_true: &ThetaVector,
    spec: &NoiseSpec,
    sample_counts: &[usize],
    trials: usize,
    mut day_prices: P,
    rng: &mut R,
) -> Result<Vec<GapStat>, IdentError>
where
    R: Rng + ?Sized,
    P: FnMut(&mut R) -> PriceSignal,
{
    let sampler = NoiseSampler::new(spec)?;
    let model = truth.model_at(theta_true)?;
    let mut out = Vec::with_capacity(sample_counts.len());
    for &n in sample_counts {
        let prices: Vec<PriceSignal> = (0..n).map(|_| day_prices(rng)).collect();
        let clean: Vec<ResponseSample> = prices
            .par_iter()
            .map(|p| {
                let r = respond(&model, p, truth.mode, &truth.forward)?;
                Ok(ResponseSample {
                    prices: p.clone(),
                    p_obs: r.p_agg,
                    p_fix_pred: model.fixed.clone(),
                })
            })
            .collect::<Result<Vec<_>, IdentError>>()?;
        let f_nf = identification_objective(&clean, truth, theta_true)?;
        let mut gaps = Vec::with_capacity(trials);
        for _ in 0..trials {
            let noisy = clean
                .iter()
                .map(|s| sampler.apply(s, rng))
                .collect::<Result<Vec<_>, _>>()?;
            gaps.push(identification_objective(&noisy, truth, theta_true)? - f_nf);
        }
        let k = gaps.len().max(1) as f64;
        let mean = gaps.iter().sum::<f64>() / k;
        let variance = if gaps.len() > 1 {
            gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        let target = spec.trace();
        out.push(GapStat {
            n,
            trials,
            mean_gap: mean,
            std_err: (variance / k).sqrt(),
            variance,
            target,
            deviation: mean - target,
        });
    }
    Ok(out)
}

/// Least-squares slope of log(variance) against log(N).
pub fn log_log_slope(stats: &[GapStat]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = stats
        .iter()
        .filter(|s| s.variance > 0.0)
        .map(|s| ((s.n as f64).ln(), s.variance.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

pub fn write_gap_csv<W: Write>(stats: &[GapStat], mut out: W) -> std::io::Result<()> {
    writeln!(out, "n,trials,mean_gap,std_err,variance,target,deviation,within_3se")?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.n,
            s.trials,
            fmt_num(s.mean_gap),
            fmt_num(s.std_err),
            fmt_num(s.variance),
            fmt_num(s.target),
            fmt_num(s.deviation),
            s.deviation.abs() <= 3.0 * s.std_err
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub coords: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Posterior mean and sd on a regular grid over one or two coordinates,
/// the others held at `fixed_point`. Coordinates are in box units.
pub fn posterior_slice(
    state: &GpState,
    bx: &SearchBox,
    dims: &[usize],
    resolution: usize,
    fixed_point: &[f64],
) -> Result<Vec<SliceRow>, IdentError> {
    if dims.is_empty() || dims.len() > 2 || dims.iter().any(|d| *d >= bx.dim()) {
        return Err(IdentError::Metric(format!("bad slice dimensions {dims:?}")));
    }
    if dims.len() == 2 && dims[0] == dims[1] {
        return Err(IdentError::Metric("slice dimensions must differ".into()));
    }
    if resolution < 2 || fixed_point.len() != bx.dim() {
        return Err(IdentError::Metric("need resolution >= 2 and a full fixed point".into()));
    }
    let base = bx.to_unit(fixed_point);
    let step = |i: usize| i as f64 / (resolution - 1) as f64;
    let cells: Vec<Vec<usize>> = if dims.len() == 1 {
        (0..resolution).map(|i| vec![i]).collect()
    } else {
        (0..resolution)
            .flat_map(|i| (0..resolution).map(move |j| vec![i, j]))
            .collect()
    };
    Ok(cells
        .into_par_iter()
        .map(|idx| {
            let mut u = base.clone();
            for (d, i) in dims.iter().zip(&idx) {
                u[*d] = step(*i);
            }
            let p = state.posterior(&u);
            let raw = bx.from_unit(&u);
            SliceRow {
                coords: dims.iter().map(|d| raw[*d]).collect(),
                mean: p.mean,
                sd: p.sd(),
            }
        })
        .collect())
}

pub fn write_slice_csv<W: Write>(rows: &[SliceRow], labels: &[String], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{},mean,sd", labels.join(","))?;
    for r in rows {
        let coords: Vec<String> = r.coords.iter().map(|v| fmt_num(*v)).collect();
        writeln!(out, "{},{},{}", coords.join(","), fmt_num(r.mean), fmt_num(r.sd))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentMetrics {
    pub nrmse_train: Option<f64>,
    pub nrmse_test: Option<f64>,
    pub beta: Option<f64>,
    pub gap: Option<Vec<GapStat>>,
    pub infeasible_rate: Option<f64>,
}

/// `day,t,lambda,lambda_hat,p_obs,p_fix_pred`, 17 significant digits.
pub fn write_dataset_csv<W: Write>(samples: &[ResponseSample], out: W) -> Result<(), IdentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["day", "t", "lambda", "lambda_hat", "p_obs", "p_fix_pred"])?;
    for (day, s) in samples.iter().enumerate() {
        for t in 0..s.p_obs.len() {
            w.write_record([
                day.to_string(),
                t.to_string(),
                fmt_num(s.prices.lambda[t]),
                fmt_num(s.prices.lambda_hat[t]),
                fmt_num(s.p_obs[t]),
                fmt_num(s.p_fix_pred[t]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Vec<ResponseSample>, IdentError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["day", "t", "lambda", "lambda_hat", "p_obs", "p_fix_pred"] {
        return Err(IdentError::Dataset {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut out: Vec<ResponseSample> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let err = |message: String| IdentError::Dataset { line, message };
        let int = |k: usize| rec[k].parse::<usize>().map_err(|e| err(format!("{}: {e}", header[k])));
        let num = |k: usize| rec[k].parse::<f64>().map_err(|e| err(format!("{}: {e}", header[k])));
        let (day, t) = (int(0)?, int(1)?);
        if day == out.len() && t == 0 {
            out.push(ResponseSample {
                prices: PriceSignal {
                    lambda: Vec::new(),
                    lambda_hat: Vec::new(),
                },
                p_obs: Vec::new(),
                p_fix_pred: Vec::new(),
            });
        }
        let days = out.len();
        let s = match out.last_mut() {
            Some(s) if day + 1 == days && t == s.p_obs.len() => s,
            _ => return Err(err(format!("expected rows in (day, t) order, got ({day}, {t})"))),
        };
        s.prices.lambda.push(num(2)?);
        s.prices.lambda_hat.push(num(3)?);
        s.p_obs.push(num(4)?);
        s.p_fix_pred.push(num(5)?);
    }
    Ok(out)
}
