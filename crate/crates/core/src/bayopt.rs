//! Expected-improvement Bayesian optimization with a two-phase loop: a
//! classic phase that retunes the kernel hyperparameters and refits the GP
//! after every evaluation, then a fast phase with frozen hyperparameters
//! where each new point is appended to the factorization in O(n²).

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gp::{tune_hyperparameters, GpError, GpState, HyperBounds, Hyperparams};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("invalid search box: {0}")]
    SearchBox(String),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Closed-form expected improvement for minimization under a Gaussian
/// posterior with mean `mean` and standard deviation `sd`.
pub fn expected_improvement(mean: f64, sd: f64, f_best: f64) -> f64 {
    let gap = f_best - mean;
    if sd <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (gap * cdf + sd * pdf).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptBudget {
    /// Initial design size.
    pub n0: usize,
    /// Evaluations after which the classic phase ends.
    pub n_classic: usize,
    /// Total evaluation attempts.
    pub n_max: usize,
    pub acq_starts: usize,
}

impl OptBudget {
    pub fn new(n0: usize, n_classic: usize, n_max: usize, acq_starts: usize) -> Result<Self, BoError> {
        let b = Self {
            n0,
            n_classic,
            n_max,
            acq_starts,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BoError> {
        if !(1 <= self.n0 && self.n0 <= self.n_classic && self.n_classic <= self.n_max) {
            return Err(BoError::Budget(format!(
                "need 1 <= n0 <= n_classic <= n_max, got {} / {} / {}",
                self.n0, self.n_classic, self.n_max
            )));
        }
        if self.acq_starts == 0 {
            return Err(BoError::Budget("acq_starts must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for OptBudget {
    fn default() -> Self {
        Self {
            n0: 10,
            n_classic: 50,
            n_max: 200,
            acq_starts: 64,
        }
    }
}

/// Axis-aligned box; the optimizer works on its unit-cube image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, BoError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(BoError::SearchBox(format!("{} lower vs {} upper bounds", lo.len(), hi.len())));
        }
        if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] < hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
            return Err(BoError::SearchBox(format!("coordinate {i}: [{}, {}]", lo[i], hi[i])));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| lo + v.clamp(0.0, 1.0) * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Classic,
    Fast,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Classic => "classic",
            Phase::Fast => "fast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub theta: Vec<f64>,
    /// `None` when the evaluation failed.
    pub f: Option<f64>,
    /// Acquisition value at proposal time; `None` for initial-design points.
    pub ei: Option<f64>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub iterations: Vec<Iteration>,
    pub best_theta: Option<Vec<f64>>,
    pub best_f: Option<f64>,
}

impl OptTrace {
    fn new() -> Self {
        Self {
            iterations: Vec::new(),
            best_theta: None,
            best_f: None,
        }
    }

    fn record(&mut self, it: Iteration) {
        if let Some(f) = it.f {
            if self.best_f.is_none_or(|b| f < b) {
                self.best_f = Some(f);
                self.best_theta = Some(it.theta.clone());
            }
        }
        self.iterations.push(it);
    }

    pub fn failures(&self) -> usize {
        self.iterations.iter().filter(|it| it.f.is_none()).count()
    }

    /// `iteration,phase,f,best_f,ei`; failed evaluations and initial-design
    /// acquisition values are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,phase,f,best_f,ei")?;
        let mut best: Option<f64> = None;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for (i, it) in self.iterations.iter().enumerate() {
            if let Some(f) = it.f {
                best = Some(best.map_or(f, |b: f64| b.min(f)));
            }
            writeln!(out, "{},{},{},{},{}", i, it.phase.as_str(), opt(it.f), opt(best), opt(it.ei))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BoConfig {
    pub budget: OptBudget,
    pub eta_bounds: HyperBounds,
    pub tune_restarts: usize,
    /// Points (in box coordinates) evaluated first, as part of the initial design.
    pub initial_points: Vec<Vec<f64>>,
    /// Standard deviation, in unit-cube coordinates, of the retry perturbation.
    pub retry_sd: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: OptBudget::default(),
            eta_bounds: HyperBounds::default(),
            tune_restarts: 8,
            initial_points: Vec::new(),
            retry_sd: 0.05,
        }
    }
}

/// Trace plus the surrogate as it stood after the last evaluation.
#[derive(Debug, Clone)]
pub struct OptRun {
    pub trace: OptTrace,
    pub gp: Option<GpState>,
}

pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        strata.shuffle(rng);
        for (i, s) in strata.iter().enumerate() {
            pts[i][d] = (*s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn ei_at<V: Fn(&[f64]) -> bool>(state: &GpState, u: &[f64], f_best: f64, valid: &V) -> f64 {
    if !valid(u) {
        return -1.0;
    }
    let p = state.posterior(u);
    expected_improvement(p.mean, p.sd(), f_best)
}

fn coordinate_search<V: Fn(&[f64]) -> bool>(
    state: &GpState,
    start: Vec<f64>,
    f_best: f64,
    valid: &V,
) -> (Vec<f64>, f64) {
    let mut x = start;
    let mut val = ei_at(state, &x, f_best, valid);
    let mut h = 0.1;
    while h >= 1e-4 {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + dir * h).clamp(0.0, 1.0);
                if y[d] == x[d] {
                    continue;
                }
                let v = ei_at(state, &y, f_best, valid);
                if v > val {
                    x = y;
                    val = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (x, val)
}

fn random_valid<R: Rng + ?Sized, V: Fn(&[f64]) -> bool>(dim: usize, rng: &mut R, valid: &V) -> Vec<f64> {
    let mut u: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
    for _ in 0..1000 {
        if valid(&u) {
            break;
        }
        u = (0..dim).map(|_| rng.random()).collect();
    }
    u
}

/// Maximizes EI over the unit cube. A quarter of the starts are Gaussian
/// perturbations of the incumbent, the rest uniform; each is refined by
/// coordinate search and the best refined point is returned with its EI.
pub fn propose_next<R: Rng + ?Sized>(
    state: &GpState,
    f_best: f64,
    acq_starts: usize,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    propose_next_valid(state, f_best, acq_starts, rng, &|_: &[f64]| true)
}

pub fn propose_next_valid<R, V>(
    state: &GpState,
    f_best: f64,
    acq_starts: usize,
    rng: &mut R,
    valid: &V,
) -> (Vec<f64>, f64)
where
    R: Rng + ?Sized,
    V: Fn(&[f64]) -> bool + Sync,
{
    let dim = state.dim();
    let incumbent = state
        .values()
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| state.points()[i].clone())
        .unwrap_or_else(|| vec![0.5; dim]);
    let local = Normal::new(0.0, 0.05).unwrap();
    let starts: Vec<Vec<f64>> = (0..acq_starts.max(1))
        .map(|k| {
            if k % 4 == 3 {
                incumbent
                    .iter()
                    .map(|v| (v + local.sample(rng)).clamp(0.0, 1.0))
                    .collect()
            } else {
                random_valid(dim, rng, valid)
            }
        })
        .collect();
    starts
        .into_par_iter()
        .map(|s| coordinate_search(state, s, f_best, valid))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(None, |acc: Option<(Vec<f64>, f64)>, cand| match acc {
            Some(a) if a.1 >= cand.1 => Some(a),
            _ => Some(cand),
        })
        .expect("at least one start")
}

struct Data {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

/// Full fit with `eta`, raising the noise level until the Gram matrix factors.
fn robust_fit(data: &Data, mut eta: Hyperparams, standardize: bool) -> Result<GpState, GpError> {
    let mut last = None;
    for _ in 0..8 {
        let r = if standardize {
            GpState::fit_standardized(data.x.clone(), data.y.clone(), eta)
        } else {
            GpState::fit(data.x.clone(), data.y.clone(), eta)
        };
        match r {
            Ok(s) => return Ok(s),
            Err(e) => {
                last = Some(e);
                eta.eps = (eta.eps * 10.0).max(1e-4 * eta.alpha.sqrt());
            }
        }
    }
    Err(last.unwrap())
}

/// Minimizes `objective` over `bx`.
pub fn optimize<F, R>(objective: F, bx: &SearchBox, cfg: &BoConfig, rng: &mut R) -> Result<OptRun, BoError>
where
    F: FnMut(&[f64]) -> Result<f64, String>,
    R: Rng + ?Sized,
{
    optimize_constrained(objective, |_: &[f64]| true, bx, cfg, rng)
}

/// As [`optimize`], with a cheap predicate on box coordinates that rules
/// candidate points out before they are proposed. Initial-design points are
/// redrawn until they satisfy it (up to a fixed number of tries).
pub fn optimize_constrained<F, V, R>(
    mut objective: F,
    valid: V,
    bx: &SearchBox,
    cfg: &BoConfig,
    rng: &mut R,
) -> Result<OptRun, BoError>
where
    F: FnMut(&[f64]) -> Result<f64, String>,
    V: Fn(&[f64]) -> bool + Sync,
    R: Rng + ?Sized,
{
    let budget = cfg.budget;
    budget.validate()?;
    let dim = bx.dim();
    let valid_unit = |u: &[f64]| valid(&bx.from_unit(u));
    let retry = Normal::new(0.0, cfg.retry_sd.max(1e-6)).unwrap();

    let mut trace = OptTrace::new();
    let mut data = Data {
        x: Vec::new(),
        y: Vec::new(),
    };

    // Evaluates a unit-cube point, retrying once at a perturbed point on failure.
    // Returns whether any evaluation succeeded.
    let mut evaluate = |u: Vec<f64>,
                        ei: Option<f64>,
                        phase: Phase,
                        trace: &mut OptTrace,
                        data: &mut Data,
                        rng: &mut R|
     -> Option<(Vec<f64>, f64)> {
        let mut point = u;
        for attempt in 0..2 {
            if trace.iterations.len() >= budget.n_max {
                return None;
            }
            let theta = bx.from_unit(&point);
            let f = objective(&theta).ok().filter(|v| v.is_finite());
            trace.record(Iteration {
                theta,
                f,
                ei: if attempt == 0 { ei } else { None },
                phase,
            });
            if let Some(v) = f {
                data.x.push(point.clone());
                data.y.push(v);
                return Some((point, v));
            }
            point = point
                .iter()
                .map(|p| (p + retry.sample(rng)).clamp(0.0, 1.0))
                .collect();
        }
        None
    };

    let injected: Vec<Vec<f64>> = cfg.initial_points.iter().map(|p| bx.to_unit(p)).collect();
    let mut design = injected.clone();
    if design.len() < budget.n0 {
        for mut u in latin_hypercube(budget.n0 - design.len(), dim, rng) {
            if !valid_unit(&u) {
                u = random_valid(dim, rng, &valid_unit);
            }
            design.push(u);
        }
    }
    for u in design {
        evaluate(u, None, Phase::Classic, &mut trace, &mut data, rng);
    }
    // Keep sampling until the surrogate has something to fit.
    while data.x.is_empty() && trace.iterations.len() < budget.n_max {
        let u = random_valid(dim, rng, &valid_unit);
        evaluate(u, None, Phase::Classic, &mut trace, &mut data, rng);
    }
    if data.x.is_empty() {
        return Ok(OptRun { trace, gp: None });
    }

    let mut eta = Hyperparams::default();
    let mut tuned = false;
    let tune = |data: &Data, rng: &mut R| -> Hyperparams {
        if data.x.len() < 2 {
            return Hyperparams::default();
        }
        let norm = crate::gp::Standardization::from_values(&data.y);
        let ys: Vec<f64> = data.y.iter().map(|v| norm.apply(*v)).collect();
        tune_hyperparameters(&data.x, &ys, &cfg.eta_bounds, cfg.tune_restarts, rng)
            .unwrap_or_default()
    };

    let mut gp = None;
    while trace.iterations.len() < budget.n_classic {
        eta = tune(&data, rng);
        tuned = true;
        let state = robust_fit(&data, eta, true)?;
        let f_best = trace.best_f.unwrap();
        let (u, ei) = propose_next_valid(&state, f_best, budget.acq_starts, rng, &valid_unit);
        gp = Some(state);
        evaluate(u, Some(ei), Phase::Classic, &mut trace, &mut data, rng);
    }

    if trace.iterations.len() < budget.n_max {
        if !tuned {
            eta = tune(&data, rng);
        }
        let mut state = robust_fit(&data, eta, true)?;
        let norm = state.standardization();
        while trace.iterations.len() < budget.n_max {
            let f_best = trace.best_f.unwrap();
            let (u, ei) = propose_next_valid(&state, f_best, budget.acq_starts, rng, &valid_unit);
            let before = data.x.len();
            evaluate(u, Some(ei), Phase::Fast, &mut trace, &mut data, rng);
            for i in before..data.x.len() {
                if state.append(data.x[i].clone(), data.y[i]).is_err() {
                    state = GpState::fit_with(data.x.clone(), data.y.clone(), state.eta(), norm)
                        .or_else(|_| robust_fit(&data, state.eta(), true))?;
                }
            }
        }
        gp = Some(state);
    } else if gp.is_none() {
        gp = Some(robust_fit(&data, eta, true)?);
    }
    Ok(OptRun { trace, gp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ei_reference_values() {
        assert_abs_diff_eq!(expected_improvement(0.0, 1.0, 0.0), 0.398942, epsilon = 1e-6);
        assert_eq!(expected_improvement(-1.0, 0.0, 0.0), 1.0);
        assert_eq!(expected_improvement(2.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(expected_improvement(0.0, 1.0, 1.0), 1.083316, epsilon = 1e-5);
    }

    #[test]
    fn ei_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (mean, sd, best) in [(0.3_f64, 0.5_f64, 0.1_f64), (-1.0, 2.0, 0.5), (1.0, 0.1, 1.2)] {
            let n = 200_000;
            let dist = Normal::new(mean, sd).unwrap();
            let draws: Vec<f64> = (0..n).map(|_| (best - dist.sample(&mut rng)).max(0.0_f64)).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((expected_improvement(mean, sd, best) - m).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn budget_validation() {
        assert!(OptBudget::new(5, 10, 30, 8).is_ok());
        assert!(OptBudget::new(0, 10, 30, 8).is_err());
        assert!(OptBudget::new(5, 4, 30, 8).is_err());
        assert!(OptBudget::new(5, 10, 9, 8).is_err());
        assert!(OptBudget::new(5, 10, 30, 0).is_err());
    }

    #[test]
    fn latin_hypercube_has_one_point_per_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(10, 3, &mut rng);
        for d in 0..3 {
            let mut strata: Vec<usize> = pts.iter().map(|p| (p[d] * 10.0) as usize).collect();
            strata.sort();
            assert_eq!(strata, (0..10).collect::<Vec<_>>());
        }
    }

    fn sharp_state() -> GpState {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0, ((i * 7) % 12) as f64 / 11.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| ((p[0] - 0.3).powi(2) + (p[1] - 0.6).powi(2)) * 10.0).collect();
        GpState::fit_standardized(x, y, Hyperparams::new(1.0, 0.25, 1e-3).unwrap()).unwrap()
    }

    #[test]
    fn proposal_dominates_probe_grid() {
        let state = sharp_state();
        let f_best = state.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (u, ei) = propose_next(&state, f_best, 64, &mut rng);
        assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
        let mut probe_rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let t = [probe_rng.random::<f64>(), probe_rng.random::<f64>()];
            let p = state.posterior(&t);
            assert!(ei >= expected_improvement(p.mean, p.sd(), f_best) - 1e-12);
        }
    }

    #[test]
    fn proposal_from_single_point_explores() {
        let state = GpState::fit_standardized(vec![vec![0.0, 0.0]], vec![1.0], Hyperparams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (u, ei) = propose_next(&state, 1.0, 16, &mut rng);
        assert!(ei > 0.0);
        assert!(u != vec![0.0, 0.0]);
    }

    #[test]
    fn proposals_are_deterministic() {
        let state = sharp_state();
        let a = propose_next(&state, 0.1, 32, &mut ChaCha8Rng::seed_from_u64(5));
        let b = propose_next(&state, 0.1, 32, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    fn small_config(n0: usize, n_classic: usize, n_max: usize) -> BoConfig {
        BoConfig {
            budget: OptBudget::new(n0, n_classic, n_max, 16).unwrap(),
            tune_restarts: 3,
            ..BoConfig::default()
        }
    }

    #[test]
    fn quadratic_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let run = optimize(
            |t: &[f64]| Ok((t[0] - 0.5).powi(2)),
            &SearchBox::unit(1),
            &small_config(5, 10, 30),
            &mut rng,
        )
        .unwrap();
        assert_eq!(run.trace.iterations.len(), 30);
        assert!(run.trace.best_f.unwrap() <= 1e-2);
        let phases: Vec<Phase> = run.trace.iterations.iter().map(|i| i.phase).collect();
        assert_eq!(phases[..10], [Phase::Classic; 10]);
        assert_eq!(phases[10..], [Phase::Fast; 20]);
    }

    #[test]
    fn constant_objective_completes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let run = optimize(|_: &[f64]| Ok(3.5), &SearchBox::unit(2), &small_config(4, 8, 25), &mut rng).unwrap();
        assert_eq!(run.trace.best_f, Some(3.5));
        assert_eq!(run.trace.iterations.len(), 25);
    }

    #[test]
    fn fast_phase_state_matches_full_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let run = optimize(
            |t: &[f64]| Ok((3.0 * t[0]).sin() + (t[1] - 0.2).powi(2)),
            &SearchBox::unit(2),
            &small_config(5, 10, 40),
            &mut rng,
        )
        .unwrap();
        let gp = run.gp.unwrap();
        let full = GpState::fit_with(gp.points().to_vec(), gp.values().to_vec(), gp.eta(), gp.standardization())
            .unwrap();
        let mut probe = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = [probe.random::<f64>(), probe.random::<f64>()];
            assert_abs_diff_eq!(gp.posterior(&t).mean, full.posterior(&t).mean, epsilon = 1e-6);
        }
    }

    #[test]
    fn incumbent_bookkeeping_and_failures() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = BoConfig {
            initial_points: vec![vec![0.25, 0.75]],
            ..small_config(5, 8, 20)
        };
        let run = optimize(
            |t: &[f64]| {
                if t[0] > 0.8 {
                    Err("infeasible".into())
                } else {
                    Ok((t[0] - 0.25).powi(2) + (t[1] - 0.75).powi(2))
                }
            },
            &SearchBox::unit(2),
            &cfg,
            &mut rng,
        )
        .unwrap();
        let trace = &run.trace;
        assert_eq!(trace.iterations[0].theta, vec![0.25, 0.75]);
        assert_eq!(trace.best_f, Some(0.0));
        assert_eq!(trace.best_theta.as_deref(), Some(&[0.25, 0.75][..]));
        let mut best: f64 = f64::INFINITY;
        for it in &trace.iterations {
            if let Some(f) = it.f {
                best = best.min(f);
            }
        }
        assert_eq!(trace.best_f, Some(best));
        let succeeded = trace.iterations.len() - trace.failures();
        assert_eq!(run.gp.unwrap().len(), succeeded);
    }

    #[test]
    fn validity_predicate_steers_proposals() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let run = optimize_constrained(
            |t: &[f64]| Ok((t[0] - 0.9).powi(2)),
            |t: &[f64]| t[0] <= 0.6,
            &SearchBox::new(vec![0.0], vec![1.0]).unwrap(),
            &small_config(4, 6, 15),
            &mut rng,
        )
        .unwrap();
        for it in &run.trace.iterations {
            assert!(it.theta[0] <= 0.6 + 1e-12);
        }
    }

    #[test]
    fn trace_csv_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let run = optimize(|t: &[f64]| Ok(t[0]), &SearchBox::unit(1), &small_config(3, 4, 6), &mut rng).unwrap();
        let mut buf = Vec::new();
        run.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("iteration,phase,f,best_f,ei\n0,classic,"));
    }

    #[test]
    fn search_box_round_trip() {
        let b = SearchBox::new(vec![-20.0, 0.8], vec![-4.0, 1.0]).unwrap();
        let x = vec![-10.0, 0.95];
        let back = b.from_unit(&b.to_unit(&x));
        assert_abs_diff_eq!(back[0], x[0], epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], x[1], epsilon = 1e-12);
        assert!(SearchBox::new(vec![1.0], vec![1.0]).is_err());
    }
}
