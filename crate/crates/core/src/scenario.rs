//! Synthetic fleets, price series and training datasets.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{fmt_num, respond, ForwardError, ForwardOptions, PriceSignal, ResponseMode, ResponseResult};
use crate::identify::{IdentError, NoiseSampler, NoiseSpec, ResponseSample};
use crate::model::{validate_model, AdjustableParams, AggregateModel, StorageParams, TimeGrid};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("price csv line {line}: {message}")]
    PriceCsv { line: usize, message: String },
    #[error("ground truth: {0}")]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Ident(#[from] IdentError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Range = (f64, f64);

fn check_range(name: &str, (lo, hi): Range) -> Result<(), ScenarioError> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(ScenarioError::Spec(format!("{name}: [{lo}, {hi}] is not a valid range")))
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, (lo, hi): Range) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StorageDist {
    pub p_lo: Range,
    pub p_hi: Range,
    pub e_hi: Range,
    /// `e_lo` as a fraction of the sampled `e_hi`.
    pub e_lo_frac: Range,
    pub sigma: Range,
    /// Initial energy as a fraction of the usable range (see [`sample_fleet`]).
    pub e0_frac: Range,
}

impl Default for StorageDist {
    fn default() -> Self {
        Self {
            p_lo: (-18.0, -6.0),
            p_hi: (4.0, 16.0),
            e_hi: (8.0, 64.0),
            e_lo_frac: (0.1, 0.15),
            sigma: (0.85, 1.0),
            e0_frac: (0.3, 0.7),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustableDist {
    pub p_lo: Range,
    pub p_hi: Range,
    /// Ramp magnitude; `None` leaves ramping unconstrained.
    pub ramp: Option<Range>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetSpec {
    pub periods: usize,
    pub dt: f64,
    pub n_storage: usize,
    pub n_generators: usize,
    pub n_interruptible: usize,
    pub storage: StorageDist,
    pub generator: AdjustableDist,
    pub interruptible: AdjustableDist,
    /// Band the fixed-load profile stays within, kW.
    pub fixed_band: Range,
}

impl Default for FleetSpec {
    /// The full-scale fleet: 50 storages, 5 generators, 5 interruptible loads.
    fn default() -> Self {
        Self {
            periods: 24,
            dt: 1.0,
            n_storage: 50,
            n_generators: 5,
            n_interruptible: 5,
            storage: StorageDist::default(),
            generator: AdjustableDist {
                p_lo: (3.0, 5.0),
                p_hi: (10.0, 15.0),
                ramp: Some((2.0, 3.0)),
            },
            interruptible: AdjustableDist {
                p_lo: (1.0, 3.0),
                p_hi: (5.0, 10.0),
                ramp: None,
            },
            fixed_band: (400.0, 600.0),
        }
    }
}

impl FleetSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.periods == 0 || !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ScenarioError::Spec(format!(
                "need periods >= 1 and dt > 0, got {} and {}",
                self.periods, self.dt
            )));
        }
        let s = &self.storage;
        for (name, r) in [
            ("storage.p_lo", s.p_lo),
            ("storage.p_hi", s.p_hi),
            ("storage.e_hi", s.e_hi),
            ("storage.e_lo_frac", s.e_lo_frac),
            ("storage.sigma", s.sigma),
            ("storage.e0_frac", s.e0_frac),
            ("generator.p_lo", self.generator.p_lo),
            ("generator.p_hi", self.generator.p_hi),
            ("interruptible.p_lo", self.interruptible.p_lo),
            ("interruptible.p_hi", self.interruptible.p_hi),
            ("fixed_band", self.fixed_band),
        ] {
            check_range(name, r)?;
        }
        if s.p_lo.1 > s.p_hi.0 {
            return Err(ScenarioError::Spec("storage p_lo range overlaps p_hi range".into()));
        }
        if !(s.sigma.0 > 0.0 && s.sigma.1 <= 1.0) {
            return Err(ScenarioError::Spec("storage.sigma must lie in (0, 1]".into()));
        }
        if !(0.0 <= s.e_lo_frac.0 && s.e_lo_frac.1 <= 1.0 && 0.0 <= s.e0_frac.0 && s.e0_frac.1 <= 1.0) {
            return Err(ScenarioError::Spec("fractions must lie in [0, 1]".into()));
        }
        if s.e_hi.0 < 0.0 {
            return Err(ScenarioError::Spec("storage.e_hi must be nonnegative".into()));
        }
        for (name, d) in [("generator", &self.generator), ("interruptible", &self.interruptible)] {
            if d.p_lo.1 > d.p_hi.0 {
                return Err(ScenarioError::Spec(format!("{name} p_lo range overlaps p_hi range")));
            }
            if let Some(r) = d.ramp {
                check_range(&format!("{name}.ramp"), r)?;
                if r.0 < 0.0 {
                    return Err(ScenarioError::Spec(format!("{name}.ramp must be nonnegative")));
                }
            }
        }
        Ok(())
    }
}

fn sample_adjustable<R: Rng + ?Sized>(d: &AdjustableDist, spec: &FleetSpec, rng: &mut R) -> AdjustableParams {
    let p_lo = draw(rng, d.p_lo);
    let p_hi = draw(rng, d.p_hi);
    let (r_lo, r_hi) = match d.ramp {
        Some(r) => (-draw(rng, r), draw(rng, r)),
        None => {
            let span = (p_hi - p_lo) / spec.dt;
            (-span, span)
        }
    };
    AdjustableParams::new(p_lo, p_hi, r_lo, r_hi, spec.periods)
}

/// Draws a fleet. The initial energy is placed at a random fraction of the
/// range between `e_lo` and the highest level a lossy storage can sustain
/// over a cycle, `p_hi·dt/(1 − σ)`, so the periodic constraint is feasible.
pub fn sample_fleet<R: Rng + ?Sized>(spec: &FleetSpec, rng: &mut R) -> Result<AggregateModel, ScenarioError> {
    spec.validate()?;
    let s = &spec.storage;
    let storages = (0..spec.n_storage)
        .map(|_| {
            let p_lo = draw(rng, s.p_lo);
            let p_hi = draw(rng, s.p_hi);
            let e_hi = draw(rng, s.e_hi);
            let e_lo = draw(rng, s.e_lo_frac) * e_hi;
            let sigma = draw(rng, s.sigma);
            let sustain = if sigma < 1.0 {
                0.95 * p_hi * spec.dt / (1.0 - sigma)
            } else {
                f64::INFINITY
            };
            let top = e_hi.min(sustain).max(e_lo);
            let e0 = e_lo + draw(rng, s.e0_frac) * (top - e_lo);
            StorageParams {
                p_lo,
                p_hi,
                e_lo,
                e_hi,
                e0,
                sigma,
            }
        })
        .collect();
    let mut adjustables: Vec<AdjustableParams> = (0..spec.n_generators)
        .map(|_| sample_adjustable(&spec.generator, spec, rng))
        .collect();
    adjustables.extend((0..spec.n_interruptible).map(|_| sample_adjustable(&spec.interruptible, spec, rng)));

    let (lo, hi) = spec.fixed_band;
    let w = hi - lo;
    let base = draw(rng, (lo + 0.25 * w, hi - 0.25 * w));
    let amp = draw(rng, (0.0, 0.25 * w));
    let phase = draw(rng, (0.0, std::f64::consts::TAU));
    let fixed = (0..spec.periods)
        .map(|t| {
            let x = std::f64::consts::TAU * t as f64 / spec.periods as f64 + phase;
            (base + amp * x.sin()).clamp(lo, hi)
        })
        .collect();

    let model = AggregateModel {
        grid: TimeGrid::new(spec.periods, spec.dt).map_err(|e| ScenarioError::Spec(e.to_string()))?,
        fixed,
        adjustables,
        storages,
    };
    let report = validate_model(&model);
    if !report.ok {
        return Err(ScenarioError::Spec(format!("sampled fleet is invalid: {report}")));
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceKind {
    SyntheticTou,
    SyntheticRt,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSpec {
    pub kind: PriceKind,
    /// Block prices for time-of-use days; their spread sets the real-time swing.
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Per-period standard deviation of real-time prices around their daily shape.
    #[serde(default)]
    pub volatility: f64,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub forecast_error_sd: f64,
}

fn default_levels() -> Vec<f64> {
    vec![0.08, 0.15, 0.30]
}

impl Default for PriceSpec {
    fn default() -> Self {
        Self {
            kind: PriceKind::SyntheticTou,
            levels: default_levels(),
            volatility: 0.0,
            path: None,
            forecast_error_sd: 0.0,
        }
    }
}

/// Piecewise-constant day: one block per level, random block boundaries
/// and a random assignment of levels to blocks.
fn tou_day<R: Rng + ?Sized>(levels: &[f64], periods: usize, rng: &mut R) -> Vec<f64> {
    let blocks = levels.len().min(periods);
    let mut cuts: Vec<usize> = (1..periods).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(blocks - 1).collect();
    cuts.sort_unstable();
    let mut order: Vec<f64> = levels[..blocks].to_vec();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(periods);
    let mut block = 0;
    for t in 0..periods {
        while block < cuts.len() && t >= cuts[block] {
            block += 1;
        }
        out.push(order[block]);
    }
    out
}

fn rt_day<R: Rng + ?Sized>(spec: &PriceSpec, periods: usize, rng: &mut R) -> Vec<f64> {
    let lo = spec.levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = spec.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, spec.volatility).unwrap();
    (0..periods)
        .map(|t| {
            let x = std::f64::consts::TAU * t as f64 / periods as f64 + phase;
            mid + half * x.sin() + noise.sample(rng)
        })
        .collect()
}

pub fn generate_prices<R: Rng + ?Sized>(
    spec: &PriceSpec,
    periods: usize,
    days: usize,
    rng: &mut R,
) -> Result<Vec<PriceSignal>, ScenarioError> {
    if periods == 0 || days == 0 {
        return Err(ScenarioError::Spec("need periods >= 1 and days >= 1".into()));
    }
    if !(spec.volatility >= 0.0 && spec.forecast_error_sd >= 0.0) {
        return Err(ScenarioError::Spec("volatility and forecast error must be nonnegative".into()));
    }
    if spec.kind != PriceKind::Csv && (spec.levels.is_empty() || spec.levels.iter().any(|v| !v.is_finite())) {
        return Err(ScenarioError::Spec("synthetic prices need finite levels".into()));
    }
    match spec.kind {
        PriceKind::SyntheticTou => Ok((0..days)
            .map(|_| PriceSignal::known(tou_day(&spec.levels, periods, rng)))
            .collect()),
        PriceKind::SyntheticRt => {
            let err = Normal::new(0.0, spec.forecast_error_sd).unwrap();
            Ok((0..days)
                .map(|_| {
                    let lambda = rt_day(spec, periods, rng);
                    let lambda_hat = lambda.iter().map(|v| v + err.sample(rng)).collect();
                    PriceSignal { lambda, lambda_hat }
                })
                .collect())
        }
        PriceKind::Csv => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| ScenarioError::Spec("csv prices need a path".into()))?;
            let all = load_prices_csv(path)?;
            if all.len() < days {
                return Err(ScenarioError::Spec(format!("{} has {} days, {days} requested", path.display(), all.len())));
            }
            if let Some(d) = all.iter().position(|p| p.len() != periods) {
                return Err(ScenarioError::Spec(format!("day {d} does not have {periods} periods")));
            }
            Ok(all.into_iter().take(days).collect())
        }
    }
}

/// Parses `day,t,lambda[,lambda_hat]`; days and periods must be
/// consecutive from zero. Without a forecast column the forecast equals
/// the actual price.
pub fn read_prices_csv<R: Read>(input: R) -> Result<Vec<PriceSignal>, ScenarioError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let with_hat = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["day", "t", "lambda"] => false,
        ["day", "t", "lambda", "lambda_hat"] => true,
        _ => {
            return Err(ScenarioError::PriceCsv {
                line: 1,
                message: format!("expected header day,t,lambda[,lambda_hat], got {}", header.join(",")),
            })
        }
    };
    let mut out: Vec<PriceSignal> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let err = |message: String| ScenarioError::PriceCsv { line, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(err(format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        let day: usize = rec[0].parse().map_err(|e| err(format!("day: {e}")))?;
        let t: usize = rec[1].parse().map_err(|e| err(format!("t: {e}")))?;
        let num = |k: usize| -> Result<f64, ScenarioError> {
            let v: f64 = rec[k].parse().map_err(|e| err(format!("{}: {e}", header[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("{}: non-finite value", header[k])))
            }
        };
        let lambda = num(2)?;
        let lambda_hat = if with_hat { num(3)? } else { lambda };
        if day == out.len() && t == 0 {
            out.push(PriceSignal {
                lambda: Vec::new(),
                lambda_hat: Vec::new(),
            });
        }
        let days = out.len();
        match out.last_mut() {
            Some(p) if day + 1 == days && t == p.len() => {
                p.lambda.push(lambda);
                p.lambda_hat.push(lambda_hat);
            }
            _ => return Err(err(format!("expected rows in (day, t) order, got ({day}, {t})"))),
        }
    }
    if let Some(first) = out.first() {
        if let Some(d) = out.iter().position(|p| p.len() != first.len()) {
            return Err(ScenarioError::PriceCsv {
                line: 0,
                message: format!("day {d} has {} periods, day 0 has {}", out[d].len(), first.len()),
            });
        }
    }
    Ok(out)
}

pub fn load_prices_csv(path: impl AsRef<Path>) -> Result<Vec<PriceSignal>, ScenarioError> {
    read_prices_csv(std::fs::File::open(path)?)
}

pub fn write_prices_csv<W: Write>(prices: &[PriceSignal], mut out: W) -> Result<(), ScenarioError> {
    writeln!(out, "day,t,lambda,lambda_hat")?;
    for (day, p) in prices.iter().enumerate() {
        for t in 0..p.len() {
            writeln!(out, "{day},{t},{},{}", fmt_num(p.lambda[t]), fmt_num(p.lambda_hat[t]))?;
        }
    }
    Ok(())
}

/// Ground-truth responses alongside the (possibly noisy) samples built from them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<ResponseSample>,
    pub truth: Vec<ResponseResult>,
}

/// Solves the true model for every day, then applies the noise.
pub fn synthesize_dataset<R: Rng + ?Sized>(
    model: &AggregateModel,
    prices: &[PriceSignal],
    noise: &NoiseSpec,
    mode: ResponseMode,
    opts: &ForwardOptions,
    rng: &mut R,
) -> Result<Dataset, ScenarioError> {
    let sampler = NoiseSampler::new(noise)?;
    let mut samples = Vec::with_capacity(prices.len());
    let mut truth = Vec::with_capacity(prices.len());
    for p in prices {
        let r = respond(model, p, mode, opts)?;
        let clean = ResponseSample {
            prices: p.clone(),
            p_obs: r.p_agg.clone(),
            p_fix_pred: model.fixed.clone(),
        };
        samples.push(if noise.is_zero() { clean } else { sampler.apply(&clean, rng)? });
        truth.push(r);
    }
    Ok(Dataset { samples, truth })
}
