//! Gaussian-process surrogate with a Matérn-5/2 kernel.
//!
//! The state keeps both the Cholesky factor `L` of the Gram matrix and its
//! inverse, so appending a point with frozen hyperparameters costs O(n²)
//! instead of a full O(n³) refactorization.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("cholesky factorization failed: {0}")]
    Factorization(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Signal variance `alpha`, length scale `beta`, noise standard deviation `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
}

impl Hyperparams {
    pub fn new(alpha: f64, beta: f64, eps: f64) -> Result<Self, GpError> {
        if !(alpha > 0.0 && beta > 0.0 && eps >= 0.0) || !(alpha.is_finite() && beta.is_finite() && eps.is_finite()) {
            return Err(GpError::Hyperparams(format!(
                "need alpha > 0, beta > 0, eps >= 0; got ({alpha}, {beta}, {eps})"
            )));
        }
        Ok(Self { alpha, beta, eps })
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.3,
            eps: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub eps: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            alpha: (1e-4, 1e4),
            beta: (1e-3, 1e2),
            eps: (1e-6, 1e1),
        }
    }
}

impl HyperBounds {
    fn log_box(&self) -> [(f64, f64); 3] {
        [self.alpha, self.beta, self.eps].map(|(lo, hi)| (lo.ln(), hi.ln()))
    }

    fn validate(&self) -> Result<(), GpError> {
        for (name, (lo, hi)) in [("alpha", self.alpha), ("beta", self.beta), ("eps", self.eps)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(GpError::Hyperparams(format!("bad {name} bounds ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, eta: &Hyperparams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
        inside(eta.alpha, self.alpha) && inside(eta.beta, self.beta) && inside(eta.eps, self.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn matern_at(eta: &Hyperparams, r: f64) -> f64 {
    let s = 5f64.sqrt() * r / eta.beta;
    eta.alpha * (1.0 + s + s * s / 3.0) * (-s).exp()
}

pub fn matern_kernel(eta: &Hyperparams, xi: &[f64], xj: &[f64], same_index: bool) -> f64 {
    let k = matern_at(eta, distance(xi, xj));
    if same_index {
        k + eta.eps * eta.eps
    } else {
        k
    }
}

pub fn gram_matrix(x: &[Vec<f64>], eta: &Hyperparams) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = matern_kernel(eta, &x[i], &x[i], true);
        for j in 0..i {
            let v = matern_kernel(eta, &x[i], &x[j], false);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

const JITTER: [f64; 6] = [0.0, 1e-12, 1e-10, 1e-9, 1e-8, 1e-6];

/// Cholesky factor with diagonal jitter (relative to the largest diagonal
/// entry) added as needed. Returns the factor and the jitter used.
pub fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), GpError> {
    let scale = k.diagonal().amax().max(f64::MIN_POSITIVE);
    for rel in JITTER {
        let mut kj = k.clone();
        for i in 0..k.nrows() {
            kj[(i, i)] += rel * scale;
        }
        if let Some(ch) = kj.cholesky() {
            let l = ch.unpack();
            if l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok((l, rel * scale));
            }
        }
    }
    Err(GpError::Factorization(format!(
        "{0}x{0} gram matrix not positive definite after jitter {1:e}",
        k.nrows(),
        JITTER[JITTER.len() - 1] * scale
    )))
}

fn lower_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>, GpError> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| GpError::Factorization("singular triangular factor".into()))
}

/// Bordered update of `L` and `L⁻¹` when one row/column is appended to the
/// Gram matrix. O(n²).
pub fn chol_append(
    l: &DMatrix<f64>,
    l_inv: &DMatrix<f64>,
    k_vec: &DVector<f64>,
    k_scalar: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), GpError> {
    let n = l.nrows();
    if l.ncols() != n || l_inv.shape() != (n, n) || k_vec.len() != n {
        return Err(GpError::Dimension(format!(
            "factor {:?}, inverse {:?}, cross-covariance {}",
            l.shape(),
            l_inv.shape(),
            k_vec.len()
        )));
    }
    let l21 = l_inv * k_vec;
    let schur = k_scalar - l21.norm_squared();
    let floor = 1e-14 * k_scalar.abs().max(f64::MIN_POSITIVE);
    let l22 = JITTER
        .iter()
        .map(|rel| schur + rel * k_scalar.abs())
        .find(|s| *s > floor)
        .map(f64::sqrt)
        .ok_or_else(|| {
            GpError::Factorization(format!("nonpositive Schur complement {schur:e} on append"))
        })?;

    let mut l_new = DMatrix::zeros(n + 1, n + 1);
    l_new.view_mut((0, 0), (n, n)).copy_from(l);
    for j in 0..n {
        l_new[(n, j)] = l21[j];
    }
    l_new[(n, n)] = l22;

    // New row of the inverse: -(1/L22) L21ᵀ L⁻¹.
    let row = l_inv.tr_mul(&l21);
    let mut inv_new = DMatrix::zeros(n + 1, n + 1);
    inv_new.view_mut((0, 0), (n, n)).copy_from(l_inv);
    for j in 0..n {
        inv_new[(n, j)] = -row[j] / l22;
    }
    inv_new[(n, n)] = 1.0 / l22;
    Ok((l_new, inv_new))
}

fn exact_duplicates(x: &[Vec<f64>]) -> bool {
    (0..x.len()).any(|i| (0..i).any(|j| x[i] == x[j]))
}

/// Affine map between raw objective values and the scale the GP is fit on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Self = Self {
        shift: 0.0,
        scale: 1.0,
    };

    /// Zero mean, unit variance; a zero spread is treated as unit spread.
    pub fn from_values(y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            shift: mean,
            scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.shift) / self.scale
    }
}

#[derive(Debug, Clone)]
pub struct GpState {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    eta: Hyperparams,
    norm: Standardization,
    l: DMatrix<f64>,
    l_inv: DMatrix<f64>,
    /// L⁻¹ ỹ on the standardized scale.
    j1: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub points: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub eta: Hyperparams,
    pub standardization: Standardization,
}

impl GpState {
    /// Fits on `y` as given (zero prior mean, unit scale).
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, eta: Hyperparams) -> Result<Self, GpError> {
        Self::fit_with(x, y, eta, Standardization::IDENTITY)
    }

    /// Fits on standardized `y`; the posterior is reported on the raw scale.
    pub fn fit_standardized(x: Vec<Vec<f64>>, y: Vec<f64>, eta: Hyperparams) -> Result<Self, GpError> {
        let norm = Standardization::from_values(&y);
        Self::fit_with(x, y, eta, norm)
    }

    pub fn fit_with(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        eta: Hyperparams,
        norm: Standardization,
    ) -> Result<Self, GpError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(GpError::Dimension(format!("{} points, {} values", x.len(), y.len())));
        }
        let d = x[0].len();
        if x.iter().any(|p| p.len() != d) {
            return Err(GpError::Dimension("points of unequal dimension".into()));
        }
        let k = gram_matrix(&x, &eta);
        let l = if eta.eps == 0.0 && exact_duplicates(&x) {
            // Repeated inputs without noise: the Gram matrix is exactly singular.
            return Err(GpError::Factorization("duplicate points with zero noise".into()));
        } else {
            cholesky_with_jitter(&k)?.0
        };
        let l_inv = lower_inverse(&l)?;
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| norm.apply(*v)));
        let j1 = &l_inv * ys;
        Ok(Self {
            x,
            y,
            eta,
            norm,
            l,
            l_inv,
            j1,
        })
    }

    /// Adds one observation with the hyperparameters and standardization frozen.
    pub fn append(&mut self, point: Vec<f64>, value: f64) -> Result<(), GpError> {
        if point.len() != self.dim() {
            return Err(GpError::Dimension(format!(
                "point of dimension {} for a {}-dimensional state",
                point.len(),
                self.dim()
            )));
        }
        let k_vec = DVector::from_iterator(
            self.len(),
            self.x.iter().map(|xi| matern_kernel(&self.eta, xi, &point, false)),
        );
        let k_scalar = matern_kernel(&self.eta, &point, &point, true);
        let (l, l_inv) = chol_append(&self.l, &self.l_inv, &k_vec, k_scalar)?;
        let n = self.len();
        let last = l_inv.row(n);
        let mut acc = last[n] * self.norm.apply(value);
        for (j, yj) in self.y.iter().enumerate() {
            acc += last[j] * self.norm.apply(*yj);
        }
        let mut j1 = self.j1.clone().insert_row(n, 0.0);
        j1[n] = acc;
        self.l = l;
        self.l_inv = l_inv;
        self.j1 = j1;
        self.x.push(point);
        self.y.push(value);
        Ok(())
    }

    /// Full refit of the current data with new hyperparameters and
    /// standardization recomputed from `y`.
    pub fn refit(&self, eta: Hyperparams) -> Result<Self, GpError> {
        Self::fit_standardized(self.x.clone(), self.y.clone(), eta)
    }

    pub fn posterior(&self, theta: &[f64]) -> Posterior {
        let k = DVector::from_iterator(
            self.len(),
            self.x.iter().map(|xi| matern_kernel(&self.eta, xi, theta, false)),
        );
        let v = &self.l_inv * k;
        let mean = v.dot(&self.j1);
        let var = (self.eta.alpha - v.norm_squared()).max(0.0);
        Posterior {
            mean: self.norm.shift + self.norm.scale * mean,
            variance: self.norm.scale * self.norm.scale * var,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn eta(&self) -> Hyperparams {
        self.eta
    }

    pub fn standardization(&self) -> Standardization {
        self.norm
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn l_inv(&self) -> &DMatrix<f64> {
        &self.l_inv
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            points: self.x.clone(),
            y: self.y.clone(),
            eta: self.eta,
            standardization: self.norm,
        }
    }

    pub fn from_snapshot(s: GpSnapshot) -> Result<Self, GpError> {
        Self::fit_with(s.points, s.y, s.eta, s.standardization)
    }

    pub fn to_json(&self) -> Result<String, GpError> {
        Ok(serde_json::to_string_pretty(&self.snapshot())?)
    }

    pub fn from_json(text: &str) -> Result<Self, GpError> {
        Self::from_snapshot(serde_json::from_str(text)?)
    }
}

pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &[f64], eta: &Hyperparams) -> Result<f64, GpError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(GpError::Dimension(format!("{} points, {} values", x.len(), y.len())));
    }
    let (l, _) = cholesky_with_jitter(&gram_matrix(x, eta))?;
    let z = l
        .solve_lower_triangular(&DVector::from_column_slice(y))
        .ok_or_else(|| GpError::Factorization("singular triangular factor".into()))?;
    let log_det_half: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    let n = y.len() as f64;
    Ok(-0.5 * z.norm_squared() - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

struct NegLml<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    log_box: [(f64, f64); 3],
}

impl NegLml<'_> {
    fn eta_at(&self, p: &[f64]) -> Hyperparams {
        let v: Vec<f64> = p
            .iter()
            .zip(&self.log_box)
            .map(|(u, (lo, hi))| u.clamp(*lo, *hi).exp())
            .collect();
        Hyperparams {
            alpha: v[0],
            beta: v[1],
            eps: v[2],
        }
    }

    fn value(&self, p: &[f64]) -> f64 {
        match log_marginal_likelihood(self.x, self.y, &self.eta_at(p)) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    }
}

impl CostFunction for NegLml<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(self.value(p))
    }
}

/// Best-of-restarts maximizer of the log marginal likelihood, searched by
/// Nelder–Mead in log space. The first restart starts from the default
/// hyperparameters (clamped to the bounds), the rest log-uniformly.
pub fn tune_hyperparameters<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[f64],
    bounds: &HyperBounds,
    restarts: usize,
    rng: &mut R,
) -> Result<Hyperparams, GpError> {
    bounds.validate()?;
    let log_box = bounds.log_box();
    let problem = NegLml { x, y, log_box };
    let d = Hyperparams::default();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..restarts.max(1) {
        let start: Vec<f64> = if r == 0 {
            [d.alpha, d.beta, d.eps]
                .iter()
                .zip(&log_box)
                .map(|(v, (lo, hi))| v.ln().clamp(*lo, *hi))
                .collect()
        } else {
            log_box.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
        };
        let start_cost = problem.value(&start);
        if start_cost.is_finite() && best.as_ref().is_none_or(|(_, c)| start_cost < *c) {
            best = Some((start.clone(), start_cost));
        }
        let mut simplex = vec![start.clone()];
        for k in 0..3 {
            let mut v = start.clone();
            let (lo, hi) = log_box[k];
            let step = 0.1 * (hi - lo);
            v[k] = if v[k] + step <= hi { v[k] + step } else { v[k] - step };
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-8)
            .map_err(|e| GpError::Hyperparams(e.to_string()))?;
        let Ok(res) = Executor::new(NegLml { x, y, log_box }, solver)
            .configure(|s| s.max_iters(400))
            .run()
        else {
            continue;
        };
        if let Some(p) = res.state.best_param {
            let cost = problem.value(&p);
            if cost.is_finite() && best.as_ref().is_none_or(|(_, c)| cost < *c) {
                best = Some((p, cost));
            }
        }
    }
    match best {
        Some((p, _)) => Ok(problem.eta_at(&p)),
        None => Err(GpError::Factorization(
            "every restart failed to factor the gram matrix".into(),
        )),
    }
}
