//! Aggregate model of a price-responsive flexible load.
//!
//! A fleet is reduced to three kinds of components sharing one time grid:
//! a fixed (price-insensitive) power profile, adjustable components with
//! power and ramp limits, and storage components with power limits, energy
//! limits and a per-period retention factor. All power values are in kW,
//! energies in kWh and period lengths in hours.
//!
//! Storage energy follows `e[t] = sigma * e[t-1] + p[t] * dt`, which unrolls
//! to `E = gamma * e0 + Upsilon * P * dt` with the propagators built by
//! [`build_storage_propagators`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("theta layout does not match template: {0}")]
    LayoutMismatch(String),
    #[error("theta[{index}] = {value} lies outside the box [{lo}, {hi}]")]
    OutOfBox {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid model: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Number of periods and their length in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub periods: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(periods: usize, dt: f64) -> Result<Self, ModelError> {
        if periods == 0 {
            return Err(ModelError::Domain("a time grid needs at least one period".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ModelError::Domain(format!("period length must be positive, got {dt}")));
        }
        Ok(Self { periods, dt })
    }

    /// 24 one-hour periods.
    pub fn hourly_day() -> Self {
        Self { periods: 24, dt: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    pub p_lo: f64,
    pub p_hi: f64,
    pub e_lo: f64,
    pub e_hi: f64,
    pub e0: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustableParams {
    pub p_lo: f64,
    pub p_hi: f64,
    /// Ramp limits in kW/h.
    pub r_lo: f64,
    pub r_hi: f64,
    /// Inner-cost weight in $/kW². Zero disables the quadratic term.
    #[serde(default)]
    pub c: f64,
    /// Expected power profile the inner cost pulls towards.
    pub p_expect: Vec<f64>,
}

impl AdjustableParams {
    /// Component without inner cost; the expected profile sits at mid-range.
    pub fn new(p_lo: f64, p_hi: f64, r_lo: f64, r_hi: f64, periods: usize) -> Self {
        Self {
            p_lo,
            p_hi,
            r_lo,
            r_hi,
            c: 0.0,
            p_expect: vec![0.5 * (p_lo + p_hi); periods],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateModel {
    pub grid: TimeGrid,
    pub fixed: Vec<f64>,
    #[serde(default)]
    pub adjustables: Vec<AdjustableParams>,
    #[serde(default)]
    pub storages: Vec<StorageParams>,
}

impl AggregateModel {
    pub fn periods(&self) -> usize {
        self.grid.periods
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Copy of the model with its fixed profile replaced.
    pub fn with_fixed(&self, fixed: Vec<f64>) -> Self {
        Self {
            fixed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

/// Outcome of [`validate_model`]. `ok` is true exactly when `violations` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            ok: violations.is_empty(),
            violations,
        }
    }

    pub fn into_result(self) -> Result<(), ModelError> {
        if self.ok {
            Ok(())
        } else {
            Err(ModelError::Invalid(self))
        }
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.ok {
            return write!(f, "ok");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, path: String, message: impl Into<String>) {
        self.violations.push(Violation {
            path,
            message: message.into(),
        });
    }

    fn finite(&mut self, path: String, value: f64) -> bool {
        if value.is_finite() {
            true
        } else {
            self.push(path, format!("must be finite, got {value}"));
            false
        }
    }

    fn ordered(&mut self, path: String, lo: f64, hi: f64, lo_name: &str, hi_name: &str) {
        if lo > hi {
            self.push(path, format!("{lo_name} = {lo} exceeds {hi_name} = {hi}"));
        }
    }
}

/// Checks every structural and physical invariant of the model.
pub fn validate_model(model: &AggregateModel) -> ValidationReport {
    let mut ck = Checker {
        violations: Vec::new(),
    };
    let periods = model.grid.periods;
    if periods == 0 {
        ck.push("grid.periods".into(), "must be at least 1");
    }
    if !(model.grid.dt > 0.0 && model.grid.dt.is_finite()) {
        ck.push("grid.dt".into(), format!("must be positive and finite, got {}", model.grid.dt));
    }
    if model.fixed.len() != periods {
        ck.push(
            "fixed".into(),
            format!("length {} does not match {} periods", model.fixed.len(), periods),
        );
    }
    for (t, &v) in model.fixed.iter().enumerate() {
        ck.finite(format!("fixed[{t}]"), v);
    }

    for (i, s) in model.storages.iter().enumerate() {
        let p = |name: &str| format!("storages[{i}].{name}");
        let all_finite = [
            ("p_lo", s.p_lo),
            ("p_hi", s.p_hi),
            ("e_lo", s.e_lo),
            ("e_hi", s.e_hi),
            ("e0", s.e0),
            ("sigma", s.sigma),
        ]
        .iter()
        .fold(true, |acc, &(name, v)| ck.finite(p(name), v) && acc);
        if !all_finite {
            continue;
        }
        ck.ordered(p("p_lo"), s.p_lo, s.p_hi, "p_lo", "p_hi");
        ck.ordered(p("e_lo"), s.e_lo, s.e_hi, "e_lo", "e_hi");
        if s.e0 < s.e_lo || s.e0 > s.e_hi {
            ck.push(
                p("e0"),
                format!("initial energy {} outside [{}, {}]", s.e0, s.e_lo, s.e_hi),
            );
        }
        if !(s.sigma > 0.0 && s.sigma <= 1.0) {
            ck.push(p("sigma"), format!("efficiency {} outside (0, 1]", s.sigma));
        }
    }

    for (j, a) in model.adjustables.iter().enumerate() {
        let p = |name: &str| format!("adjustables[{j}].{name}");
        let all_finite = [
            ("p_lo", a.p_lo),
            ("p_hi", a.p_hi),
            ("r_lo", a.r_lo),
            ("r_hi", a.r_hi),
            ("c", a.c),
        ]
        .iter()
        .fold(true, |acc, &(name, v)| ck.finite(p(name), v) && acc);
        if all_finite {
            ck.ordered(p("p_lo"), a.p_lo, a.p_hi, "p_lo", "p_hi");
            ck.ordered(p("r_lo"), a.r_lo, a.r_hi, "r_lo", "r_hi");
            if a.c < 0.0 {
                ck.push(p("c"), format!("inner-cost weight {} is negative", a.c));
            }
        }
        if a.p_expect.len() != periods {
            ck.push(
                p("p_expect"),
                format!("length {} does not match {} periods", a.p_expect.len(), periods),
            );
        } else {
            for (t, &v) in a.p_expect.iter().enumerate() {
                ck.finite(format!("adjustables[{j}].p_expect[{t}]"), v);
            }
        }
    }

    ValidationReport::from_violations(ck.violations)
}

/// Returns `gamma` with `gamma[t] = sigma^(t+1)` and the lower-triangular
/// `upsilon` with `upsilon[t][k] = sigma^(t-k)` for `k <= t`.
pub fn build_storage_propagators(
    sigma: f64,
    periods: usize,
) -> Result<(DVector<f64>, DMatrix<f64>), ModelError> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(ModelError::Domain(format!("efficiency {sigma} outside (0, 1]")));
    }
    if periods == 0 {
        return Err(ModelError::Domain("propagators need at least one period".into()));
    }
    // powers[k] = sigma^k
    let mut powers = Vec::with_capacity(periods + 1);
    let mut acc = 1.0;
    for _ in 0..=periods {
        powers.push(acc);
        acc *= sigma;
    }
    let gamma = DVector::from_fn(periods, |t, _| powers[t + 1]);
    let upsilon = DMatrix::from_fn(periods, periods, |t, k| if k <= t { powers[t - k] } else { 0.0 });
    Ok((gamma, upsilon))
}

/// Energy trajectory of a storage under the power profile `p_str`.
pub fn energy_trajectory(s: &StorageParams, p_str: &[f64], dt: f64) -> Vec<f64> {
    let mut e = s.e0;
    p_str
        .iter()
        .map(|&p| {
            e = s.sigma * e + p * dt;
            e
        })
        .collect()
}

/// Same as [`energy_trajectory`] but checks the profile length against `periods`.
pub fn energy_trajectory_checked(
    s: &StorageParams,
    p_str: &[f64],
    dt: f64,
    periods: usize,
) -> Result<Vec<f64>, ModelError> {
    if p_str.len() != periods {
        return Err(ModelError::LengthMismatch {
            expected: periods,
            got: p_str.len(),
        });
    }
    Ok(energy_trajectory(s, p_str, dt))
}

/// First-difference matrix of shape `(periods - 1) x periods`; `(M p)[k] = p[k+1] - p[k]`.
pub fn build_difference_matrix(periods: usize) -> Result<DMatrix<f64>, ModelError> {
    if periods < 2 {
        return Err(ModelError::Domain(format!(
            "difference matrix needs at least 2 periods, got {periods}"
        )));
    }
    let mut m = DMatrix::zeros(periods - 1, periods);
    for k in 0..periods - 1 {
        m[(k, k)] = -1.0;
        m[(k, k + 1)] = 1.0;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn storage(sigma: f64, e_lo: f64, e_hi: f64, e0: f64) -> StorageParams {
        StorageParams {
            p_lo: -1.0,
            p_hi: 1.0,
            e_lo,
            e_hi,
            e0,
            sigma,
        }
    }

    fn model_with(s: StorageParams) -> AggregateModel {
        AggregateModel {
            grid: TimeGrid::new(3, 1.0).unwrap(),
            fixed: vec![0.0; 3],
            adjustables: vec![],
            storages: vec![s],
        }
    }

    #[test]
    fn well_formed_model_passes() {
        let report = validate_model(&model_with(storage(0.9, 0.0, 10.0, 5.0)));
        assert!(report.ok);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn efficiency_above_one_is_flagged() {
        let report = validate_model(&model_with(storage(1.2, 0.0, 10.0, 5.0)));
        assert!(!report.ok);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "storages[0].sigma");
    }

    #[test]
    fn initial_energy_below_floor_is_flagged() {
        let report = validate_model(&model_with(storage(0.9, 6.0, 10.0, 5.0)));
        assert!(!report.ok);
        assert_eq!(report.violations[0].path, "storages[0].e0");
    }

    #[test]
    fn adjustable_and_length_violations_have_paths() {
        let mut m = model_with(storage(0.9, 0.0, 10.0, 5.0));
        m.fixed.pop();
        m.adjustables.push(AdjustableParams {
            p_lo: 2.0,
            p_hi: 1.0,
            r_lo: -1.0,
            r_hi: 1.0,
            c: -1.0,
            p_expect: vec![0.0; 2],
        });
        let paths: Vec<_> = validate_model(&m).violations.into_iter().map(|v| v.path).collect();
        assert_eq!(
            paths,
            vec![
                "fixed",
                "adjustables[0].p_lo",
                "adjustables[0].c",
                "adjustables[0].p_expect"
            ]
        );
    }

    #[test]
    fn lossless_propagators_are_all_ones() {
        let (g, u) = build_storage_propagators(1.0, 3).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 1.0, 1.0]);
        for t in 0..3 {
            for k in 0..3 {
                assert_eq!(u[(t, k)], if k <= t { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn half_efficiency_propagators() {
        let (g, u) = build_storage_propagators(0.5, 3).unwrap();
        assert_eq!(g.as_slice(), &[0.5, 0.25, 0.125]);
        let rows = [[1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.25, 0.5, 1.0]];
        for (t, row) in rows.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                assert_eq!(u[(t, k)], v);
            }
        }
    }

    #[test]
    fn propagator_domain_errors() {
        assert!(build_storage_propagators(0.0, 3).is_err());
        assert!(build_storage_propagators(1.01, 3).is_err());
        assert!(build_storage_propagators(0.9, 0).is_err());
    }

    #[test]
    fn propagator_form_matches_recursion() {
        let s = storage(0.9, 0.0, 20.0, 10.0);
        let p = [2.0, -1.0];
        let rec = energy_trajectory(&s, &p, 1.0);
        assert_relative_eq!(rec[0], 11.0, max_relative = 1e-12);
        assert_relative_eq!(rec[1], 8.9, max_relative = 1e-12);
        let (g, u) = build_storage_propagators(0.9, 2).unwrap();
        let closed = &g * s.e0 + &u * DVector::from_column_slice(&p);
        assert_relative_eq!(closed[0], 11.0, max_relative = 1e-12);
        assert_relative_eq!(closed[1], 8.9, max_relative = 1e-12);
    }

    #[test]
    fn energy_trajectory_examples() {
        assert_eq!(energy_trajectory(&storage(1.0, -5.0, 5.0, 0.0), &[1.0, -1.0], 1.0), vec![1.0, 0.0]);
        let e = energy_trajectory(&storage(0.8, 0.0, 10.0, 5.0), &[0.0; 3], 1.0);
        for (a, b) in e.iter().zip([4.0, 3.2, 2.56]) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
        assert!(energy_trajectory_checked(&storage(0.8, 0.0, 10.0, 5.0), &[0.0; 2], 1.0, 3).is_err());
    }

    #[test]
    fn difference_matrix_examples() {
        let m = build_difference_matrix(3).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]));
        let m2 = build_difference_matrix(2).unwrap();
        assert_eq!((&m2 * DVector::from_vec(vec![4.0, 7.0]))[0], 3.0);
        let m5 = build_difference_matrix(5).unwrap();
        assert!((&m5 * DVector::from_element(5, 3.7)).iter().all(|&v| v == 0.0));
        assert!(build_difference_matrix(1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = model_with(storage(0.9, 0.0, 10.0, 5.0));
        let back = AggregateModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn upsilon_structure(sigma in 0.01f64..=1.0, periods in 1usize..30) {
                let (g, u) = build_storage_propagators(sigma, periods).unwrap();
                for t in 0..periods {
                    prop_assert_eq!(u[(t, t)], 1.0);
                    for k in t + 1..periods {
                        prop_assert_eq!(u[(t, k)], 0.0);
                    }
                    if t + 1 < periods {
                        prop_assert!((g[t] - u[(t + 1, 0)]).abs() <= 1e-15 * g[t].abs().max(1e-300));
                    }
                }
            }

            #[test]
            fn recursion_matches_closed_form(
                sigma in 0.5f64..=1.0,
                e0 in 0.0f64..50.0,
                dt in 0.25f64..2.0,
                p in proptest::collection::vec(-10.0f64..10.0, 1..30),
            ) {
                let s = StorageParams { p_lo: -10.0, p_hi: 10.0, e_lo: -1e6, e_hi: 1e6, e0, sigma };
                let rec = energy_trajectory(&s, &p, dt);
                let (g, u) = build_storage_propagators(sigma, p.len()).unwrap();
                let closed = &g * e0 + &u * DVector::from_column_slice(&p) * dt;
                let scale = p.iter().map(|v| v.abs() * dt).sum::<f64>() + e0 + 1.0;
                for t in 0..p.len() {
                    prop_assert!((rec[t] - closed[t]).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}
