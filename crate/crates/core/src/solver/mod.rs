//! Dense solver for the small linear and convex quadratic programs built by
//! the forward response models.
//!
//! Programs have the form
//!
//! ```text
//! minimize    ½ xᵀ Q x + cᵀ x
//! subject to  A_ineq x ≤ b_ineq,  A_eq x = b_eq,  lb ≤ x ≤ ub
//! ```
//!
//! With `Q` absent the two-phase tableau simplex in [`simplex`] is used. Its
//! entering variable is the lowest-index column with a negative reduced cost
//! (Bland's rule), so the pivot sequence depends on the cost only through
//! signs and the returned vertex is unchanged when the cost is scaled by a
//! positive constant. With `Q` present a primal active-set method in [`qp`]
//! starts from a simplex vertex.

mod qp;
mod simplex;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("inconsistent program dimensions: {0}")]
    Dimension(String),
    #[error("quadratic cost is not positive semidefinite")]
    NotPsd,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Optimal point; empty unless `status` is `Optimal`.
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: Status,
}

impl Solution {
    fn without_point(status: Status) -> Self {
        Self {
            x: DVector::zeros(0),
            objective: f64::NAN,
            status,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_opt: 1e-8,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Program {
    pub q: Option<DMatrix<f64>>,
    pub c: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl Program {
    /// Unconstrained linear program over `n` free variables with zero cost.
    pub fn new(n: usize) -> Self {
        Self {
            q: None,
            c: DVector::zeros(n),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn objective_at(&self, x: &DVector<f64>) -> f64 {
        let lin = self.c.dot(x);
        match &self.q {
            Some(q) => 0.5 * x.dot(&(q * x)) + lin,
            None => lin,
        }
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.a_ineq.nrows() > 0 {
            let r = &self.a_ineq * x - &self.b_ineq;
            worst = r.iter().fold(worst, |w, &v| w.max(v));
        }
        if self.a_eq.nrows() > 0 {
            let r = &self.a_eq * x - &self.b_eq;
            worst = r.iter().fold(worst, |w, &v| w.max(v.abs()));
        }
        for j in 0..self.n() {
            worst = worst.max(self.lb[j] - x[j]).max(x[j] - self.ub[j]);
        }
        worst
    }

    fn check_dimensions(&self) -> Result<(), SolverError> {
        let n = self.n();
        let dim = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(SolverError::Dimension(format!("{what}: expected {want}, got {got}")))
            }
        };
        dim("a_ineq columns", self.a_ineq.ncols(), n)?;
        dim("b_ineq length", self.b_ineq.len(), self.a_ineq.nrows())?;
        dim("a_eq columns", self.a_eq.ncols(), n)?;
        dim("b_eq length", self.b_eq.len(), self.a_eq.nrows())?;
        dim("lb length", self.lb.len(), n)?;
        dim("ub length", self.ub.len(), n)?;
        if let Some(q) = &self.q {
            dim("q rows", q.nrows(), n)?;
            dim("q columns", q.ncols(), n)?;
        }
        let finite = self.c.iter().all(|v| v.is_finite())
            && self.a_ineq.iter().all(|v| v.is_finite())
            && self.b_ineq.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.lb.iter().all(|v| *v != f64::INFINITY && !v.is_nan())
            && self.ub.iter().all(|v| *v != f64::NEG_INFINITY && !v.is_nan())
            && self.q.as_ref().is_none_or(|q| q.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(SolverError::Dimension("non-finite program data".into()));
        }
        Ok(())
    }
}

/// Incremental construction of a [`Program`] row by row.
#[derive(Debug, Clone)]
pub struct ProgramBuilder {
    n: usize,
    q: Option<DMatrix<f64>>,
    c: DVector<f64>,
    ineq: Vec<(Vec<f64>, f64)>,
    eq: Vec<(Vec<f64>, f64)>,
    lb: DVector<f64>,
    ub: DVector<f64>,
}

impl ProgramBuilder {
    pub fn new(n: usize) -> Self {
        let p = Program::new(n);
        Self {
            n,
            q: None,
            c: p.c,
            ineq: Vec::new(),
            eq: Vec::new(),
            lb: p.lb,
            ub: p.ub,
        }
    }

    pub fn cost(mut self, c: DVector<f64>) -> Self {
        self.c = c;
        self
    }

    pub fn quadratic(mut self, q: DMatrix<f64>) -> Self {
        self.q = Some(q);
        self
    }

    pub fn bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn leq(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq.push((row, rhs));
    }

    pub fn geq(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq.push((row.into_iter().map(|v| -v).collect(), -rhs));
    }

    pub fn eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq.push((row, rhs));
    }

    pub fn build(self) -> Result<Program, SolverError> {
        let n = self.n;
        let stack = |rows: &[(Vec<f64>, f64)]| -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
            if let Some((r, _)) = rows.iter().find(|(r, _)| r.len() != n) {
                return Err(SolverError::Dimension(format!(
                    "constraint row of length {} in a program with {n} variables",
                    r.len()
                )));
            }
            let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
            let b = DVector::from_iterator(rows.len(), rows.iter().map(|(_, b)| *b));
            Ok((a, b))
        };
        let (a_ineq, b_ineq) = stack(&self.ineq)?;
        let (a_eq, b_eq) = stack(&self.eq)?;
        Ok(Program {
            q: self.q,
            c: self.c,
            a_ineq,
            b_ineq,
            a_eq,
            b_eq,
            lb: self.lb,
            ub: self.ub,
        })
    }
}

/// Jitter ladder applied to diagonals of near-singular PSD factorizations.
pub(crate) const JITTER_LADDER: [f64; 7] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7];

fn check_psd(q: &DMatrix<f64>) -> Result<(), SolverError> {
    let n = q.nrows();
    let scale = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (q[(i, j)] - q[(j, i)]).abs() > 1e-10 * scale {
                return Err(SolverError::NotPsd);
            }
        }
    }
    for &jitter in JITTER_LADDER.iter().chain(std::iter::once(&1e-6)) {
        let shifted = q + DMatrix::identity(n, n) * (jitter * scale);
        if shifted.cholesky().is_some() {
            return Ok(());
        }
    }
    Err(SolverError::NotPsd)
}

/// Solves `p`. Infeasible and unbounded programs are reported through
/// [`Solution::status`]; errors are reserved for malformed input and
/// numerical breakdown.
pub fn solve(p: &Program, opts: &SolveOptions) -> Result<Solution, SolverError> {
    p.check_dimensions()?;
    let quadratic = p.q.as_ref().filter(|q| q.iter().any(|&v| v != 0.0));
    match quadratic {
        None => simplex::solve_lp(p, opts),
        Some(q) => {
            check_psd(q)?;
            qp::solve_qp(p, q, opts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn bound_attained_lp() {
        let p = ProgramBuilder::new(1)
            .cost(dv(&[1.0]))
            .bounds(dv(&[0.0]), dv(&[1.0]))
            .build()
            .unwrap();
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!(s.x[0], 0.0);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn two_variable_vertex_lp() {
        let mut b = ProgramBuilder::new(2)
            .cost(dv(&[-1.0, -2.0]))
            .bounds(dv(&[0.0, 0.0]), dv(&[f64::INFINITY, f64::INFINITY]));
        b.leq(vec![1.0, 1.0], 1.0);
        let s = solve(&b.build().unwrap(), &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_abs_diff_eq!(s.x[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_qp_minimum() {
        let p = ProgramBuilder::new(1)
            .quadratic(DMatrix::from_element(1, 1, 2.0))
            .cost(dv(&[-2.0]))
            .bounds(dv(&[0.0]), dv(&[3.0]))
            .build()
            .unwrap();
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.objective, -1.0, epsilon = 1e-10);
    }

    #[test]
    fn infeasible_lp() {
        let mut b = ProgramBuilder::new(1).bounds(dv(&[0.0]), dv(&[1.0]));
        b.geq(vec![1.0], 2.0);
        let s = solve(&b.build().unwrap(), &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Infeasible);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let p = ProgramBuilder::new(1).bounds(dv(&[2.0]), dv(&[1.0])).build().unwrap();
        assert_eq!(solve(&p, &SolveOptions::default()).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn unbounded_lp() {
        let p = ProgramBuilder::new(2)
            .cost(dv(&[-1.0, 0.0]))
            .bounds(dv(&[0.0, 0.0]), dv(&[f64::INFINITY, 1.0]))
            .build()
            .unwrap();
        assert_eq!(solve(&p, &SolveOptions::default()).unwrap().status, Status::Unbounded);
    }

    #[test]
    fn free_and_mirrored_variables() {
        // min x0 - x1 with x0 free but x0 >= -3 via a row, x1 <= 2 only.
        let mut b = ProgramBuilder::new(2).cost(dv(&[1.0, -1.0])).bounds(
            dv(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            dv(&[f64::INFINITY, 2.0]),
        );
        b.geq(vec![1.0, 0.0], -3.0);
        let s = solve(&b.build().unwrap(), &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_abs_diff_eq!(s.x[0], -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_constrained_lp() {
        let mut b = ProgramBuilder::new(3)
            .cost(dv(&[1.0, 2.0, 3.0]))
            .bounds(dv(&[0.0; 3]), dv(&[1.0; 3]));
        b.eq(vec![1.0, 1.0, 1.0], 2.0);
        let s = solve(&b.build().unwrap(), &SolveOptions::default()).unwrap();
        assert_abs_diff_eq!(s.objective, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut b = ProgramBuilder::new(2)
            .cost(dv(&[1.0, 1.0]))
            .bounds(dv(&[0.0; 2]), dv(&[5.0; 2]));
        b.eq(vec![1.0, -1.0], 1.0);
        b.eq(vec![2.0, -2.0], 2.0);
        let s = solve(&b.build().unwrap(), &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn indefinite_quadratic_is_rejected() {
        let p = ProgramBuilder::new(2)
            .quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
            .bounds(dv(&[0.0; 2]), dv(&[1.0; 2]))
            .build()
            .unwrap();
        assert!(matches!(solve(&p, &SolveOptions::default()), Err(SolverError::NotPsd)));
    }

    #[test]
    fn dimension_errors() {
        let mut p = Program::new(2);
        p.lb = dv(&[0.0]);
        assert!(matches!(solve(&p, &SolveOptions::default()), Err(SolverError::Dimension(_))));
        let mut b = ProgramBuilder::new(2);
        b.leq(vec![1.0], 0.0);
        assert!(b.build().is_err());
    }

    #[test]
    fn constrained_qp_projects_onto_face() {
        // min (x0-2)² + (x1-2)²  s.t. x0 + x1 ≤ 2 → (1, 1)
        let mut b = ProgramBuilder::new(2)
            .quadratic(DMatrix::identity(2, 2) * 2.0)
            .cost(dv(&[-4.0, -4.0]));
        b.leq(vec![1.0, 1.0], 2.0);
        let s = solve(&b.build().unwrap(), &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn semidefinite_qp_with_linear_direction() {
        // min x0² - x1 on the unit box: x0 = 0, x1 = 1.
        let mut q = DMatrix::zeros(2, 2);
        q[(0, 0)] = 2.0;
        let p = ProgramBuilder::new(2)
            .quadratic(q)
            .cost(dv(&[0.0, -1.0]))
            .bounds(dv(&[-1.0, 0.0]), dv(&[1.0, 1.0]))
            .build()
            .unwrap();
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_abs_diff_eq!(s.x[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn infeasible_qp() {
        let mut b = ProgramBuilder::new(1)
            .quadratic(DMatrix::from_element(1, 1, 1.0))
            .bounds(dv(&[0.0]), dv(&[1.0]));
        b.geq(vec![1.0], 3.0);
        assert_eq!(solve(&b.build().unwrap(), &SolveOptions::default()).unwrap().status, Status::Infeasible);
    }
}
