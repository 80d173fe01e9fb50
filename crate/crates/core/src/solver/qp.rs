//! Primal active-set method for convex quadratic programs.

use nalgebra::{DMatrix, DVector};

use super::{simplex, Program, Solution, SolveOptions, SolverError, Status, JITTER_LADDER};

struct Constraint {
    a: DVector<f64>,
    b: f64,
    equality: bool,
}

/// Equalities first, then general inequalities, then finite bounds in
/// variable order (upper before lower). This order fixes every tie-break.
fn constraint_list(p: &Program) -> Vec<Constraint> {
    let n = p.n();
    let mut out = Vec::new();
    for i in 0..p.a_eq.nrows() {
        out.push(Constraint {
            a: p.a_eq.row(i).transpose(),
            b: p.b_eq[i],
            equality: true,
        });
    }
    for i in 0..p.a_ineq.nrows() {
        out.push(Constraint {
            a: p.a_ineq.row(i).transpose(),
            b: p.b_ineq[i],
            equality: false,
        });
    }
    for j in 0..n {
        if p.ub[j].is_finite() {
            let mut a = DVector::zeros(n);
            a[j] = 1.0;
            out.push(Constraint {
                a,
                b: p.ub[j],
                equality: false,
            });
        }
        if p.lb[j].is_finite() {
            let mut a = DVector::zeros(n);
            a[j] = -1.0;
            out.push(Constraint {
                a,
                b: -p.lb[j],
                equality: false,
            });
        }
    }
    out
}

/// Orthonormal basis of the working-set normals, for independence checks.
struct Span {
    basis: Vec<DVector<f64>>,
}

impl Span {
    fn try_add(&mut self, a: &DVector<f64>) -> bool {
        let norm = a.norm();
        if norm == 0.0 {
            return false;
        }
        let mut r = a.clone();
        for q in &self.basis {
            let d = q.dot(&r);
            r.axpy(-d, q, 1.0);
        }
        let rn = r.norm();
        if rn <= 1e-10 * norm {
            return false;
        }
        self.basis.push(r / rn);
        true
    }

    fn rebuild(cons: &[Constraint], working: &[usize]) -> Self {
        let mut s = Span { basis: Vec::new() };
        for &i in working {
            s.try_add(&cons[i].a);
        }
        s
    }
}

/// Solves the equality-constrained step problem
/// `min ½ pᵀQp + gᵀp  s.t.  a_i·p = 0 (i ∈ W)` and returns the step with the
/// working-set multipliers.
fn kkt_step(
    q: &DMatrix<f64>,
    g: &DVector<f64>,
    cons: &[Constraint],
    working: &[usize],
) -> Result<(DVector<f64>, DVector<f64>, f64), SolverError> {
    let n = q.nrows();
    let w = working.len();
    let scale = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut rhs = DVector::zeros(n + w);
    rhs.rows_mut(0, n).copy_from(&(-g));
    for &jitter in JITTER_LADDER.iter().chain(std::iter::once(&1e-6)) {
        let mut k = DMatrix::zeros(n + w, n + w);
        k.view_mut((0, 0), (n, n)).copy_from(q);
        for i in 0..n {
            k[(i, i)] += jitter * scale;
        }
        for (r, &ci) in working.iter().enumerate() {
            for j in 0..n {
                k[(n + r, j)] = cons[ci].a[j];
                k[(j, n + r)] = cons[ci].a[j];
            }
        }
        let lu = k.lu();
        let u = lu.u();
        let diag = u.diagonal().map(f64::abs);
        if diag.min() <= 1e-12 * diag.max() {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else {
            continue;
        };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let p = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, w).into_owned();
        return Ok((p, lambda, jitter));
    }
    Err(SolverError::Numerical(
        "KKT system singular after the full jitter ladder".into(),
    ))
}

pub(super) fn solve_qp(
    p: &Program,
    q: &DMatrix<f64>,
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    let n = p.n();
    let mut feas = p.clone();
    feas.q = None;
    feas.c = DVector::zeros(n);
    let start = simplex::solve_lp(&feas, opts)?;
    match start.status {
        Status::Optimal => {}
        other => return Ok(Solution::without_point(other)),
    }
    let mut x = start.x;
    let cons = constraint_list(p);

    let active_tol = |c: &Constraint, x: &DVector<f64>| {
        (c.a.dot(x) - c.b).abs() <= 1e-9 * (1.0 + c.b.abs())
    };
    let mut working: Vec<usize> = Vec::new();
    let mut span = Span { basis: Vec::new() };
    for (i, c) in cons.iter().enumerate() {
        if working.len() == n {
            break;
        }
        if (c.equality || active_tol(c, &x)) && span.try_add(&c.a) {
            working.push(i);
        }
    }

    let x_scale = |x: &DVector<f64>| x.amax().max(1.0);
    for _ in 0..opts.max_iter {
        let g = q * &x + &p.c;
        let (step, lambda, jitter) = kkt_step(q, &g, &cons, &working)?;
        if step.amax() <= 1e-12 * x_scale(&x) {
            // Stationary on the working set: check inequality multipliers.
            let tol = opts.tol_opt * g.amax().max(1.0);
            let mut worst: Option<(usize, f64)> = None;
            for (r, &ci) in working.iter().enumerate() {
                if cons[ci].equality {
                    continue;
                }
                if lambda[r] < -tol && worst.is_none_or(|(_, v)| lambda[r] < v) {
                    worst = Some((r, lambda[r]));
                }
            }
            match worst {
                None => {
                    let objective = p.objective_at(&x);
                    return Ok(Solution {
                        x,
                        objective,
                        status: Status::Optimal,
                    });
                }
                Some((r, _)) => {
                    working.remove(r);
                    span = Span::rebuild(&cons, &working);
                }
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        let pnorm = step.amax();
        for (i, c) in cons.iter().enumerate() {
            if c.equality || working.contains(&i) {
                continue;
            }
            let ap = c.a.dot(&step);
            if ap <= 1e-14 * pnorm * c.a.amax() {
                continue;
            }
            let slack = (c.b - c.a.dot(&x)).max(0.0);
            let t = slack / ap;
            if t < alpha {
                alpha = t;
                blocking = Some(i);
            }
        }
        if blocking.is_none() && jitter > 0.0 && pnorm > 1e10 * x_scale(&x) {
            return Ok(Solution::without_point(Status::Unbounded));
        }
        x.axpy(alpha, &step, 1.0);
        if let Some(i) = blocking {
            if span.try_add(&cons[i].a) {
                working.push(i);
            }
        }
    }
    Err(SolverError::Numerical(format!(
        "active-set method did not converge within {} iterations",
        opts.max_iter
    )))
}
