//! Two-phase dense tableau simplex with Bland's anti-cycling rule.

use nalgebra::DVector;

use super::{Program, Solution, SolveOptions, SolverError, Status};

const PIVOT_TOL: f64 = 1e-9;
const REDUCED_COST_TOL: f64 = 1e-11;

/// How an original variable is expressed through nonnegative tableau columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = lb + y`
    Shift { col: usize, lb: f64 },
    /// `x = ub - y`
    Mirror { col: usize, ub: f64 },
    /// `x = y⁺ - y⁻`
    Free { pos: usize, neg: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Leq,
    Eq,
}

/// `min cᵀy` over `y ≥ 0` subject to rows `a y (≤|=) b`.
struct StandardForm {
    map: Vec<VarMap>,
    ny: usize,
    cost: Vec<f64>,
    rows: Vec<(Vec<f64>, f64, RowKind)>,
}

impl StandardForm {
    fn from_program(p: &Program, cost: &DVector<f64>) -> Self {
        let n = p.n();
        let mut map = Vec::with_capacity(n);
        let mut ny = 0;
        for j in 0..n {
            let (lb, ub) = (p.lb[j], p.ub[j]);
            let m = if lb.is_finite() {
                VarMap::Shift { col: ny, lb }
            } else if ub.is_finite() {
                VarMap::Mirror { col: ny, ub }
            } else {
                ny += 1;
                VarMap::Free { pos: ny - 1, neg: ny }
            };
            ny += 1;
            map.push(m);
        }

        // Rewrites `a·x` as `a'·y + offset`.
        let transform = |a: &[f64]| -> (Vec<f64>, f64) {
            let mut out = vec![0.0; ny];
            let mut offset = 0.0;
            for (j, &aj) in a.iter().enumerate() {
                if aj == 0.0 {
                    continue;
                }
                match map[j] {
                    VarMap::Shift { col, lb } => {
                        out[col] += aj;
                        offset += aj * lb;
                    }
                    VarMap::Mirror { col, ub } => {
                        out[col] -= aj;
                        offset += aj * ub;
                    }
                    VarMap::Free { pos, neg } => {
                        out[pos] += aj;
                        out[neg] -= aj;
                    }
                }
            }
            (out, offset)
        };

        let (cost_y, _) = transform(cost.as_slice());
        let mut rows = Vec::new();
        for i in 0..p.a_ineq.nrows() {
            let a: Vec<f64> = p.a_ineq.row(i).iter().copied().collect();
            let (row, offset) = transform(&a);
            rows.push((row, p.b_ineq[i] - offset, RowKind::Leq));
        }
        for j in 0..n {
            if let VarMap::Shift { col, lb } = map[j] {
                if p.ub[j].is_finite() {
                    let mut row = vec![0.0; ny];
                    row[col] = 1.0;
                    rows.push((row, p.ub[j] - lb, RowKind::Leq));
                }
            }
        }
        for i in 0..p.a_eq.nrows() {
            let a: Vec<f64> = p.a_eq.row(i).iter().copied().collect();
            let (row, offset) = transform(&a);
            rows.push((row, p.b_eq[i] - offset, RowKind::Eq));
        }
        Self {
            map,
            ny,
            cost: cost_y,
            rows,
        }
    }

    fn recover(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.map.len(),
            self.map.iter().map(|m| match *m {
                VarMap::Shift { col, lb } => lb + y[col],
                VarMap::Mirror { col, ub } => ub - y[col],
                VarMap::Free { pos, neg } => y[pos] - y[neg],
            }),
        )
    }
}

/// Dense tableau; row `i` holds the coefficients of basic variable `basis[i]`
/// with the right-hand side in the last slot.
struct Tableau {
    width: usize,
    data: Vec<Vec<f64>>,
    basis: Vec<usize>,
    artificial: Vec<bool>,
    /// Reduced costs, one per column.
    reduced: Vec<f64>,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.data[i][self.width]
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width;
        let inv = 1.0 / self.data[r][e];
        {
            let row = &mut self.data[r];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[e] = 1.0;
        }
        let pivot_row = self.data[r].clone();
        for (i, row) in self.data.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[e];
            if f == 0.0 {
                continue;
            }
            for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            row[e] = 0.0;
        }
        let f = self.reduced[e];
        if f != 0.0 {
            for (v, &pv) in self.reduced.iter_mut().zip(&pivot_row[..w]) {
                *v -= f * pv;
            }
            self.reduced[e] = 0.0;
        }
        self.basis[r] = e;
    }

    fn set_reduced_costs(&mut self, cost: &[f64]) {
        let mut d = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (dj, &aij) in d.iter_mut().zip(&self.data[i][..self.width]) {
                    *dj -= cb * aij;
                }
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        self.reduced = d;
    }

    /// Runs primal simplex iterations with Bland's rule. `cost_scale` makes
    /// the optimality tolerance relative, so scaling every cost by a positive
    /// constant reproduces the pivot sequence.
    fn run(&mut self, cost_scale: f64, max_iter: usize) -> Result<PhaseEnd, SolverError> {
        if cost_scale == 0.0 {
            return Ok(PhaseEnd::Optimal);
        }
        let tol = REDUCED_COST_TOL * cost_scale;
        for _ in 0..max_iter {
            let entering = (0..self.width).find(|&j| !self.artificial[j] && self.reduced[j] < -tol);
            let Some(e) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let col_scale = self
                .data
                .iter()
                .map(|row| row[e].abs())
                .fold(1.0, f64::max);
            let ptol = PIVOT_TOL * col_scale;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.data.len() {
                let a = self.data[i][e];
                if a <= ptol {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        if ratio < best && !tie || tie && self.basis[i] < self.basis[r] {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            match leave {
                None => return Ok(PhaseEnd::Unbounded),
                Some((r, _)) => self.pivot(r, e),
            }
        }
        Err(SolverError::Numerical(format!(
            "simplex did not terminate within {max_iter} pivots"
        )))
    }
}

pub(super) fn solve_lp(p: &Program, opts: &SolveOptions) -> Result<Solution, SolverError> {
    let sf = StandardForm::from_program(p, &p.c);
    let m = sf.rows.len();
    let n_slack = sf.rows.iter().filter(|r| r.2 == RowKind::Leq).count();
    let needs_artificial: Vec<bool> = sf
        .rows
        .iter()
        .map(|(_, b, kind)| *kind == RowKind::Eq || *b < 0.0)
        .collect();
    let n_art = needs_artificial.iter().filter(|&&a| a).count();
    let width = sf.ny + n_slack + n_art;

    let mut data = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut artificial = vec![false; width];
    let mut slack_col = sf.ny;
    let mut art_col = sf.ny + n_slack;
    for (i, (row, b, kind)) in sf.rows.iter().enumerate() {
        let mut r = vec![0.0; width + 1];
        r[..sf.ny].copy_from_slice(row);
        if *kind == RowKind::Leq {
            r[slack_col] = 1.0;
            if !needs_artificial[i] {
                basis.push(slack_col);
            }
            slack_col += 1;
        }
        r[width] = *b;
        if *b < 0.0 {
            for v in r.iter_mut() {
                *v = -*v;
            }
        }
        if needs_artificial[i] {
            r[art_col] = 1.0;
            artificial[art_col] = true;
            basis.push(art_col);
            art_col += 1;
        }
        data.push(r);
    }

    let mut tab = Tableau {
        width,
        data,
        basis,
        artificial: vec![false; width],
        reduced: Vec::new(),
    };

    let b_scale = sf.rows.iter().map(|r| r.1.abs()).fold(1.0, f64::max);
    if n_art > 0 {
        // Phase I: drive the artificial variables to zero. Artificial columns
        // may leave the basis but never re-enter it.
        let phase1_cost: Vec<f64> = artificial.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        tab.set_reduced_costs(&phase1_cost);
        tab.artificial = artificial.clone();
        tab.run(1.0, opts.max_iter)?;
        let infeasibility: f64 = (0..m)
            .filter(|&i| artificial[tab.basis[i]])
            .map(|i| tab.rhs(i))
            .sum();
        if infeasibility > opts.tol_feas * b_scale {
            return Ok(Solution::without_point(Status::Infeasible));
        }
        // Pivot remaining zero-level artificials out; rows that cannot be
        // pivoted are redundant and dropped.
        let mut i = 0;
        while i < tab.data.len() {
            if artificial[tab.basis[i]] {
                let col_scale = tab.data[i][..width].iter().map(|v| v.abs()).fold(1.0, f64::max);
                let target = (0..width).find(|&j| !artificial[j] && tab.data[i][j].abs() > PIVOT_TOL * col_scale);
                match target {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.data.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    let mut cost = vec![0.0; width];
    cost[..sf.ny].copy_from_slice(&sf.cost);
    let cost_scale = sf.cost.iter().map(|v| v.abs()).fold(0.0, f64::max);
    tab.set_reduced_costs(&cost);
    if let PhaseEnd::Unbounded = tab.run(cost_scale, opts.max_iter)? {
        return Ok(Solution::without_point(Status::Unbounded));
    }

    let mut y = vec![0.0; width];
    for (i, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(i).max(0.0);
    }
    let x = sf.recover(&y[..sf.ny]);
    let objective = p.objective_at(&x);
    Ok(Solution {
        x,
        objective,
        status: Status::Optimal,
    })
}
