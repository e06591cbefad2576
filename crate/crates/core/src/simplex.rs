//! Revised primal simplex for `max c'x  s.t.  Ax = b, x >= 0`.
//!
//! Columns are stored sparse; the basis inverse is kept dense and updated
//! with product-form pivots, refactorized periodically. The problems solved
//! here have few rows (two per firm) and many columns, so pricing dominates.
//! Dantzig pricing is used until a run of degenerate pivots is seen, after
//! which Bland's rule takes over to rule out cycling.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseColumn {
    pub rows: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseColumn {
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let (rows, vals) = entries.into_iter().unzip();
        SparseColumn { rows, vals }
    }

    fn dot(&self, dense: &[f64]) -> f64 {
        self.rows.iter().zip(&self.vals).map(|(&r, v)| dense[r] * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    pub costs: Vec<f64>,
    pub columns: Vec<SparseColumn>,
    pub rhs: Vec<f64>,
}

impl StandardLp {
    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Largest violation of `Ax = b` and `x >= 0`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n_rows()];
        for (col, &xj) in self.columns.iter().zip(x) {
            for (&r, v) in col.rows.iter().zip(&col.vals) {
                ax[r] += v * xj;
            }
        }
        let eq = ax
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let neg = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        eq.max(neg)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub pricing_tol: f64,
    pub pivot_tol: f64,
    pub feasibility_tol: f64,
    /// Degenerate pivots in a row before switching to Bland's rule.
    pub bland_after: usize,
    pub refactor_every: usize,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            pricing_tol: 1e-9,
            pivot_tol: 1e-9,
            feasibility_tol: 1e-8,
            bland_after: 50,
            refactor_every: 64,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub basis: Vec<usize>,
    pub duals: Vec<f64>,
    pub iterations: usize,
}

struct Tableau<'a> {
    costs: &'a [f64],
    columns: &'a [SparseColumn],
    rhs: &'a [f64],
    m: usize,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
}

impl<'a> Tableau<'a> {
    fn new(costs: &'a [f64], columns: &'a [SparseColumn], rhs: &'a [f64], basis: Vec<usize>) -> Result<Self> {
        let m = rhs.len();
        let mut is_basic = vec![false; columns.len()];
        for &b in &basis {
            is_basic[b] = true;
        }
        let mut t = Tableau {
            costs,
            columns,
            rhs,
            m,
            basis,
            is_basic,
            binv: vec![0.0; m * m],
            xb: vec![0.0; m],
            iterations: 0,
        };
        t.refactor()?;
        Ok(t)
    }

    /// Rebuild the dense basis inverse by Gauss-Jordan with partial pivoting.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            let col = &self.columns[j];
            for (&r, &v) in col.rows.iter().zip(&col.vals) {
                a[r * m + k] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&x, &y| a[x * m + c].abs().total_cmp(&a[y * m + c].abs()))
                .unwrap();
            if a[p * m + c].abs() < 1e-12 {
                return Err(Error::SolverFailure("singular basis".into()));
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let d = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for r in 0..m {
                if r != c {
                    let f = a[r * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            a[r * m + k] -= f * a[c * m + k];
                            inv[r * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        for i in 0..m {
            self.xb[i] = (0..m).map(|k| self.binv[i * m + k] * self.rhs[k]).sum();
        }
        Ok(())
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = self.costs[b];
            if cb != 0.0 {
                for k in 0..m {
                    y[k] += cb * self.binv[i * m + k];
                }
            }
        }
        y
    }

    fn ftran(&self, col: &SparseColumn) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        for (&r, &v) in col.rows.iter().zip(&col.vals) {
            for i in 0..m {
                alpha[i] += self.binv[i * m + r] * v;
            }
        }
        alpha
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) {
        let m = self.m;
        let step = self.xb[r] / alpha[r];
        for i in 0..m {
            if i != r {
                self.xb[i] -= step * alpha[i];
                if self.xb[i] < 0.0 && self.xb[i] > -1e-11 {
                    self.xb[i] = 0.0;
                }
            }
        }
        self.xb[r] = step;
        let pr = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= pr;
        }
        for i in 0..m {
            if i != r && alpha[i] != 0.0 {
                let f = alpha[i];
                for k in 0..m {
                    self.binv[i * m + k] -= f * self.binv[r * m + k];
                }
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.iterations += 1;
    }

    /// Primal simplex iterations until optimality over columns allowed by
    /// `can_enter`.
    fn optimize(&mut self, can_enter: &dyn Fn(usize) -> bool, opts: &SimplexOptions) -> Result<()> {
        let mut degenerate_run = 0usize;
        let mut since_refactor = 0usize;
        loop {
            if self.iterations >= opts.max_iterations {
                return Err(Error::SolverFailure(format!("iteration limit {} reached", opts.max_iterations)));
            }
            if since_refactor >= opts.refactor_every {
                self.refactor()?;
                since_refactor = 0;
            }
            let bland = degenerate_run >= opts.bland_after;
            let y = self.duals();
            let mut entering: Option<(usize, f64)> = None;
            for (j, col) in self.columns.iter().enumerate() {
                if self.is_basic[j] || !can_enter(j) {
                    continue;
                }
                let d = self.costs[j] - col.dot(&y);
                if d > opts.pricing_tol {
                    if bland {
                        entering = Some((j, d));
                        break;
                    }
                    if entering.is_none_or(|(_, best)| d > best) {
                        entering = Some((j, d));
                    }
                }
            }
            let Some((q, _)) = entering else {
                return Ok(());
            };
            let alpha = self.ftran(&self.columns[q]);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if alpha[i] > opts.pivot_tol {
                    let ratio = self.xb[i].max(0.0) / alpha[i];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            let better = if tie {
                                if bland {
                                    self.basis[i] < self.basis[r]
                                } else {
                                    alpha[i] > alpha[r]
                                }
                            } else {
                                ratio < best
                            };
                            if better {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, step)) = leave else {
                return Err(Error::Unbounded);
            };
            if step <= opts.feasibility_tol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, q, &alpha);
            since_refactor += 1;
        }
    }
}

/// Solve `lp` starting from `start_basis` (which must be primal feasible) or,
/// when `None`, from an artificial basis via a phase-one problem.
pub fn solve(lp: &StandardLp, start_basis: Option<&[usize]>, opts: &SimplexOptions) -> Result<LpSolution> {
    let m = lp.n_rows();
    let n = lp.n_cols();
    if lp.costs.len() != n {
        return Err(Error::SolverFailure("cost vector length mismatch".into()));
    }
    if let Some(basis) = start_basis {
        if basis.len() != m {
            return Err(Error::SolverFailure("start basis has wrong size".into()));
        }
        let mut t = Tableau::new(&lp.costs, &lp.columns, &lp.rhs, basis.to_vec())?;
        if t.xb.iter().any(|&v| v < -opts.feasibility_tol) {
            return Err(Error::SolverFailure("start basis is not primal feasible".into()));
        }
        t.optimize(&|_| true, opts)?;
        t.refactor()?;
        return Ok(finish(&t, n));
    }

    // Phase one: flip rows so b >= 0, add one artificial per row.
    let sign: Vec<f64> = lp.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
    let rhs: Vec<f64> = lp.rhs.iter().zip(&sign).map(|(b, s)| b * s).collect();
    let mut columns: Vec<SparseColumn> = lp
        .columns
        .iter()
        .map(|c| SparseColumn {
            rows: c.rows.clone(),
            vals: c.rows.iter().zip(&c.vals).map(|(&r, v)| v * sign[r]).collect(),
        })
        .collect();
    columns.extend((0..m).map(|i| SparseColumn::new([(i, 1.0)])));
    let mut phase1_costs = vec![0.0; n];
    phase1_costs.extend(std::iter::repeat_n(-1.0, m));
    let basis: Vec<usize> = (n..n + m).collect();

    let mut t = Tableau::new(&phase1_costs, &columns, &rhs, basis)?;
    t.optimize(&|_| true, opts)?;
    t.refactor()?;
    let infeasibility: f64 = t
        .basis
        .iter()
        .zip(&t.xb)
        .filter(|(&b, _)| b >= n)
        .map(|(_, &v)| v)
        .sum();
    if infeasibility > opts.feasibility_tol * (1.0 + m as f64) {
        return Err(Error::Infeasible);
    }
    // Drive zero-level artificials out where a structural pivot exists.
    for r in 0..m {
        if t.basis[r] < n {
            continue;
        }
        let row: Vec<f64> = t.binv[r * m..(r + 1) * m].to_vec();
        let cand = (0..n).find(|&j| !t.is_basic[j] && columns[j].dot(&row).abs() > 1e-7);
        if let Some(q) = cand {
            let alpha = t.ftran(&columns[q]);
            t.pivot(r, q, &alpha);
        }
    }
    let iterations = t.iterations;
    let basis = t.basis.clone();

    let mut costs = lp.costs.clone();
    costs.extend(std::iter::repeat_n(0.0, m));
    let mut t2 = Tableau::new(&costs, &columns, &rhs, basis)?;
    t2.iterations = iterations;
    t2.optimize(&|j| j < n, opts)?;
    t2.refactor()?;
    let mut sol = finish(&t2, n);
    for (y, s) in sol.duals.iter_mut().zip(&sign) {
        *y *= s;
    }
    Ok(sol)
}

fn finish(t: &Tableau<'_>, n: usize) -> LpSolution {
    let mut x = vec![0.0; n];
    for (&b, &v) in t.basis.iter().zip(&t.xb) {
        if b < n {
            x[b] = v.max(0.0);
        }
    }
    let objective = x.iter().zip(t.costs).map(|(a, c)| a * c).sum();
    LpSolution {
        x,
        objective,
        basis: t.basis.clone(),
        duals: t.duals(),
        iterations: t.iterations,
    }
}
