//! Dense two-phase simplex with Bland's rule for small systems
//! `A x <= b, x >= 0`.
//!
//! Phase 1 minimises the sum of artificial variables. Its optimal dual is
//! read off the final tableau and, when the optimum is positive, is a Farkas
//! vector `y >= 0` with `yᵀA >= 0` and `yᵀb < 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct Phase1 {
    /// Optimal sum of artificial variables.
    pub objective: f64,
    /// Basic solution at the end of phase 1 (feasible iff `objective` is 0).
    pub x: DVector<f64>,
    /// Optimal phase-1 dual mapped to the original rows.
    pub farkas: DVector<f64>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible(Phase1),
    Unbounded,
}

/// Independent check of a Farkas vector for `A x <= b, x >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarkasCheck {
    /// Most negative entry of `y` (0 if none).
    pub min_weight: f64,
    /// Most negative entry of `yᵀA` (0 if none).
    pub min_combination: f64,
    /// `yᵀb`, negative for a valid certificate.
    pub rhs: f64,
}

impl FarkasCheck {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>) -> Self {
        let combo = a.tr_mul(y);
        Self {
            min_weight: y.iter().copied().fold(0.0, f64::min),
            min_combination: combo.iter().copied().fold(0.0, f64::min),
            rhs: y.dot(b),
        }
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.min_weight >= -tol && self.min_combination >= -tol && self.rhs < -tol
    }
}

struct Tableau {
    t: DMatrix<f64>,
    rhs: DVector<f64>,
    basis: Vec<usize>,
    n_struct: usize,
    n_rows: usize,
    /// first artificial column; artificials occupy the tail
    art_start: usize,
    /// per row, the column that was basic initially and its sign
    initial: Vec<usize>,
    row_sign: Vec<f64>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let (m, n) = a.shape();
        let n_art = b.iter().filter(|v| **v < 0.0).count();
        let cols = n + m + n_art;
        let mut t = DMatrix::zeros(m, cols);
        let mut rhs = DVector::zeros(m);
        let mut basis = vec![0; m];
        let mut initial = vec![0; m];
        let mut row_sign = vec![1.0; m];
        let mut next_art = n + m;
        for i in 0..m {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            row_sign[i] = sign;
            for j in 0..n {
                t[(i, j)] = sign * a[(i, j)];
            }
            t[(i, n + i)] = sign;
            rhs[i] = sign * b[i];
            if sign > 0.0 {
                basis[i] = n + i;
            } else {
                t[(i, next_art)] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
            initial[i] = basis[i];
        }
        Self {
            t,
            rhs,
            basis,
            n_struct: n,
            n_rows: m,
            art_start: n + m,
            initial,
            row_sign,
            pivots: 0,
            max_pivots: 200 * (m + cols) + 1000,
        }
    }

    fn cols(&self) -> usize {
        self.t.ncols()
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.t[(i, j)];
                }
            }
        }
        d
    }

    fn pivot(&mut self, row: usize, col: usize) -> Result<()> {
        self.pivots += 1;
        if self.pivots > self.max_pivots {
            return Err(Error::PivotLimit { pivots: self.pivots });
        }
        let p = self.t[(row, col)];
        self.t.row_mut(row).scale_mut(1.0 / p);
        self.rhs[row] /= p;
        let pivot_row = self.t.row(row).into_owned();
        let pivot_rhs = self.rhs[row];
        for i in 0..self.n_rows {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..pivot_row.len() {
                    self.t[(i, j)] -= f * pivot_row[j];
                }
                self.t[(i, col)] = 0.0;
                self.rhs[i] -= f * pivot_rhs;
                if self.rhs[i] < 0.0 && self.rhs[i] > -1e-13 {
                    self.rhs[i] = 0.0;
                }
            }
        }
        self.basis[row] = col;
        Ok(())
    }

    /// Bland's rule iterations for `cost`; `allowed` masks entering columns.
    /// Returns `false` when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: impl Fn(usize) -> bool) -> Result<bool> {
        loop {
            let d = self.reduced_costs(cost);
            let Some(enter) = (0..self.cols()).find(|&j| allowed(j) && d[j] < -1e-12 && !self.basis.contains(&j)) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.n_rows {
                let a = self.t[(i, enter)];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-14 || (ratio <= best + 1e-14 && self.basis[i] < self.basis[k]) {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Ok(false);
            };
            self.pivot(row, enter)?;
        }
    }

    fn solution(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_struct);
        for (i, &bv) in self.basis.iter().enumerate() {
            if bv < self.n_struct {
                x[bv] = self.rhs[i].max(0.0);
            }
        }
        x
    }

    fn phase1_cost(&self) -> Vec<f64> {
        (0..self.cols()).map(|j| if j >= self.art_start { 1.0 } else { 0.0 }).collect()
    }

    fn run_phase1(&mut self) -> Result<Phase1> {
        let cost = self.phase1_cost();
        self.optimize(&cost, |_| true)?;
        let objective: f64 = self
            .basis
            .iter()
            .zip(self.rhs.iter())
            .filter(|(bv, _)| **bv >= self.art_start)
            .map(|(_, v)| *v)
            .sum();
        let d = self.reduced_costs(&cost);
        let farkas = DVector::from_iterator(
            self.n_rows,
            (0..self.n_rows).map(|i| {
                let col = self.initial[i];
                let pi = cost[col] - d[col];
                (-self.row_sign[i] * pi).max(0.0)
            }),
        );
        Ok(Phase1 {
            objective: objective.max(0.0),
            x: self.solution(),
            farkas,
        })
    }

    /// Pivot basic artificials (at zero level) out where possible.
    fn expel_artificials(&mut self) -> Result<()> {
        for i in 0..self.n_rows {
            if self.basis[i] >= self.art_start {
                if let Some(j) = (0..self.art_start).find(|&j| self.t[(i, j)].abs() > PIVOT_TOL && !self.basis.contains(&j)) {
                    self.pivot(i, j)?;
                }
            }
        }
        Ok(())
    }
}

/// Phase 1 on `A x <= b, x >= 0`.
pub fn phase1(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Phase1> {
    check_shapes(a, b)?;
    Tableau::new(a, b).run_phase1()
}

/// Minimise `cᵀx` over `A x <= b, x >= 0`. Phase 1 counts as feasible when
/// its optimum is at most `feas_tol`.
pub fn minimize(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, feas_tol: f64) -> Result<LpOutcome> {
    check_shapes(a, b)?;
    if c.len() != a.ncols() {
        return Err(Error::Dimension {
            field: "objective".into(),
            expected: a.ncols(),
            found: c.len(),
        });
    }
    let mut tab = Tableau::new(a, b);
    let p1 = tab.run_phase1()?;
    if p1.objective > feas_tol {
        return Ok(LpOutcome::Infeasible(p1));
    }
    tab.expel_artificials()?;
    let art_start = tab.art_start;
    let mut cost = vec![0.0; tab.cols()];
    cost[..c.len()].copy_from_slice(c.as_slice());
    if !tab.optimize(&cost, |j| j < art_start)? {
        return Ok(LpOutcome::Unbounded);
    }
    let x = tab.solution();
    let value = c.dot(&x);
    Ok(LpOutcome::Optimal { x, value })
}

fn check_shapes(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension {
            field: "rhs".into(),
            expected: a.nrows(),
            found: b.len(),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("linear system", "non-finite coefficient"));
    }
    Ok(())
}
