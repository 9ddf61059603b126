//! Small dense two-phase simplex solver for the horizon linear programs.
//!
//! The horizon problems are tiny (tens of variables, ~100 rows), so a
//! textbook tableau with Bland's pivoting rule is adequate and has the
//! virtue of being deterministic and cycle-free.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("bad linear program: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

/// `minimize c·x  s.t.  rows, lower <= x <= upper` with finite lower bounds.
#[derive(Debug, Clone)]
pub struct LpProblem {
    n: usize,
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Cmp, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

const EPS: f64 = 1e-9;
const MAX_ITERS: usize = 200_000;

impl LpProblem {
    pub fn new(objective: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, LpError> {
        let n = objective.len();
        if lower.len() != n || upper.len() != n {
            return Err(LpError::BadInput("bound length mismatch".into()));
        }
        for i in 0..n {
            if !lower[i].is_finite() {
                return Err(LpError::BadInput(format!(
                    "lower bound of variable {i} must be finite"
                )));
            }
            if upper[i] < lower[i] {
                return Err(LpError::BadInput(format!(
                    "empty bound interval for variable {i}"
                )));
            }
        }
        Ok(Self {
            n,
            objective,
            rows: Vec::new(),
            lower,
            upper,
        })
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, cmp: Cmp, rhs: f64) -> Result<(), LpError> {
        if coeffs.len() != self.n {
            return Err(LpError::BadInput("row length mismatch".into()));
        }
        self.rows.push((coeffs, cmp, rhs));
        Ok(())
    }

    /// Sparse convenience: coefficients given as (index, value) pairs.
    pub fn add_sparse_row(
        &mut self,
        terms: &[(usize, f64)],
        cmp: Cmp,
        rhs: f64,
    ) -> Result<(), LpError> {
        let mut coeffs = vec![0.0; self.n];
        for &(i, v) in terms {
            if i >= self.n {
                return Err(LpError::BadInput(format!("variable index {i} out of range")));
            }
            coeffs[i] += v;
        }
        self.rows.push((coeffs, cmp, rhs));
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        // Shift variables to x = lower + x', x' >= 0, and turn finite upper
        // bounds into rows.
        let n = self.n;
        let mut rows: Vec<(Vec<f64>, Cmp, f64)> = Vec::with_capacity(self.rows.len() + n);
        for (coeffs, cmp, rhs) in &self.rows {
            let shift: f64 = coeffs
                .iter()
                .zip(&self.lower)
                .map(|(c, lo)| c * lo)
                .sum();
            rows.push((coeffs.clone(), *cmp, rhs - shift));
        }
        for i in 0..n {
            if self.upper[i].is_finite() {
                let mut coeffs = vec![0.0; n];
                coeffs[i] = 1.0;
                rows.push((coeffs, Cmp::Le, self.upper[i] - self.lower[i]));
            }
        }

        let shifted = solve_standard(n, &self.objective, &rows)?;
        let x: Vec<f64> = shifted
            .iter()
            .zip(&self.lower)
            .map(|(v, lo)| v + lo)
            .collect();
        let objective = self
            .objective
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum();
        Ok(LpSolution { x, objective })
    }
}

/// Solve `min c·x, rows, x >= 0` via a two-phase tableau simplex.
fn solve_standard(
    n: usize,
    objective: &[f64],
    rows: &[(Vec<f64>, Cmp, f64)],
) -> Result<Vec<f64>, LpError> {
    let m = rows.len();
    if m == 0 {
        // Bounded below by x >= 0; minimize by setting positive-cost vars to 0.
        if objective.iter().any(|&c| c < -EPS) {
            return Err(LpError::Unbounded);
        }
        return Ok(vec![0.0; n]);
    }

    // Column layout: [structural 0..n | slack/surplus | artificial], built so
    // every row gets an initial basic column.
    let mut n_slack = 0usize;
    for (_, cmp, _) in rows {
        if !matches!(cmp, Cmp::Eq) {
            n_slack += 1;
        }
    }
    let total = n + n_slack + m; // worst case: one artificial per row
    let mut tab: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut basis: Vec<usize> = vec![0; m];
    let artificial_start = n + n_slack;
    let mut n_artificial = 0usize;

    let mut slack_idx = n;
    for (r, (coeffs, cmp, rhs)) in rows.iter().enumerate() {
        let mut row = vec![0.0; total + 1];
        let flip = *rhs < 0.0;
        let sign = if flip { -1.0 } else { 1.0 };
        for (j, &c) in coeffs.iter().enumerate() {
            row[j] = sign * c;
        }
        row[total] = sign * rhs;
        let eff_cmp = match (cmp, flip) {
            (Cmp::Le, false) | (Cmp::Ge, true) => Cmp::Le,
            (Cmp::Ge, false) | (Cmp::Le, true) => Cmp::Ge,
            (Cmp::Eq, _) => Cmp::Eq,
        };
        match eff_cmp {
            Cmp::Le => {
                row[slack_idx] = 1.0;
                basis[r] = slack_idx;
                slack_idx += 1;
            }
            Cmp::Ge => {
                row[slack_idx] = -1.0;
                slack_idx += 1;
                let art = artificial_start + n_artificial;
                row[art] = 1.0;
                basis[r] = art;
                n_artificial += 1;
            }
            Cmp::Eq => {
                let art = artificial_start + n_artificial;
                row[art] = 1.0;
                basis[r] = art;
                n_artificial += 1;
            }
        }
        tab.push(row);
    }
    let n_real = artificial_start;

    // Phase 1: minimize the sum of artificials.
    if n_artificial > 0 {
        let mut obj = vec![0.0; total + 1];
        for r in 0..m {
            if basis[r] >= n_real {
                for j in 0..=total {
                    obj[j] -= tab[r][j];
                }
            }
        }
        run_simplex(&mut tab, &mut obj, &mut basis, total, Some(n_real))?;
        let phase1_value = -obj[total];
        if phase1_value > 1e-7 {
            return Err(LpError::Infeasible);
        }
        // Pivot zero-level artificials out of the basis where possible.
        for r in 0..m {
            if basis[r] >= n_real {
                if let Some(c) = (0..n_real).find(|&c| tab[r][c].abs() > EPS) {
                    pivot(&mut tab, &mut vec![0.0; total + 1], r, c);
                    basis[r] = c;
                }
            }
        }
    }

    // Phase 2: the real objective, with artificial columns frozen.
    let mut obj = vec![0.0; total + 1];
    obj[..n].copy_from_slice(objective);
    for r in 0..m {
        let b = basis[r];
        let coef = obj[b];
        if coef.abs() > 0.0 {
            for j in 0..=total {
                obj[j] -= coef * tab[r][j];
            }
        }
    }
    run_simplex(&mut tab, &mut obj, &mut basis, total, Some(n_real))?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if basis[r] < n {
            x[basis[r]] = tab[r][total].max(0.0);
        }
    }
    Ok(x)
}

/// Bland-rule simplex iterations on a tableau in canonical form.
/// `allowed` restricts entering columns to indices `< allowed` when set
/// (used to freeze artificial columns in phase 2).
fn run_simplex(
    tab: &mut [Vec<f64>],
    obj: &mut [f64],
    basis: &mut [usize],
    total: usize,
    allowed: Option<usize>,
) -> Result<(), LpError> {
    let m = tab.len();
    let limit = allowed.unwrap_or(total);
    for _ in 0..MAX_ITERS {
        // Bland: entering = smallest column index with negative reduced cost.
        let Some(entering) = (0..limit).find(|&j| obj[j] < -EPS) else {
            return Ok(());
        };
        // Ratio test; ties broken by smallest basis index (Bland).
        let mut leaving: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..m {
            let a = tab[r][entering];
            if a > EPS {
                let ratio = tab[r][total] / a;
                let better = match leaving {
                    None => true,
                    Some(prev) => {
                        ratio < best_ratio - 1e-12
                            || (ratio < best_ratio + 1e-12 && basis[r] < basis[prev])
                    }
                };
                if better {
                    leaving = Some(r);
                    best_ratio = ratio;
                }
            }
        }
        let Some(r) = leaving else {
            return Err(LpError::Unbounded);
        };
        pivot(tab, obj, r, entering);
        basis[r] = entering;
    }
    Err(LpError::IterationLimit)
}

fn pivot(tab: &mut [Vec<f64>], obj: &mut [f64], r: usize, c: usize) {
    let cols = tab[r].len();
    let p = tab[r][c];
    for j in 0..cols {
        tab[r][j] /= p;
    }
    tab[r][c] = 1.0;
    for i in 0..tab.len() {
        if i != r {
            let f = tab[i][c];
            if f != 0.0 {
                for j in 0..cols {
                    tab[i][j] -= f * tab[r][j];
                }
                tab[i][c] = 0.0;
            }
        }
    }
    let f = obj[c];
    if f != 0.0 {
        for j in 0..cols {
            obj[j] -= f * tab[r][j];
        }
        obj[c] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simple_two_variable_lp() {
        // min -x - 2y  s.t. x + y <= 4, x <= 3, y <= 2, x,y >= 0
        let mut lp = LpProblem::new(vec![-1.0, -2.0], vec![0.0, 0.0], vec![3.0, 2.0]).unwrap();
        lp.add_row(vec![1.0, 1.0], Cmp::Le, 4.0).unwrap();
        let sol = lp.solve().unwrap();
        assert_relative_eq!(sol.objective, -6.0, epsilon = 1e-8);
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + y  s.t. x + y = 1, x >= 0.25
        let mut lp = LpProblem::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![f64::INFINITY, f64::INFINITY],
        )
        .unwrap();
        lp.add_row(vec![1.0, 1.0], Cmp::Eq, 1.0).unwrap();
        lp.add_row(vec![1.0, 0.0], Cmp::Ge, 0.25).unwrap();
        let sol = lp.solve().unwrap();
        assert_relative_eq!(sol.objective, 1.0, epsilon = 1e-8);
        assert!(sol.x[0] >= 0.25 - 1e-9);
    }

    #[test]
    fn shifted_lower_bounds() {
        // min x  s.t. x >= -3 (bound), x + y >= -1, y in [-2, 2]
        let mut lp = LpProblem::new(vec![1.0, 0.0], vec![-3.0, -2.0], vec![5.0, 2.0]).unwrap();
        lp.add_row(vec![1.0, 1.0], Cmp::Ge, -1.0).unwrap();
        let sol = lp.solve().unwrap();
        assert_relative_eq!(sol.x[0], -3.0, epsilon = 1e-8);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut lp = LpProblem::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        lp.add_row(vec![1.0], Cmp::Ge, 2.0).unwrap();
        assert_eq!(lp.solve().unwrap_err(), LpError::Infeasible);
    }

    #[test]
    fn unbounded_is_reported() {
        let mut lp =
            LpProblem::new(vec![-1.0], vec![0.0], vec![f64::INFINITY]).unwrap();
        lp.add_row(vec![0.0], Cmp::Le, 1.0).unwrap();
        assert_eq!(lp.solve().unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn degenerate_lp_terminates() {
        // Multiple redundant constraints through the same vertex.
        let mut lp = LpProblem::new(vec![-1.0, -1.0], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        lp.add_row(vec![1.0, 0.0], Cmp::Le, 1.0).unwrap();
        lp.add_row(vec![1.0, 1.0], Cmp::Le, 2.0).unwrap();
        lp.add_row(vec![2.0, 2.0], Cmp::Le, 4.0).unwrap();
        let sol = lp.solve().unwrap();
        assert_relative_eq!(sol.objective, -2.0, epsilon = 1e-8);
    }

    #[test]
    fn sparse_rows_accumulate() {
        let mut lp = LpProblem::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![9.0, 9.0]).unwrap();
        lp.add_sparse_row(&[(0, 1.0), (0, 1.0), (1, 1.0)], Cmp::Ge, 4.0)
            .unwrap();
        let sol = lp.solve().unwrap();
        // 2x + y >= 4; cheapest is x = 2 (cost 2) vs y = 4 (cost 4).
        assert_relative_eq!(sol.objective, 2.0, epsilon = 1e-8);
    }
}
