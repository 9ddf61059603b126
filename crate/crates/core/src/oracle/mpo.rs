//! Simplex-grid reference for the portfolio program and a double-loop
//! covariance recomputation.

use nalgebra::{DMatrix, DVector};

/// Mean and 1/N covariance by explicit loops, no matrix algebra.
pub fn naive_return_stats(samples: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.nrows();
    let l = samples.ncols();
    let mut mean = DVector::zeros(l);
    for j in 0..l {
        let mut acc = 0.0;
        for i in 0..n {
            acc += samples[(i, j)];
        }
        mean[j] = acc / n as f64;
    }
    let mut sigma = DMatrix::zeros(l, l);
    for a in 0..l {
        for b in 0..l {
            let mut acc = 0.0;
            for i in 0..n {
                acc += (samples[(i, a)] - mean[a]) * (samples[(i, b)] - mean[b]);
            }
            sigma[(a, b)] = acc / n as f64;
        }
    }
    (mean, sigma)
}

#[derive(Debug, Clone)]
pub struct GridPortfolio {
    pub w: DVector<f64>,
    pub objective: f64,
}

/// Exhaustive search over the weight simplex at the given step: the first
/// L-1 weights walk a uniform grid, the last takes the remainder. Only
/// points meeting the return floor count. Ties keep the first (smallest in
/// enumeration order) minimizer.
pub fn simplex_grid_search(
    r_bar: &DVector<f64>,
    sigma: &DMatrix<f64>,
    rorm: f64,
    step: f64,
) -> Option<GridPortfolio> {
    let l = r_bar.len();
    assert!(l >= 1 && step > 0.0);
    let levels = (1.0 / step).round() as usize;
    let mut best: Option<GridPortfolio> = None;
    let mut w = vec![0.0; l];
    search_rec(r_bar, sigma, rorm, levels, l, 0, 0, &mut w, &mut best);
    best
}

#[allow(clippy::too_many_arguments)]
fn search_rec(
    r_bar: &DVector<f64>,
    sigma: &DMatrix<f64>,
    rorm: f64,
    levels: usize,
    l: usize,
    dim: usize,
    used: usize,
    w: &mut Vec<f64>,
    best: &mut Option<GridPortfolio>,
) {
    if dim == l - 1 {
        w[dim] = (levels - used) as f64 / levels as f64;
        let wv = DVector::from_column_slice(w);
        let ret: f64 = r_bar.dot(&wv);
        if ret >= rorm - 1e-12 {
            let mut obj = 0.0;
            for i in 0..l {
                for j in 0..l {
                    obj += wv[i] * sigma[(i, j)] * wv[j];
                }
            }
            let better = match best {
                None => true,
                Some(b) => obj < b.objective,
            };
            if better {
                *best = Some(GridPortfolio { w: wv, objective: obj });
            }
        }
        return;
    }
    for k in 0..=(levels - used) {
        w[dim] = k as f64 / levels as f64;
        search_rec(r_bar, sigma, rorm, levels, l, dim + 1, used + k, w, best);
    }
}
