//! Separating per-example influences from batch-level influences.
//!
//! Each probed batch is a row of a binary inclusion matrix; its measured
//! influence is modelled as the sum of its members' influences. The
//! per-example vector is recovered with an L1-penalized least-squares fit
//! solved by cyclic coordinate descent with soft-thresholding.

use alloc::vec;
use alloc::vec::Vec;

use crate::{math, Error, Result};

/// Row-major 0/1 matrix: rows are probed batches, columns pool examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inclusion {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Inclusion {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    /// Builds the matrix from per-row lists of member columns.
    pub fn from_batches(cols: usize, batches: &[Vec<usize>]) -> Result<Self> {
        let mut m = Self::new(batches.len(), cols);
        for (r, batch) in batches.iter().enumerate() {
            for &c in batch {
                if c >= cols {
                    return Err(Error::Index { index: c, bound: cols });
                }
                m.set(r, c, true);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.cols + c] = v;
    }

    /// `Xᵀy`
    pub fn t_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    out[c] += y[r];
                }
            }
        }
        out
    }

    /// `Xw`
    pub fn mul(&self, w: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).filter(|&c| self.get(r, c)).map(|c| w[c]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl LassoConfig {
    /// `λ = 1e-3·‖Xᵀy‖∞ / rows`, tolerance 1e-8.
    pub fn default_for(x: &Inclusion, y: &[f64]) -> Self {
        let max = x.t_mul(y).iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
        Self {
            lambda: 1e-3 * max / x.rows().max(1) as f64,
            tolerance: 1e-8,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub sweeps: usize,
    /// Objective after each completed sweep.
    pub objective_trace: Vec<f64>,
}

pub fn objective(x: &Inclusion, y: &[f64], w: &[f64], lambda: f64) -> f64 {
    let pred = x.mul(w);
    let rss: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * rss + lambda * w.iter().map(|v| math::abs(*v)).sum::<f64>()
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Minimizes `½‖y − Xw‖² + λ‖w‖₁` by cyclic coordinate descent in column
/// order, stopping once a full sweep changes no coordinate by more than the
/// tolerance.
pub fn lasso_decompose(x: &Inclusion, y: &[f64], cfg: &LassoConfig) -> Result<LassoFit> {
    if x.rows() == 0 {
        return Err(Error::contract("lasso: need at least one probed batch"));
    }
    if y.len() != x.rows() {
        return Err(Error::contract("lasso: batch influence count differs from row count"));
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::contract("lasso: lambda must be non-negative"));
    }
    let cols: Vec<Vec<usize>> = (0..x.cols())
        .map(|c| (0..x.rows()).filter(|&r| x.get(r, c)).collect())
        .collect();
    let mut w = vec![0.0; x.cols()];
    let mut residual = y.to_vec();
    let mut trace = Vec::new();
    for sweep in 1..=cfg.max_sweeps {
        let mut max_change = 0.0f64;
        for (j, rows) in cols.iter().enumerate() {
            let norm_sq = rows.len() as f64;
            if norm_sq == 0.0 {
                continue;
            }
            let rho: f64 = rows.iter().map(|&r| residual[r]).sum::<f64>() + norm_sq * w[j];
            let new = soft_threshold(rho, cfg.lambda) / norm_sq;
            let delta = new - w[j];
            if delta != 0.0 {
                for &r in rows {
                    residual[r] -= delta;
                }
                w[j] = new;
                max_change = max_change.max(math::abs(delta));
            }
        }
        trace.push(objective(x, y, &w, cfg.lambda));
        if max_change < cfg.tolerance {
            return Ok(LassoFit {
                weights: w,
                sweeps: sweep,
                objective_trace: trace,
            });
        }
        if sweep == cfg.max_sweeps {
            let res = math::sqrt(residual.iter().map(|r| r * r).sum());
            return Err(Error::Convergence {
                iterations: sweep,
                max_change,
                residual: res,
            });
        }
    }
    unreachable!("max_sweeps >= 1 handled in loop")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Inclusion {
        let batches: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        Inclusion::from_batches(n, &batches).unwrap()
    }

    #[test]
    fn zero_lambda_identity_recovers_targets() {
        let y = [0.5, -1.25, 3.0, 0.0];
        let cfg = LassoConfig {
            lambda: 0.0,
            tolerance: 1e-8,
            max_sweeps: 100,
        };
        let fit = lasso_decompose(&identity(4), &y, &cfg).unwrap();
        assert_eq!(fit.weights, y.to_vec());
    }

    #[test]
    fn large_lambda_kills_everything() {
        let x = Inclusion::from_batches(3, &[vec![0, 1], vec![1, 2], vec![0, 2]]).unwrap();
        let y = [1.0, -2.0, 0.5];
        let linf = x.t_mul(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cfg = LassoConfig {
            lambda: linf,
            tolerance: 1e-8,
            max_sweeps: 100,
        };
        let fit = lasso_decompose(&x, &y, &cfg).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let x = Inclusion::from_batches(2, &[vec![0, 1], vec![0, 1], vec![0]]).unwrap();
        let cfg = LassoConfig {
            lambda: 0.0,
            tolerance: 0.0,
            max_sweeps: 2,
        };
        match lasso_decompose(&x, &[1.0, 2.0, 0.3], &cfg) {
            Err(Error::Convergence { iterations, residual, .. }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_empty_and_negative_lambda() {
        let cfg = LassoConfig {
            lambda: -1.0,
            tolerance: 1e-8,
            max_sweeps: 10,
        };
        assert!(lasso_decompose(&identity(2), &[1.0, 1.0], &cfg).is_err());
        let cfg = LassoConfig { lambda: 0.0, ..cfg };
        assert!(lasso_decompose(&Inclusion::new(0, 3), &[], &cfg).is_err());
    }
}
