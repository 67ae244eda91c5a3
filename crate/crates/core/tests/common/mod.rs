//! Dense reference implementations shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nmpc_drive::qp::QpProblem;
use nmpc_drive::sparse::CsrMatrix;

/// A small QP in dense form.
#[derive(Clone, Debug)]
pub struct DenseQp {
    pub h: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub lb_a: Vec<f64>,
    pub ub_a: Vec<f64>,
    pub lb_x: Vec<f64>,
    pub ub_x: Vec<f64>,
}

impl DenseQp {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn qp(&self) -> QpProblem {
        let n = self.n();
        QpProblem {
            h: CsrMatrix::from_dense(&self.h),
            g: self.g.clone(),
            a: if self.a.is_empty() { CsrMatrix::zeros(0, n) } else { CsrMatrix::from_dense(&self.a) },
            lb_a: self.lb_a.clone(),
            ub_a: self.ub_a.clone(),
            lb_x: self.lb_x.clone(),
            ub_x: self.ub_x.clone(),
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.n();
        let mut f = 0.0;
        for i in 0..n {
            f += self.g[i] * x[i];
            for j in 0..n {
                f += 0.5 * x[i] * self.h[i][j] * x[j];
            }
        }
        f
    }

    pub fn feasible(&self, x: &[f64], tol: f64) -> bool {
        let rows = self.a.iter().enumerate().all(|(r, row)| {
            let ax: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            ax >= self.lb_a[r] - tol && ax <= self.ub_a[r] + tol
        });
        rows && (0..self.n()).all(|j| x[j] >= self.lb_x[j] - tol && x[j] <= self.ub_x[j] + tol)
    }

    /// Minimizes over every combination of {inactive, lower, upper} for rows
    /// and bounds with dense KKT solves; for a strictly convex QP the best
    /// feasible stationary point is the global minimizer.
    pub fn enumerate(&self) -> Option<Vec<f64>> {
        let (n, m) = (self.n(), self.m());
        let total = n + m;
        let mut best: Option<(f64, Vec<f64>)> = None;
        'codes: for code in 0..3usize.pow(total as u32) {
            let mut c = code;
            let mut eq_rows: Vec<(Vec<f64>, f64)> = Vec::new();
            for k in 0..total {
                let s = c % 3;
                c /= 3;
                if s == 0 {
                    continue;
                }
                let (row, lb, ub) = if k < m {
                    (self.a[k].clone(), self.lb_a[k], self.ub_a[k])
                } else {
                    let mut e = vec![0.0; n];
                    e[k - m] = 1.0;
                    (e, self.lb_x[k - m], self.ub_x[k - m])
                };
                // an equality row needs only one of its two identical states
                if s == 2 && lb == ub {
                    continue 'codes;
                }
                let b = if s == 1 { lb } else { ub };
                if !b.is_finite() {
                    continue 'codes;
                }
                eq_rows.push((row, b));
            }
            if eq_rows.len() > n {
                continue;
            }
            let k = eq_rows.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            let mut rhs = DVector::zeros(n + k);
            for i in 0..n {
                for j in 0..n {
                    kkt[(i, j)] = self.h[i][j];
                }
                rhs[i] = -self.g[i];
            }
            for (r, (row, b)) in eq_rows.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = row[j];
                    kkt[(j, n + r)] = row[j];
                }
                rhs[n + r] = *b;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x: Vec<f64> = (0..n).map(|i| sol[i]).collect();
            if x.iter().any(|v| !v.is_finite()) || !self.feasible(&x, 1e-9) {
                continue;
            }
            let f = self.objective(&x);
            if best.as_ref().map_or(true, |(b, _)| f < *b) {
                best = Some((f, x));
            }
        }
        best.map(|(_, x)| x)
    }
}

/// `BᵀB + I`: safely positive definite.
pub fn gram_plus_identity(b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = b.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}
