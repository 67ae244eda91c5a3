//! Symmetric banded LDLᵀ without pivoting, with inertia.
//!
//! KKT matrices are ordered so that every constraint row follows the free
//! variables it touches. Under that ordering the multiple-shooting structure
//! gives a narrow band, and the factorization needs no pivoting when the
//! reduced Hessian is positive definite. The pivot signs give the inertia,
//! which the QP solver uses to detect non-convexity on the working set.

/// Lower band of a symmetric matrix, row-major: entry `(i, j)` for
/// `i - bw <= j <= i` lives at `i * (bw + 1) + bw - (i - j)`.
#[derive(Clone, Debug)]
pub(crate) struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Adds `v` at `(i, j)`, either triangle.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.idx(i, i)] * x[i];
        }
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// `A = L D Lᵀ` with unit lower-banded `L`.
#[derive(Clone, Debug)]
pub(crate) struct BandLdl {
    factor: BandMatrix,
    d: Vec<f64>,
    inertia: Inertia,
}

impl BandLdl {
    /// Factors `a`. Pivots with magnitude below `pivot_tol * max|a|` are
    /// counted as zero and the factorization stops there.
    pub fn factor(a: &BandMatrix, pivot_tol: f64) -> Self {
        let n = a.n;
        let bw = a.bw;
        let mut f = a.clone();
        let mut d = vec![0.0; n];
        let tol = pivot_tol * a.max_abs().max(1.0);
        let mut inertia = Inertia { positive: 0, negative: 0, zero: 0 };
        let mut w = vec![0.0; bw + 1];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            // Row i of L: L_ij = (a_ij - sum_k L_ik d_k L_jk) / d_j
            for j in lo..i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = f.data[f.idx(i, j)];
                for k in klo..j {
                    s -= w[k - lo] * f.data[f.idx(j, k)];
                }
                // w holds L_ik d_k for k < j
                w[j - lo] = s;
                let lij = s / d[j];
                let idx = f.idx(i, j);
                f.data[idx] = lij;
            }
            let mut dii = f.data[f.idx(i, i)];
            for j in lo..i {
                dii -= w[j - lo] * f.data[f.idx(i, j)];
            }
            d[i] = dii;
            if !dii.is_finite() || dii.abs() <= tol {
                inertia.zero += n - i;
                break;
            } else if dii > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
        }
        Self { factor: f, d, inertia }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let f = &self.factor;
        let n = f.n;
        for i in 0..n {
            let lo = i.saturating_sub(f.bw);
            let mut s = b[i];
            for j in lo..i {
                s -= f.data[f.idx(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let hi = (i + f.bw).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= f.data[f.idx(j, i)] * b[j];
            }
            b[i] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_kkt_and_reports_inertia() {
        // [2 0 1; 0 3 1; 1 1 0], ordered with the constraint last
        let mut a = BandMatrix::zeros(3, 2);
        a.add(0, 0, 2.0);
        a.add(1, 1, 3.0);
        a.add(2, 0, 1.0);
        a.add(2, 1, 1.0);
        let ldl = BandLdl::factor(&a, 1e-14);
        assert_eq!(ldl.inertia(), Inertia { positive: 2, negative: 1, zero: 0 });
        let mut x = vec![1.0, 2.0, 3.0];
        ldl.solve_in_place(&mut x);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn tridiagonal_matches_dense_solution() {
        let n = 50;
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        let ldl = BandLdl::factor(&a, 1e-14);
        assert_eq!(ldl.inertia().positive, n);
        ldl.solve_in_place(&mut x);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_reports_zero_pivot() {
        let mut a = BandMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        assert!(BandLdl::factor(&a, 1e-12).inertia().zero > 0);
    }
}
