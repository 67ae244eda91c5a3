//! Forward-mode automatic differentiation.
//!
//! Model code (vehicle dynamics, costs) is written once against the [`Real`]
//! trait and evaluated with three scalar types:
//!
//! * `f64` for plain values,
//! * [`Dual`] for values plus a gradient (first-order mode),
//! * [`DiffScalar`] for values, gradient and Hessian (second-order mode).
//!
//! The free functions [`gradient`], [`jacobian`] and [`lagrangian_hessian`]
//! differentiate functions of arbitrary dimension by seeding fixed-width
//! chunks of variables. The [`fd`] module holds the central-difference
//! cross-check used to validate all of the above.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::sparse::CsrMatrix;
use crate::Error;

/// Scalar arithmetic shared by `f64` and the derivative-carrying types.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;

    fn recip(self) -> Self {
        Self::constant(1.0) / self
    }

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::constant(1.0);
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl Real for f64 {
    #[inline]
    fn constant(value: f64) -> Self {
        value
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
    #[inline]
    fn powi(self, n: u32) -> Self {
        f64::powi(self, n as i32)
    }
}

/// Value and gradient with respect to `N` seeded variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn variable(value: f64, index: usize) -> Self {
        let mut grad = [0.0; N];
        grad[index] = 1.0;
        Self { value, grad }
    }

    #[inline]
    fn chain(self, f0: f64, f1: f64) -> Self {
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= f1;
        }
        Self { value: f0, grad }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.value += rhs.value;
        for (a, b) in self.grad.iter_mut().zip(rhs.grad) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.value -= rhs.value;
        for (a, b) in self.grad.iter_mut().zip(rhs.grad) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = self.value * rhs.grad[i] + rhs.value * self.grad[i];
        }
        Self { value: self.value * rhs.value, grad }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.value;
        let value = self.value * inv;
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = (self.grad[i] - value * rhs.grad[i]) * inv;
        }
        Self { value, grad }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.value, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.value += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.value -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.chain(self.value * rhs, rhs)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        let inv = 1.0 / rhs;
        self.chain(self.value * inv, inv)
    }
}

impl<const N: usize> Real for Dual<N> {
    fn constant(value: f64) -> Self {
        Self { value, grad: [0.0; N] }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c)
    }
    fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s)
    }
    fn atan(self) -> Self {
        let v = self.value;
        self.chain(v.atan(), 1.0 / (1.0 + v * v))
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r)
    }
}

/// Value, gradient and Hessian with respect to `N` seeded variables.
///
/// Only the lower triangle of `hess` (`j <= i`) is propagated through the
/// arithmetic; [`DiffScalar::hessian`] mirrors it, so the returned matrix is
/// symmetric bit for bit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffScalar<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
    hess: [[f64; N]; N],
}

impl<const N: usize> DiffScalar<N> {
    pub fn variable(value: f64, index: usize) -> Self {
        let mut s = Self::constant(value);
        s.grad[index] = 1.0;
        s
    }

    /// Hessian entry `(i, j)`; symmetric in its arguments.
    #[inline]
    pub fn second(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.hess[i][j]
        } else {
            self.hess[j][i]
        }
    }

    pub fn hessian(&self) -> [[f64; N]; N] {
        let mut h = self.hess;
        for i in 0..N {
            for j in 0..i {
                h[j][i] = h[i][j];
            }
        }
        h
    }

    /// Applies a scalar function given its value and first two derivatives.
    #[inline]
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f0);
        for i in 0..N {
            let gi = self.grad[i];
            out.grad[i] = f1 * gi;
            let row = &mut out.hess[i];
            let src = &self.hess[i];
            let c = f2 * gi;
            for j in 0..=i {
                row[j] = f1 * src[j] + c * self.grad[j];
            }
        }
        out
    }

    #[inline]
    fn scale(mut self, k: f64) -> Self {
        self.value *= k;
        for i in 0..N {
            self.grad[i] *= k;
            for j in 0..=i {
                self.hess[i][j] *= k;
            }
        }
        self
    }
}

impl<const N: usize> Add for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.value += rhs.value;
        for i in 0..N {
            self.grad[i] += rhs.grad[i];
            for j in 0..=i {
                self.hess[i][j] += rhs.hess[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.value -= rhs.value;
        for i in 0..N {
            self.grad[i] -= rhs.grad[i];
            for j in 0..=i {
                self.hess[i][j] -= rhs.hess[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Mul for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let a = self.value;
        let b = rhs.value;
        let mut out = Self::constant(a * b);
        for i in 0..N {
            let (gai, gbi) = (self.grad[i], rhs.grad[i]);
            out.grad[i] = a * gbi + b * gai;
            for j in 0..=i {
                out.hess[i][j] = a * rhs.hess[i][j]
                    + b * self.hess[i][j]
                    + (gai * rhs.grad[j] + gbi * self.grad[j]);
            }
        }
        out
    }
}

impl<const N: usize> Div for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Neg for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Add<f64> for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.value += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.value -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl<const N: usize> Div<f64> for DiffScalar<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.scale(1.0 / rhs)
    }
}

impl<const N: usize> Real for DiffScalar<N> {
    fn constant(value: f64) -> Self {
        Self { value, grad: [0.0; N], hess: [[0.0; N]; N] }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }
    fn atan(self) -> Self {
        let v = self.value;
        let d = 1.0 / (1.0 + v * v);
        self.chain(v.atan(), d, -2.0 * v * d * d)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }
    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * r * r))
    }
    fn recip(self) -> Self {
        let inv = 1.0 / self.value;
        self.chain(inv, -inv * inv, 2.0 * inv * inv * inv)
    }
}

/// A scalar-valued function that can be evaluated on any [`Real`].
pub trait ScalarFn {
    fn eval<S: Real>(&self, x: &[S]) -> S;
}

/// A vector-valued function that can be evaluated on any [`Real`].
pub trait VectorFn {
    fn output_dim(&self) -> usize;
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]);
}

/// Number of variables seeded per first-order pass.
const CHUNK: usize = 8;
/// Variables per side of a Hessian block pass (two sides fill a `DiffScalar<8>`).
const HALF: usize = 4;

fn check_finite(v: f64, what: &str) -> Result<(), Error> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} is not finite at the evaluation point")))
    }
}

fn seed_dual(x: &[f64], start: usize) -> Vec<Dual<CHUNK>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            if i >= start && i < start + CHUNK {
                Dual::variable(v, i - start)
            } else {
                Dual::constant(v)
            }
        })
        .collect()
}

/// Exact gradient of `f` at `x`.
pub fn gradient<F: ScalarFn>(f: &F, x: &[f64]) -> Result<Vec<f64>, Error> {
    let n = x.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        check_finite(f.eval::<f64>(x), "function value")?;
    }
    for start in (0..n).step_by(CHUNK) {
        let y = f.eval(&seed_dual(x, start));
        check_finite(y.value, "function value")?;
        for k in 0..CHUNK.min(n - start) {
            out[start + k] = y.grad[k];
        }
    }
    for &g in &out {
        check_finite(g, "gradient")?;
    }
    Ok(out)
}

/// Exact Jacobian of `g` at `x` in the structural sparsity pattern of `g`.
///
/// The pattern is found by propagating dependency sets through `g`
/// (see [`jacobian_pattern`]); it never drops a structural nonzero.
pub fn jacobian<G: VectorFn>(g: &G, x: &[f64]) -> Result<CsrMatrix, Error> {
    let pattern = jacobian_pattern(g, x.len());
    jacobian_with_pattern(g, x, &pattern)
}

/// Jacobian values placed into a previously detected pattern.
pub fn jacobian_with_pattern<G: VectorFn>(
    g: &G,
    x: &[f64],
    pattern: &[Vec<usize>],
) -> Result<CsrMatrix, Error> {
    let n = x.len();
    let m = g.output_dim();
    let mut dense_rows = vec![vec![0.0; n]; m];
    let mut out = vec![Dual::<CHUNK>::constant(0.0); m];
    for start in (0..n.max(1)).step_by(CHUNK) {
        g.eval(&seed_dual(x, start), &mut out);
        for (r, y) in out.iter().enumerate() {
            check_finite(y.value, "constraint value")?;
            for k in 0..CHUNK.min(n.saturating_sub(start)) {
                dense_rows[r][start + k] = y.grad[k];
            }
        }
    }
    let mut triplets = Vec::new();
    for (r, cols) in pattern.iter().enumerate() {
        for &c in cols {
            check_finite(dense_rows[r][c], "Jacobian")?;
            triplets.push((r, c, dense_rows[r][c]));
        }
    }
    Ok(CsrMatrix::from_triplets(m, n, &triplets))
}

/// Exact Hessian of `f + lambdaᵀ g`, returned as a symmetric sparse matrix.
///
/// Pass `None` for `g` to differentiate `f` alone.
pub fn lagrangian_hessian<F: ScalarFn, G: VectorFn>(
    f: &F,
    g: Option<(&G, &[f64])>,
    x: &[f64],
) -> Result<CsrMatrix, Error> {
    let n = x.len();
    let mut dense = vec![vec![0.0; n]; n];
    let blocks: Vec<usize> = (0..n).step_by(HALF).collect();
    let m = g.map_or(0, |(g, _)| g.output_dim());
    let mut out = vec![DiffScalar::<CHUNK>::constant(0.0); m];
    for (bi, &a) in blocks.iter().enumerate() {
        for &b in &blocks[..=bi] {
            // slots 0..HALF seed block `a`, HALF..2*HALF seed block `b`
            let seeded: Vec<DiffScalar<CHUNK>> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i >= a && i < a + HALF {
                        DiffScalar::variable(v, i - a)
                    } else if a != b && i >= b && i < b + HALF {
                        DiffScalar::variable(v, HALF + i - b)
                    } else {
                        DiffScalar::constant(v)
                    }
                })
                .collect();
            let mut total = f.eval(&seeded);
            if let Some((g, lambda)) = g {
                g.eval(&seeded, &mut out);
                for (y, &l) in out.iter().zip(lambda) {
                    total = total + *y * l;
                }
            }
            check_finite(total.value, "Lagrangian value")?;
            let wa = HALF.min(n - a);
            let wb = HALF.min(n - b);
            for ia in 0..wa {
                for ja in 0..wa {
                    dense[a + ia][a + ja] = total.second(ia, ja);
                }
                if a != b {
                    for jb in 0..wb {
                        let v = total.second(ia, HALF + jb);
                        dense[a + ia][b + jb] = v;
                        dense[b + jb][a + ia] = v;
                    }
                }
            }
        }
    }
    let mut triplets = Vec::new();
    for (i, row) in dense.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            check_finite(v, "Hessian")?;
            if v != 0.0 {
                triplets.push((i, j, v));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &triplets))
}

/// Structural dependency set over up to `64 * WORDS` variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deps<const WORDS: usize>([u64; WORDS]);

impl<const W: usize> Deps<W> {
    pub const CAPACITY: usize = 64 * W;

    pub fn variable(index: usize) -> Self {
        let mut bits = [0u64; W];
        bits[index / 64] |= 1 << (index % 64);
        Self(bits)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0[index / 64] & (1 << (index % 64)) != 0
    }

    fn union(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a |= b;
        }
        self
    }
}

macro_rules! deps_binop {
    ($tr:ident, $f:ident) => {
        impl<const W: usize> $tr for Deps<W> {
            type Output = Self;
            fn $f(self, rhs: Self) -> Self {
                self.union(rhs)
            }
        }
        impl<const W: usize> $tr<f64> for Deps<W> {
            type Output = Self;
            fn $f(self, _rhs: f64) -> Self {
                self
            }
        }
    };
}
deps_binop!(Add, add);
deps_binop!(Sub, sub);
deps_binop!(Mul, mul);
deps_binop!(Div, div);

impl<const W: usize> Neg for Deps<W> {
    type Output = Self;
    fn neg(self) -> Self {
        self
    }
}

impl<const W: usize> Real for Deps<W> {
    fn constant(_value: f64) -> Self {
        Self([0; W])
    }
    // Branches in model code (e.g. velocity floors) see a neutral value;
    // dependency sets are the same on either side of those branches.
    fn value(&self) -> f64 {
        1.0
    }
    fn sin(self) -> Self {
        self
    }
    fn cos(self) -> Self {
        self
    }
    fn atan(self) -> Self {
        self
    }
    fn tanh(self) -> Self {
        self
    }
    fn sqrt(self) -> Self {
        self
    }
}

/// Row-wise structural sparsity of `g` over `n` inputs.
///
/// Falls back to a dense pattern when `n` exceeds the tracker capacity.
pub fn jacobian_pattern<G: VectorFn>(g: &G, n: usize) -> Vec<Vec<usize>> {
    type D = Deps<8>;
    let m = g.output_dim();
    if n > D::CAPACITY {
        return vec![(0..n).collect(); m];
    }
    let x: Vec<D> = (0..n).map(D::variable).collect();
    let mut out = vec![D::constant(0.0); m];
    g.eval(&x, &mut out);
    out.iter()
        .map(|d| (0..n).filter(|&j| d.contains(j)).collect())
        .collect()
}

/// Central finite differences, the cross-check for the exact derivatives.
pub mod fd {
    /// Step `1e-5 * max(1, |x_i|)`.
    pub fn step(xi: f64) -> f64 {
        1e-5 * xi.abs().max(1.0)
    }

    pub fn gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = step(x[i]);
                xp[i] = x[i] + h;
                let fp = f(&xp);
                xp[i] = x[i] - h;
                let fm = f(&xp);
                xp[i] = x[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    /// Dense `m × n` Jacobian, row-major.
    pub fn jacobian(g: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Vec<Vec<f64>> {
        let m = g(x).len();
        let mut jac = vec![vec![0.0; x.len()]; m];
        let mut xp = x.to_vec();
        for j in 0..x.len() {
            let h = step(x[j]);
            xp[j] = x[j] + h;
            let gp = g(&xp);
            xp[j] = x[j] - h;
            let gm = g(&xp);
            xp[j] = x[j];
            for i in 0..m {
                jac[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Largest entrywise error relative to `max(1, max |reference|)`.
    pub fn relative_error(approx: &[f64], reference: &[f64]) -> f64 {
        let scale = reference.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
        approx
            .iter()
            .zip(reference)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
            / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Square;
    impl ScalarFn for Square {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            x[0] * x[0]
        }
    }

    struct Constant;
    impl ScalarFn for Constant {
        fn eval<S: Real>(&self, _x: &[S]) -> S {
            S::constant(3.5)
        }
    }

    struct Identity(usize);
    impl VectorFn for Identity {
        fn output_dim(&self) -> usize {
            self.0
        }
        fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
            out.copy_from_slice(x);
        }
    }

    /// Two independent 2-in/2-out blocks.
    struct Blocks;
    impl VectorFn for Blocks {
        fn output_dim(&self) -> usize {
            4
        }
        fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
            out[0] = x[0] * x[1];
            out[1] = x[0].sin() + x[1];
            out[2] = x[2] / x[3];
            out[3] = x[3].atan();
        }
    }

    struct Quadratic(Vec<Vec<f64>>);
    impl ScalarFn for Quadratic {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            let mut acc = S::constant(0.0);
            for (i, row) in self.0.iter().enumerate() {
                for (j, &h) in row.iter().enumerate() {
                    acc = acc + x[i] * x[j] * (0.5 * h);
                }
            }
            acc
        }
    }

    struct Mixed;
    impl ScalarFn for Mixed {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            (x[0] * x[1]).sin() + x[2].tanh() * x[0] + (x[1] / (x[2] * x[2] + 1.0)).atan()
                + (x[0] * x[0] + 2.0).sqrt()
        }
    }

    struct NoConstraints;
    impl VectorFn for NoConstraints {
        fn output_dim(&self) -> usize {
            0
        }
        fn eval<S: Real>(&self, _x: &[S], _out: &mut [S]) {}
    }

    #[test]
    fn gradient_of_square() {
        assert_eq!(gradient(&Square, &[3.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        assert_eq!(gradient(&Constant, &[1.0, -2.0, 4.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn non_finite_value_is_a_domain_error() {
        struct Log;
        impl ScalarFn for Log {
            fn eval<S: Real>(&self, x: &[S]) -> S {
                x[0].sqrt()
            }
        }
        assert!(matches!(gradient(&Log, &[-1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn jacobian_of_identity() {
        let j = jacobian(&Identity(5), &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        for i in 0..5 {
            for k in 0..5 {
                assert_eq!(j.get(i, k), if i == k { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(j.nnz(), 5);
    }

    #[test]
    fn jacobian_pattern_is_block_diagonal() {
        let pattern = jacobian_pattern(&Blocks, 4);
        assert_eq!(pattern, vec![vec![0, 1], vec![0, 1], vec![2, 3], vec![3]]);
    }

    #[test]
    fn hessian_of_quadratic_is_exact() {
        let h = vec![
            vec![4.0, 1.0, 0.5, 0.0, 0.0, 0.2],
            vec![1.0, 3.0, 0.0, 0.0, 0.1, 0.0],
            vec![0.5, 0.0, 2.0, 0.3, 0.0, 0.0],
            vec![0.0, 0.0, 0.3, 5.0, 0.0, 0.0],
            vec![0.0, 0.1, 0.0, 0.0, 1.0, 0.7],
            vec![0.2, 0.0, 0.0, 0.0, 0.7, 6.0],
        ];
        let x = [0.3, -1.0, 2.0, 0.5, -0.7, 1.1];
        let hess =
            lagrangian_hessian::<_, NoConstraints>(&Quadratic(h.clone()), None, &x).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((hess.get(i, j) - h[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_multipliers_give_objective_hessian() {
        let x = [0.4, -0.3, 0.9, 1.2];
        let with = lagrangian_hessian(&Mixed, Some((&Blocks, &[0.0; 4][..])), &x).unwrap();
        let without = lagrangian_hessian::<_, Blocks>(&Mixed, None, &x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(with.get(i, j), without.get(i, j));
            }
        }
    }

    #[test]
    fn hessian_matches_fd_of_gradient() {
        let x = [0.4, -0.3, 0.9, 1.2];
        let lambda = [0.7, -1.3, 0.4, 2.0];
        let hess = lagrangian_hessian(&Mixed, Some((&Blocks, &lambda[..])), &x).unwrap();
        let grad_l = |p: &[f64]| {
            let mut g = gradient(&Mixed, p).unwrap();
            let j = jacobian(&Blocks, p).unwrap();
            let jt = j.transpose_mul(&lambda);
            for (a, b) in g.iter_mut().zip(jt) {
                *a += b;
            }
            g
        };
        let fd = fd::jacobian(grad_l, &x);
        for i in 0..4 {
            for j in 0..4 {
                assert!((hess.get(i, j) - fd[i][j]).abs() < 1e-6, "({i},{j})");
                assert_eq!(hess.get(i, j), hess.get(j, i));
            }
        }
    }

    proptest! {
        #[test]
        fn product_rule(a in -5.0..5.0f64, b in -5.0..5.0f64, da in -2.0..2.0f64, db in -2.0..2.0f64) {
            let mut x = DiffScalar::<2>::constant(a);
            x.grad = [da, 0.0];
            let mut y = DiffScalar::<2>::constant(b);
            y.grad = [0.0, db];
            let p = x * y;
            prop_assert!((p.grad[0] - b * da).abs() < 1e-12);
            prop_assert!((p.grad[1] - a * db).abs() < 1e-12);
            prop_assert!((p.second(1, 0) - da * db).abs() < 1e-12);
        }

        #[test]
        fn gradient_matches_fd(x0 in -2.0..2.0f64, x1 in -2.0..2.0f64, x2 in -2.0..2.0f64) {
            let x = [x0, x1, x2];
            let g = gradient(&Mixed, &x).unwrap();
            let reference = fd::gradient(|p| Mixed.eval::<f64>(p), &x);
            prop_assert!(fd::relative_error(&g, &reference) < 1e-6);
        }

        #[test]
        fn dual_and_diff_scalar_agree(v in 0.1..3.0f64) {
            let d = Dual::<1>::variable(v, 0);
            let s = DiffScalar::<1>::variable(v, 0);
            let fd_ = (d.sin() * d.atan() / d.sqrt()).tanh();
            let fs = (s.sin() * s.atan() / s.sqrt()).tanh();
            prop_assert!((fd_.value - fs.value).abs() < 1e-14);
            prop_assert!((fd_.grad[0] - fs.grad[0]).abs() < 1e-12);
        }
    }
}
