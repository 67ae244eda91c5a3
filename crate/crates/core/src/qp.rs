//! Primal active-set solver for sparse convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀ H x + gᵀ x
//! subject to  lb_a ≤ A x ≤ ub_a,   lb_x ≤ x ≤ ub_x
//! ```
//!
//! Equality constraints are rows (or bounds) with `lb == ub`. Each iteration
//! solves the equality-constrained QP on the current working set: active
//! bounds fix their variables, active rows enter a KKT system that is
//! ordered into a narrow band and factored with a banded LDLᵀ. Pivot signs
//! certify that the Hessian is positive definite on the working set; when it
//! is not, `τ I` is added with `τ` doubling from `1e-8`.
//!
//! Multipliers follow the convention `H x + g + Aᵀ λ + ν = 0`, so a
//! constraint at its upper bound carries a non-negative multiplier and one at
//! its lower bound a non-positive one.

use std::fmt::Write as _;
use std::path::Path;

use crate::band::{BandLdl, BandMatrix};
use crate::sparse::CsrMatrix;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundStatus {
    Inactive,
    Lower,
    Upper,
}

impl BoundStatus {
    pub fn is_active(self) -> bool {
        self != BoundStatus::Inactive
    }
}

/// Working-set status of every constraint row and variable bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    pub constraints: Vec<BoundStatus>,
    pub bounds: Vec<BoundStatus>,
}

impl ActiveSet {
    pub fn inactive(m: usize, n: usize) -> Self {
        Self { constraints: vec![BoundStatus::Inactive; m], bounds: vec![BoundStatus::Inactive; n] }
    }

    /// Number of entries whose status differs from `other`.
    pub fn changes_from(&self, other: &ActiveSet) -> usize {
        let rows = self.constraints.iter().zip(&other.constraints).filter(|(a, b)| a != b).count();
        let vars = self.bounds.iter().zip(&other.bounds).filter(|(a, b)| a != b).count();
        rows + vars
    }

    fn set(&mut self, item: Item, s: BoundStatus) {
        match item {
            Item::Row(r) => self.constraints[r] = s,
            Item::Var(j) => self.bounds[j] = s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Item {
    Row(usize),
    Var(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    /// Full symmetric Hessian.
    pub h: CsrMatrix,
    pub g: Vec<f64>,
    pub a: CsrMatrix,
    pub lb_a: Vec<f64>,
    pub ub_a: Vec<f64>,
    pub lb_x: Vec<f64>,
    pub ub_x: Vec<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.lb_a.len()
    }

    pub fn check_dimensions(&self) -> Result<(), Error> {
        let (n, m) = (self.n(), self.m());
        let ok = self.h.nrows() == n
            && self.h.ncols() == n
            && self.a.nrows() == m
            && self.a.ncols() == n
            && self.ub_a.len() == m
            && self.lb_x.len() == n
            && self.ub_x.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("QP with n = {n}, m = {m} has inconsistent blocks")))
        }
    }

    fn bounds_consistent(&self) -> bool {
        self.lb_a.iter().zip(&self.ub_a).all(|(l, u)| l <= u)
            && self.lb_x.iter().zip(&self.ub_x).all(|(l, u)| l <= u)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let hx = self.h.mul_vec(x);
        x.iter().zip(&hx).zip(&self.g).map(|((xi, hi), gi)| 0.5 * xi * hi + gi * xi).sum()
    }

    /// `‖H x + g + Aᵀ λ + ν‖∞` for the stacked dual `(λ, ν)`.
    pub fn stationarity(&self, x: &[f64], dual: &[f64]) -> f64 {
        let m = self.m();
        let mut r = self.h.mul_vec(x);
        let at = self.a.transpose_mul(&dual[..m]);
        for j in 0..self.n() {
            r[j] += self.g[j] + at[j] + dual[m + j];
        }
        r.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
    }

    /// Largest violation of any row or bound.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let ax = self.a.mul_vec(x);
        let rows = ax
            .iter()
            .zip(self.lb_a.iter().zip(&self.ub_a))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0));
        let vars = x
            .iter()
            .zip(self.lb_x.iter().zip(&self.ub_x))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0));
        rows.chain(vars).fold(0.0, f64::max)
    }

    /// Writes the problem as a sequence of Matrix Market blocks.
    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let mut s = String::new();
        for (name, m) in [("H", &self.h), ("A", &self.a)] {
            let _ = writeln!(s, "%%MatrixMarket matrix coordinate real general");
            let _ = writeln!(s, "% block {name}");
            let _ = writeln!(s, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
            for (i, j, v) in m.triplets() {
                let _ = writeln!(s, "{} {} {:e}", i + 1, j + 1, v);
            }
        }
        for (name, v) in [
            ("g", &self.g),
            ("lb_a", &self.lb_a),
            ("ub_a", &self.ub_a),
            ("lb_x", &self.lb_x),
            ("ub_x", &self.ub_x),
        ] {
            let _ = writeln!(s, "%%MatrixMarket matrix array real general");
            let _ = writeln!(s, "% block {name}");
            let _ = writeln!(s, "{} 1", v.len());
            for x in v.iter() {
                let _ = writeln!(s, "{x:e}");
            }
        }
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path, e))
    }

    pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let bad = |msg: &str| Error::Config(format!("{}: {msg}", path.as_ref().display()));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
        let mut matrices = Vec::new();
        let mut vectors = Vec::new();
        while let Some(header) = lines.next() {
            let coordinate = header.contains("coordinate");
            while lines.peek().is_some_and(|l| l.starts_with('%')) {
                lines.next();
            }
            let dims: Vec<usize> = lines
                .next()
                .ok_or_else(|| bad("missing size line"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad size line")))
                .collect::<Result<_, _>>()?;
            if coordinate {
                let (r, c, nnz) = (dims[0], dims[1], dims[2]);
                let mut t = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    let line = lines.next().ok_or_else(|| bad("truncated matrix"))?;
                    let mut it = line.split_whitespace();
                    let i: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad entry"))?;
                    let j: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad entry"))?;
                    let v: f64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad entry"))?;
                    t.push((i - 1, j - 1, v));
                }
                matrices.push(CsrMatrix::from_triplets(r, c, &t));
            } else {
                let mut v = Vec::with_capacity(dims[0]);
                for _ in 0..dims[0] {
                    let line = lines.next().ok_or_else(|| bad("truncated vector"))?;
                    v.push(line.trim().parse::<f64>().map_err(|_| bad("bad vector entry"))?);
                }
                vectors.push(v);
            }
        }
        if matrices.len() != 2 || vectors.len() != 5 {
            return Err(bad("expected blocks H, A, g, lb_a, ub_a, lb_x, ub_x"));
        }
        let mut v = vectors.into_iter();
        let mut mats = matrices.into_iter();
        let qp = QpProblem {
            h: mats.next().unwrap(),
            a: mats.next().unwrap(),
            g: v.next().unwrap(),
            lb_a: v.next().unwrap(),
            ub_a: v.next().unwrap(),
            lb_x: v.next().unwrap(),
            ub_x: v.next().unwrap(),
        };
        qp.check_dimensions()?;
        Ok(qp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub primal: Vec<f64>,
    /// Row multipliers followed by bound multipliers (`m + n` entries).
    pub dual: Vec<f64>,
    pub active_set: ActiveSet,
    pub status: QpStatus,
    /// Number of equality-constrained subproblems solved.
    pub iterations: usize,
    /// Largest Hessian shift used to convexify a working set.
    pub regularization: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    pub feasibility_tol: f64,
    pub stationarity_tol: f64,
    /// Multipliers of the wrong sign smaller than this are treated as zero.
    pub dual_tol: f64,
    pub pivot_tol: f64,
    pub initial_regularization: f64,
    pub max_regularization: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            feasibility_tol: 1e-8,
            stationarity_tol: 1e-8,
            dual_tol: 1e-9,
            pivot_tol: 1e-13,
            initial_regularization: 1e-8,
            max_regularization: 1e6,
        }
    }
}

/// KKT node ordering for one working set.
#[derive(Clone, Debug)]
struct Symbolic {
    free: Vec<bool>,
    rows: Vec<usize>,
    /// Band position of each free variable (`usize::MAX` when fixed).
    var_pos: Vec<usize>,
    /// Band position of each entry of `rows`, `None` if it touches no free variable.
    row_pos: Vec<Option<usize>>,
    size: usize,
    bandwidth: usize,
}

struct Eqp {
    x: Vec<f64>,
    lambda: Vec<f64>,
    regularization: f64,
}

/// Reusable solver workspace; one solve at a time.
#[derive(Clone, Debug, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    symbolic: Option<Symbolic>,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, symbolic: None }
    }

    pub fn solve(&mut self, qp: &QpProblem, warm: Option<&ActiveSet>) -> Result<QpSolution, Error> {
        qp.check_dimensions()?;
        let (n, m) = (qp.n(), qp.m());
        if !qp.bounds_consistent() {
            return Ok(QpSolution {
                primal: vec![0.0; n],
                dual: vec![0.0; m + n],
                active_set: ActiveSet::inactive(m, n),
                status: QpStatus::Infeasible,
                iterations: 0,
                regularization: 0.0,
            });
        }
        let Some(warm) = warm else {
            return Ok(self.solve_from(qp, initial_working_set(qp, None), 0));
        };
        let sol = self.solve_from(qp, initial_working_set(qp, Some(warm)), 0);
        if sol.status == QpStatus::Solved {
            return Ok(sol);
        }
        // A poor guess can strand phase 1; retry from the equalities alone.
        Ok(self.solve_from(qp, initial_working_set(qp, None), sol.iterations))
    }

    fn solve_from(&mut self, qp: &QpProblem, mut ws: ActiveSet, spent: usize) -> QpSolution {
        let (n, m) = (qp.n(), qp.m());
        let tol = self.settings.feasibility_tol;
        let max_iter = self.settings.max_iter.max(1);
        let mut iterations = spent + 1;
        let first = match self.solve_eqp(qp, &ws) {
            Some(e) => e,
            None => {
                // Dependent rows make the KKT matrix singular; let phase 1
                // add rows one at a time and skip those it cannot use.
                ws.constraints.fill(BoundStatus::Inactive);
                iterations += 1;
                match self.solve_eqp(qp, &ws) {
                    Some(e) => e,
                    None => return self.finish(qp, vec![0.0; n], vec![0.0; m], ws, QpStatus::Infeasible, iterations, 0.0),
                }
            }
        };
        let mut reg = first.regularization;
        let mut x = first.x;
        let mut lambda = first.lambda;

        // Phase 1: pull in the most violated constraint until feasible.
        let mut skipped = vec![false; m + n];
        loop {
            let Some((item, side)) = most_violated(qp, &x, &ws, &skipped, tol) else {
                break;
            };
            if iterations >= max_iter {
                return self.finish(qp, x, lambda, ws, QpStatus::MaxIter, iterations, reg);
            }
            ws.set(item, side);
            iterations += 1;
            match self.solve_eqp(qp, &ws) {
                Some(e) => {
                    reg = reg.max(e.regularization);
                    x = e.x;
                    lambda = e.lambda;
                }
                None => {
                    ws.set(item, BoundStatus::Inactive);
                    skipped[item_index(item, m)] = true;
                }
            }
        }
        if qp.infeasibility(&x) > tol {
            return self.elastic(qp, &x, iterations, reg);
        }
        self.phase_two(qp, x, lambda, ws, true, iterations, reg)
    }

    /// Feasible primal active-set iterations from `x`.
    #[allow(clippy::too_many_arguments)]
    fn phase_two(
        &mut self,
        qp: &QpProblem,
        mut x: Vec<f64>,
        mut lambda: Vec<f64>,
        mut ws: ActiveSet,
        mut at_minimizer: bool,
        mut iterations: usize,
        mut reg: f64,
    ) -> QpSolution {
        let max_iter = self.settings.max_iter.max(1);
        loop {
            if at_minimizer {
                match wrong_sign_multiplier(qp, &x, &lambda, &ws, self.settings.dual_tol) {
                    None => {
                        return self.finish(qp, x, lambda, ws, QpStatus::Solved, iterations, reg);
                    }
                    Some(item) => ws.set(item, BoundStatus::Inactive),
                }
            }
            if iterations >= max_iter {
                return self.finish(qp, x, lambda, ws, QpStatus::MaxIter, iterations, reg);
            }
            iterations += 1;
            let Some(e) = self.solve_eqp(qp, &ws) else {
                return self.finish(qp, x, lambda, ws, QpStatus::MaxIter, iterations, reg);
            };
            reg = reg.max(e.regularization);
            let p: Vec<f64> = e.x.iter().zip(&x).map(|(a, b)| a - b).collect();
            match ratio_test(qp, &x, &p, &ws) {
                Some((alpha, item, side)) => {
                    for (xi, pi) in x.iter_mut().zip(&p) {
                        *xi += alpha * pi;
                    }
                    if let Item::Var(j) = item {
                        x[j] = if side == BoundStatus::Lower { qp.lb_x[j] } else { qp.ub_x[j] };
                    }
                    ws.set(item, side);
                    at_minimizer = false;
                }
                None => {
                    x = e.x;
                    lambda = e.lambda;
                    at_minimizer = true;
                }
            }
        }
    }

    /// Fallback when phase 1 stalls: one slack `t ≥ 0` relaxes every violated
    /// row, making the clipped point feasible, and `M t` penalizes it. Under an
    /// exact penalty the minimizer has `t = 0` iff the QP is feasible.
    fn elastic(&mut self, qp: &QpProblem, start: &[f64], mut iterations: usize, reg: f64) -> QpSolution {
        let (n, m) = (qp.n(), qp.m());
        let tol = self.settings.feasibility_tol;
        let x0: Vec<f64> = (0..n).map(|j| start[j].clamp(qp.lb_x[j], qp.ub_x[j])).collect();
        let h_scale = qp.h.triplets().fold(0.0_f64, |a, (_, _, v)| a.max(v.abs()));
        let g_scale = qp.g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut penalty = 1e3 * (1.0 + h_scale + g_scale);
        let mut last = None;
        for _ in 0..3 {
            let (aug, origin, xa, ws) = elastic_problem(qp, &x0, penalty);
            let mut sub = QpSolver::new(self.settings);
            let sol = sub.phase_two(&aug, xa, vec![0.0; aug.m()], ws, false, iterations, reg);
            iterations = sol.iterations;
            let x = sol.primal[..n].to_vec();
            let mut out = ActiveSet::inactive(m, n);
            let mut lambda = vec![0.0; m];
            for (k, &r) in origin.iter().enumerate() {
                if sol.active_set.constraints[k].is_active() {
                    out.constraints[r] = sol.active_set.constraints[k];
                    lambda[r] += sol.dual[k];
                }
            }
            out.bounds.copy_from_slice(&sol.active_set.bounds[..n]);
            let reg = reg.max(sol.regularization);
            if sol.status != QpStatus::Solved {
                return self.finish(qp, x, lambda, out, sol.status, iterations, reg);
            }
            if sol.primal[n] <= tol && qp.infeasibility(&x) <= tol {
                return self.finish(qp, x, lambda, out, QpStatus::Solved, iterations, reg);
            }
            last = Some((x, lambda, out, reg));
            penalty *= 1e3;
        }
        let (x, lambda, out, reg) = last.expect("at least one elastic solve");
        self.finish(qp, x, lambda, out, QpStatus::Infeasible, iterations, reg)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        qp: &QpProblem,
        x: Vec<f64>,
        lambda: Vec<f64>,
        ws: ActiveSet,
        status: QpStatus,
        iterations: usize,
        regularization: f64,
    ) -> QpSolution {
        let (n, m) = (qp.n(), qp.m());
        let mut dual = vec![0.0; m + n];
        for r in 0..m {
            if ws.constraints[r].is_active() {
                dual[r] = lambda[r];
            }
        }
        let mut resid = qp.h.mul_vec(&x);
        let at = qp.a.transpose_mul(&dual[..m]);
        for j in 0..n {
            resid[j] += qp.g[j] + at[j];
            if ws.bounds[j].is_active() {
                dual[m + j] = -resid[j];
            }
        }
        QpSolution { primal: x, dual, active_set: ws, status, iterations, regularization }
    }

    fn symbolic(&mut self, qp: &QpProblem, ws: &ActiveSet) -> Symbolic {
        let n = qp.n();
        let free: Vec<bool> = ws.bounds.iter().map(|s| !s.is_active()).collect();
        let rows: Vec<usize> = (0..qp.m()).filter(|&r| ws.constraints[r].is_active()).collect();
        if let Some(s) = &self.symbolic {
            if s.free == free && s.rows == rows {
                return s.clone();
            }
        }
        // Each working row is placed right after the last free variable it touches.
        let mut rows_after: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut row_slot = vec![None; rows.len()];
        for (k, &r) in rows.iter().enumerate() {
            // structural pattern only: the ordering is cached across value changes
            let (cols, _) = qp.a.row(r);
            if let Some(last) = cols.iter().copied().filter(|&c| free[c]).max() {
                rows_after[last].push(k);
                row_slot[k] = Some(last);
            }
        }
        let mut var_pos = vec![usize::MAX; n];
        let mut row_pos = vec![None; rows.len()];
        let mut next = 0;
        for j in 0..n {
            if free[j] {
                var_pos[j] = next;
                next += 1;
            }
            for &k in &rows_after[j] {
                row_pos[k] = Some(next);
                next += 1;
            }
        }
        let mut bandwidth = 0;
        for i in 0..n {
            if !free[i] {
                continue;
            }
            let (cols, _) = qp.h.row(i);
            for &j in cols {
                if free[j] {
                    bandwidth = bandwidth.max(var_pos[i].abs_diff(var_pos[j]));
                }
            }
        }
        for (k, &r) in rows.iter().enumerate() {
            if let Some(pr) = row_pos[k] {
                let (cols, _) = qp.a.row(r);
                for &j in cols {
                    if free[j] {
                        bandwidth = bandwidth.max(pr - var_pos[j]);
                    }
                }
            }
        }
        let s = Symbolic { free, rows, var_pos, row_pos, size: next, bandwidth };
        self.symbolic = Some(s.clone());
        s
    }

    /// Minimizer of the QP restricted to the working set.
    fn solve_eqp(&mut self, qp: &QpProblem, ws: &ActiveSet) -> Option<Eqp> {
        let sym = self.symbolic(qp, ws);
        let n = qp.n();
        let mut x = vec![0.0; n];
        for j in 0..n {
            match ws.bounds[j] {
                BoundStatus::Lower => x[j] = qp.lb_x[j],
                BoundStatus::Upper => x[j] = qp.ub_x[j],
                BoundStatus::Inactive => {}
            }
        }
        let mut kkt = BandMatrix::zeros(sym.size, sym.bandwidth);
        let mut rhs = vec![0.0; sym.size];
        let mut n_free = 0;
        for i in 0..n {
            if !sym.free[i] {
                continue;
            }
            n_free += 1;
            let pi = sym.var_pos[i];
            rhs[pi] = -qp.g[i];
            let (cols, vals) = qp.h.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if sym.free[j] {
                    if sym.var_pos[j] <= pi {
                        kkt.add(pi, sym.var_pos[j], v);
                    }
                } else {
                    rhs[pi] -= v * x[j];
                }
            }
        }
        let mut n_rows = 0;
        for (k, &r) in sym.rows.iter().enumerate() {
            let Some(pr) = sym.row_pos[k] else { continue };
            n_rows += 1;
            let b = match ws.constraints[r] {
                BoundStatus::Upper => qp.ub_a[r],
                _ => qp.lb_a[r],
            };
            rhs[pr] = b;
            let (cols, vals) = qp.a.row(r);
            for (&j, &v) in cols.iter().zip(vals) {
                if sym.free[j] {
                    kkt.add(pr, sym.var_pos[j], v);
                } else {
                    rhs[pr] -= v * x[j];
                }
            }
        }

        let mut tau = 0.0;
        loop {
            let mut k = kkt.clone();
            if tau > 0.0 {
                for j in 0..n {
                    if sym.free[j] {
                        k.add(sym.var_pos[j], sym.var_pos[j], tau);
                    }
                }
            }
            let ldl = BandLdl::factor(&k, self.settings.pivot_tol);
            let inertia = ldl.inertia();
            if inertia.zero == 0 && inertia.positive == n_free && inertia.negative == n_rows {
                let mut sol = rhs.clone();
                ldl.solve_in_place(&mut sol);
                // one step of iterative refinement
                let ks = k.mul_vec(&sol);
                let mut corr: Vec<f64> = rhs.iter().zip(&ks).map(|(b, a)| b - a).collect();
                ldl.solve_in_place(&mut corr);
                for (s, c) in sol.iter_mut().zip(&corr) {
                    *s += c;
                }
                if sol.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                for j in 0..n {
                    if sym.free[j] {
                        x[j] = sol[sym.var_pos[j]];
                    }
                }
                let mut lambda = vec![0.0; qp.m()];
                for (k, &r) in sym.rows.iter().enumerate() {
                    match sym.row_pos[k] {
                        Some(pr) => lambda[r] = sol[pr],
                        None => {
                            // a row over fixed variables only must already hold
                            let b = if ws.constraints[r] == BoundStatus::Upper { qp.ub_a[r] } else { qp.lb_a[r] };
                            if (qp.a.row_dot(r, &x) - b).abs() > self.settings.feasibility_tol * (1.0 + b.abs()) {
                                return None;
                            }
                        }
                    }
                }
                return Some(Eqp { x, lambda, regularization: tau });
            }
            tau = if tau == 0.0 { self.settings.initial_regularization } else { 2.0 * tau };
            if tau > self.settings.max_regularization {
                return None;
            }
        }
    }
}

/// Convenience wrapper around a fresh [`QpSolver`] with `max_iter` iterations.
pub fn solve_qp(qp: &QpProblem, warm: Option<&ActiveSet>, max_iter: usize) -> Result<QpSolution, Error> {
    QpSolver::new(QpSettings { max_iter, ..QpSettings::default() }).solve(qp, warm)
}

/// Builds the elastic problem over `(x, t)`. Returns it with the original row
/// of every elastic row, the feasible start and its working set.
fn elastic_problem(qp: &QpProblem, x0: &[f64], penalty: f64) -> (QpProblem, Vec<usize>, Vec<f64>, ActiveSet) {
    let (n, m) = (qp.n(), qp.m());
    let ax = qp.a.mul_vec(x0);
    let t0 = (0..m).map(|r| (qp.lb_a[r] - ax[r]).max(ax[r] - qp.ub_a[r])).fold(0.0, f64::max);
    let mut triplets = Vec::new();
    let (mut lb_a, mut ub_a, mut origin, mut status) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut push = |r: usize, t_coef: f64, lb: f64, ub: f64, s: BoundStatus| {
        let k = origin.len();
        let (cols, vals) = qp.a.row(r);
        triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (k, c, v)));
        if t_coef != 0.0 {
            triplets.push((k, n, t_coef));
        }
        lb_a.push(lb);
        ub_a.push(ub);
        origin.push(r);
        status.push(s);
    };
    for r in 0..m {
        let (lb, ub) = (qp.lb_a[r], qp.ub_a[r]);
        if ax[r] > ub {
            push(r, -1.0, f64::NEG_INFINITY, ub, BoundStatus::Inactive);
            if lb.is_finite() {
                push(r, 0.0, lb, f64::INFINITY, BoundStatus::Inactive);
            }
        } else if ax[r] < lb {
            push(r, 1.0, lb, f64::INFINITY, BoundStatus::Inactive);
            if ub.is_finite() {
                push(r, 0.0, f64::NEG_INFINITY, ub, BoundStatus::Inactive);
            }
        } else {
            let s = if lb == ub { BoundStatus::Lower } else { BoundStatus::Inactive };
            push(r, 0.0, lb, ub, s);
        }
    }
    let mut h: Vec<_> = qp.h.triplets().collect();
    h.push((n, n, 1.0));
    let mut g = qp.g.clone();
    g.push(penalty);
    let mut lb_x = qp.lb_x.clone();
    lb_x.push(0.0);
    let mut ub_x = qp.ub_x.clone();
    ub_x.push(f64::INFINITY);
    let bounds = (0..n)
        .map(|j| if qp.lb_x[j] == qp.ub_x[j] { BoundStatus::Lower } else { BoundStatus::Inactive })
        .chain(std::iter::once(BoundStatus::Inactive))
        .collect();
    let aug = QpProblem {
        h: CsrMatrix::from_triplets(n + 1, n + 1, &h),
        g,
        a: CsrMatrix::from_triplets(origin.len(), n + 1, &triplets),
        lb_a,
        ub_a,
        lb_x,
        ub_x,
    };
    let mut xa = x0.to_vec();
    xa.push(t0);
    (aug, origin, xa, ActiveSet { constraints: status, bounds })
}

fn item_index(item: Item, m: usize) -> usize {
    match item {
        Item::Row(r) => r,
        Item::Var(j) => m + j,
    }
}

fn initial_working_set(qp: &QpProblem, warm: Option<&ActiveSet>) -> ActiveSet {
    let pick = |lb: f64, ub: f64, hint: Option<BoundStatus>| {
        if lb == ub {
            BoundStatus::Lower
        } else {
            match hint {
                Some(BoundStatus::Lower) if lb.is_finite() => BoundStatus::Lower,
                Some(BoundStatus::Upper) if ub.is_finite() => BoundStatus::Upper,
                _ => BoundStatus::Inactive,
            }
        }
    };
    let warm = warm.filter(|w| w.constraints.len() == qp.m() && w.bounds.len() == qp.n());
    ActiveSet {
        constraints: (0..qp.m())
            .map(|r| pick(qp.lb_a[r], qp.ub_a[r], warm.map(|w| w.constraints[r])))
            .collect(),
        bounds: (0..qp.n()).map(|j| pick(qp.lb_x[j], qp.ub_x[j], warm.map(|w| w.bounds[j]))).collect(),
    }
}

/// Largest violation among inactive rows and bounds; ties go to the lowest index.
fn most_violated(
    qp: &QpProblem,
    x: &[f64],
    ws: &ActiveSet,
    skipped: &[bool],
    tol: f64,
) -> Option<(Item, BoundStatus)> {
    let m = qp.m();
    let mut best: Option<(f64, Item, BoundStatus)> = None;
    let mut consider = |viol: f64, item: Item, side: BoundStatus| {
        if viol > tol && best.map_or(true, |(b, _, _)| viol > b) {
            best = Some((viol, item, side));
        }
    };
    for r in 0..m {
        if ws.constraints[r].is_active() || skipped[r] {
            continue;
        }
        let ax = qp.a.row_dot(r, x);
        consider(qp.lb_a[r] - ax, Item::Row(r), BoundStatus::Lower);
        consider(ax - qp.ub_a[r], Item::Row(r), BoundStatus::Upper);
    }
    for j in 0..qp.n() {
        if ws.bounds[j].is_active() || skipped[m + j] {
            continue;
        }
        consider(qp.lb_x[j] - x[j], Item::Var(j), BoundStatus::Lower);
        consider(x[j] - qp.ub_x[j], Item::Var(j), BoundStatus::Upper);
    }
    best.map(|(_, item, side)| (item, side))
}

/// The working inequality whose multiplier most violates its sign condition.
fn wrong_sign_multiplier(
    qp: &QpProblem,
    x: &[f64],
    lambda: &[f64],
    ws: &ActiveSet,
    tol: f64,
) -> Option<Item> {
    let m = qp.m();
    let signed = |s: BoundStatus, v: f64| if s == BoundStatus::Upper { v } else { -v };
    let mut best: Option<(f64, Item)> = None;
    for r in 0..m {
        let s = ws.constraints[r];
        if s.is_active() && qp.lb_a[r] != qp.ub_a[r] {
            let v = signed(s, lambda[r]);
            if v < -tol && best.map_or(true, |(b, _)| v < b) {
                best = Some((v, Item::Row(r)));
            }
        }
    }
    if ws.bounds.iter().any(|s| s.is_active()) {
        let mut resid = qp.h.mul_vec(x);
        let at = qp.a.transpose_mul(lambda);
        for j in 0..qp.n() {
            resid[j] += qp.g[j] + at[j];
        }
        for j in 0..qp.n() {
            let s = ws.bounds[j];
            if s.is_active() && qp.lb_x[j] != qp.ub_x[j] {
                let v = signed(s, -resid[j]);
                if v < -tol && best.map_or(true, |(b, _)| v < b) {
                    best = Some((v, Item::Var(j)));
                }
            }
        }
    }
    best.map(|(_, item)| item)
}

/// First inactive constraint hit along `x + α p`, `α < 1`; smallest index wins ties.
fn ratio_test(qp: &QpProblem, x: &[f64], p: &[f64], ws: &ActiveSet) -> Option<(f64, Item, BoundStatus)> {
    let pnorm = p.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    if pnorm == 0.0 {
        return None;
    }
    let mut best: Option<(f64, Item, BoundStatus)> = None;
    let mut consider = |alpha: f64, item: Item, side: BoundStatus| {
        let alpha = alpha.max(0.0);
        if alpha < 1.0 && best.map_or(true, |(b, _, _)| alpha < b) {
            best = Some((alpha, item, side));
        }
    };
    for r in 0..qp.m() {
        if ws.constraints[r].is_active() {
            continue;
        }
        let (cols, vals) = qp.a.row(r);
        let mut ap = 0.0;
        let mut ax = 0.0;
        let mut row_norm = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            ap += v * p[c];
            ax += v * x[c];
            row_norm += v.abs();
        }
        let eps = 1e-12 * row_norm * pnorm;
        if ap > eps && qp.ub_a[r].is_finite() {
            consider((qp.ub_a[r] - ax) / ap, Item::Row(r), BoundStatus::Upper);
        } else if ap < -eps && qp.lb_a[r].is_finite() {
            consider((qp.lb_a[r] - ax) / ap, Item::Row(r), BoundStatus::Lower);
        }
    }
    let eps = 1e-12 * pnorm;
    for j in 0..qp.n() {
        if ws.bounds[j].is_active() {
            continue;
        }
        if p[j] > eps && qp.ub_x[j].is_finite() {
            consider((qp.ub_x[j] - x[j]) / p[j], Item::Var(j), BoundStatus::Upper);
        } else if p[j] < -eps && qp.lb_x[j].is_finite() {
            consider((qp.lb_x[j] - x[j]) / p[j], Item::Var(j), BoundStatus::Lower);
        }
    }
    best
}
