//! Sequential quadratic programming with an exact-Hessian QP model and an
//! L1 merit line search.
//!
//! Each iteration solves
//!
//! ```text
//! minimize    ½ dᵀ ∇²L d + ∇fᵀ d
//! subject to  lb_g − g(x) ≤ J d ≤ ub_g − g(x),   lb_x − x ≤ d ≤ ub_x − x
//! ```
//!
//! with the active-set solver, warm started from the previous working set.
//! Multipliers use the convention `∇f + Jᵀλ + ν = 0` at a KKT point.

use std::time::{Duration, Instant};

use crate::autodiff::{self, Real, ScalarFn, VectorFn};
use crate::qp::{ActiveSet, QpProblem, QpSettings, QpSolver, QpStatus};
use crate::sparse::{CsrMatrix, Pattern, SymmetricPattern};
use crate::Error;

/// A smooth nonlinear program `min f(x)` s.t. `lb_g ≤ g(x) ≤ ub_g`, `lb_x ≤ x ≤ ub_x`.
///
/// Evaluations may return non-finite values outside the domain; the solver
/// treats them as rejected trial points.
pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn constraint_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn constraints(&self, x: &[f64], g: &mut [f64]);
    fn jacobian_structure(&self) -> Pattern;
    /// Values in the order of [`Nlp::jacobian_structure`].
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]);
    /// Lower triangle of the Lagrangian Hessian.
    fn hessian_structure(&self) -> SymmetricPattern;
    /// Values of `∇²(obj_factor f + λᵀ g)` in the order of [`Nlp::hessian_structure`].
    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqpSettings {
    pub max_iter: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub qp: QpSettings,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            primal_tol: 1e-6,
            dual_tol: 1e-4,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-10,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    LineSearchFailure,
    /// A QP subproblem was infeasible or could not be solved.
    QpFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::LineSearchFailure => "line_search_failure",
            SolveStatus::QpFailure => "qp_failure",
        }
    }

    pub fn is_converged(self) -> bool {
        self == SolveStatus::Converged
    }
}

/// Wall time spent per subfunction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    /// QP assembly and solution.
    pub qp: Duration,
    pub line_search: Duration,
    pub cost_constraints: Duration,
    pub gradient: Duration,
    pub hessian: Duration,
    pub jacobian: Duration,
    pub total: Duration,
}

impl Timings {
    pub const CATEGORIES: [&'static str; 6] =
        ["qp", "line_search", "cost_constraints", "gradient", "hessian", "jacobian"];

    pub fn categories(&self) -> [(&'static str, Duration); 6] {
        [
            ("qp", self.qp),
            ("line_search", self.line_search),
            ("cost_constraints", self.cost_constraints),
            ("gradient", self.gradient),
            ("hessian", self.hessian),
            ("jacobian", self.jacobian),
        ]
    }

    pub fn accounted(&self) -> Duration {
        self.categories().iter().map(|(_, d)| *d).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveStats {
    pub sqp_iterations: usize,
    pub qp_iterations_total: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub objective: f64,
    pub penalty: f64,
    pub timings: Timings,
    pub status: SolveStatus,
}

/// Primal-dual point used to warm start a solve.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    pub lambda: Vec<f64>,
    pub bound_duals: Vec<f64>,
    pub active_set: Option<ActiveSet>,
}

#[derive(Clone, Debug)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub bound_duals: Vec<f64>,
    pub active_set: Option<ActiveSet>,
    pub stats: SolveStats,
}

impl NlpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            lambda: self.lambda.clone(),
            bound_duals: self.bound_duals.clone(),
            active_set: self.active_set.clone(),
        }
    }
}

/// Sum of bound violations of `g`.
pub fn l1_violation(g: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    g.iter().zip(lb.iter().zip(ub)).map(|(v, (l, u))| (l - v).max(v - u).max(0.0)).sum()
}

fn max_violation(g: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    g.iter().zip(lb.iter().zip(ub)).map(|(v, (l, u))| (l - v).max(v - u).max(0.0)).fold(0.0, f64::max)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
}

/// Penalty that keeps the L1 merit exact for multipliers `lambda`.
pub fn update_penalty(previous: f64, lambda: &[f64]) -> f64 {
    previous.max(2.0 * inf_norm(lambda))
}

/// Armijo backtracking on a merit function.
///
/// `merit(α)` evaluates the merit at `x + α d`, `phi0` is its value at `α = 0`
/// and `slope` the directional derivative along `d`. Returns the first
/// `α ∈ {1, β, β², …}` with `merit(α) ≤ phi0 + c α slope`, or `None` once
/// `α` drops below `min_step`.
pub fn line_search_merit(
    phi0: f64,
    slope: f64,
    mut merit: impl FnMut(f64) -> f64,
    armijo: f64,
    backtrack: f64,
    min_step: f64,
) -> Option<f64> {
    let mut alpha = 1.0;
    while alpha >= min_step {
        let phi = merit(alpha);
        if phi.is_finite() && phi <= phi0 + armijo * alpha * slope {
            return Some(alpha);
        }
        alpha *= backtrack;
    }
    None
}

/// SQP solver with reusable QP workspace. One solve at a time.
#[derive(Clone, Debug, Default)]
pub struct SqpSolver {
    pub settings: SqpSettings,
    qp: QpSolver,
}

struct Structures {
    jac: Pattern,
    hess: SymmetricPattern,
    hess_full: Pattern,
}

impl SqpSolver {
    pub fn new(settings: SqpSettings) -> Self {
        Self { settings, qp: QpSolver::new(settings.qp) }
    }

    pub fn solve<P: Nlp + ?Sized>(
        &mut self,
        nlp: &P,
        x0: &[f64],
        warm: Option<&WarmStart>,
    ) -> Result<NlpSolution, Error> {
        let start = Instant::now();
        let s = self.settings;
        let (n, m) = (nlp.num_vars(), nlp.num_constraints());
        if x0.len() != n {
            return Err(Error::Dimension(format!("initial guess has {} entries, expected {n}", x0.len())));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("initial guess is not finite".into()));
        }
        self.qp.settings = s.qp;
        let (lb_x, ub_x) = nlp.var_bounds();
        let (lb_g, ub_g) = nlp.constraint_bounds();
        let hess = nlp.hessian_structure();
        let st = Structures { jac: nlp.jacobian_structure(), hess_full: hess.full_pattern(), hess };
        let mut t = Timings::default();

        let mut x: Vec<f64> = (0..n).map(|j| x0[j].clamp(lb_x[j], ub_x[j])).collect();
        let mut lambda = warm.filter(|w| w.lambda.len() == m).map_or(vec![0.0; m], |w| w.lambda.clone());
        let mut nu = warm.filter(|w| w.bound_duals.len() == n).map_or(vec![0.0; n], |w| w.bound_duals.clone());
        let mut active = warm.and_then(|w| w.active_set.clone());
        let mut penalty = 0.0;

        let mut f;
        let mut g = vec![0.0; m];
        let mut grad = vec![0.0; n];
        let mut jac_vals = vec![0.0; st.jac.len()];
        let mut hess_vals = vec![0.0; st.hess.len()];

        let clock = Instant::now();
        f = nlp.objective(&x);
        nlp.constraints(&x, &mut g);
        t.cost_constraints += clock.elapsed();
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("objective or constraints not finite at the initial guess".into()));
        }

        let mut sqp_iterations = 0;
        let mut qp_iterations_total = 0;
        let status;
        let mut primal_inf;
        let mut dual_inf;
        loop {
            let clock = Instant::now();
            nlp.gradient(&x, &mut grad);
            t.gradient += clock.elapsed();
            let clock = Instant::now();
            nlp.jacobian_values(&x, &mut jac_vals);
            let jac = st.jac.to_csr(&jac_vals);
            t.jacobian += clock.elapsed();

            primal_inf = max_violation(&g, &lb_g, &ub_g).max(max_violation(&x, &lb_x, &ub_x));
            let mut stat = jac.transpose_mul(&lambda);
            for j in 0..n {
                stat[j] += grad[j] + nu[j];
            }
            dual_inf = inf_norm(&stat);
            if primal_inf < s.primal_tol && dual_inf < s.dual_tol {
                status = SolveStatus::Converged;
                break;
            }
            if sqp_iterations >= s.max_iter {
                status = SolveStatus::MaxIter;
                break;
            }

            let clock = Instant::now();
            nlp.hessian_values(&x, 1.0, &lambda, &mut hess_vals);
            let hess = st.hess.to_csr(&st.hess_full, &hess_vals);
            t.hessian += clock.elapsed();

            let clock = Instant::now();
            let qp = QpProblem {
                h: hess,
                g: grad.clone(),
                a: jac,
                lb_a: lb_g.iter().zip(&g).map(|(l, v)| l - v).collect(),
                ub_a: ub_g.iter().zip(&g).map(|(u, v)| u - v).collect(),
                lb_x: lb_x.iter().zip(&x).map(|(l, v)| l - v).collect(),
                ub_x: ub_x.iter().zip(&x).map(|(u, v)| u - v).collect(),
            };
            let sol = self.qp.solve(&qp, active.as_ref())?;
            t.qp += clock.elapsed();
            sqp_iterations += 1;
            qp_iterations_total += sol.iterations;
            if sol.status == QpStatus::Infeasible {
                status = SolveStatus::QpFailure;
                break;
            }
            let d = sol.primal;
            let (lambda_qp, nu_qp) = sol.dual.split_at(m);

            let clock = Instant::now();
            penalty = update_penalty(penalty, lambda_qp);
            let viol0 = l1_violation(&g, &lb_g, &ub_g);
            let phi0 = f + penalty * viol0;
            let slope = grad.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() - penalty * viol0;
            let mut trial = vec![0.0; n];
            let mut g_trial = vec![0.0; m];
            let mut f_trial = f;
            let accepted = line_search_merit(
                phi0,
                slope,
                |alpha| {
                    for j in 0..n {
                        trial[j] = (x[j] + alpha * d[j]).clamp(lb_x[j], ub_x[j]);
                    }
                    f_trial = nlp.objective(&trial);
                    nlp.constraints(&trial, &mut g_trial);
                    f_trial + penalty * l1_violation(&g_trial, &lb_g, &ub_g)
                },
                s.armijo,
                s.backtrack,
                s.min_step,
            );
            t.line_search += clock.elapsed();
            let Some(alpha) = accepted else {
                status = SolveStatus::LineSearchFailure;
                break;
            };
            // the closure left the accepted trial point in `trial`
            x.copy_from_slice(&trial);
            g.copy_from_slice(&g_trial);
            f = f_trial;
            for (l, q) in lambda.iter_mut().zip(lambda_qp) {
                *l += alpha * (q - *l);
            }
            for (v, q) in nu.iter_mut().zip(nu_qp) {
                *v += alpha * (q - *v);
            }
            active = Some(sol.active_set);
        }
        t.total = start.elapsed();
        Ok(NlpSolution {
            x,
            lambda,
            bound_duals: nu,
            active_set: active,
            stats: SolveStats {
                sqp_iterations,
                qp_iterations_total,
                primal_infeasibility: primal_inf,
                dual_infeasibility: dual_inf,
                objective: f,
                penalty,
                timings: t,
                status,
            },
        })
    }
}

/// An [`Nlp`] whose derivatives come from forward-mode AD of generic
/// objective and constraint functions. Suited to small dense problems.
pub struct AdNlp<F, G> {
    pub objective: F,
    pub constraints: G,
    pub lb_x: Vec<f64>,
    pub ub_x: Vec<f64>,
    pub lb_g: Vec<f64>,
    pub ub_g: Vec<f64>,
}

struct Scaled<'a, F>(&'a F, f64);

impl<F: ScalarFn> ScalarFn for Scaled<'_, F> {
    fn eval<S: Real>(&self, x: &[S]) -> S {
        self.0.eval(x) * self.1
    }
}

impl<F: ScalarFn, G: VectorFn> Nlp for AdNlp<F, G> {
    fn num_vars(&self) -> usize {
        self.lb_x.len()
    }

    fn num_constraints(&self) -> usize {
        self.constraints.output_dim()
    }

    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lb_x.clone(), self.ub_x.clone())
    }

    fn constraint_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lb_g.clone(), self.ub_g.clone())
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        match autodiff::gradient(&self.objective, x) {
            Ok(v) => grad.copy_from_slice(&v),
            Err(_) => grad.fill(f64::NAN),
        }
    }

    fn constraints(&self, x: &[f64], g: &mut [f64]) {
        self.constraints.eval(x, g);
    }

    fn jacobian_structure(&self) -> Pattern {
        let n = self.num_vars();
        let rows = autodiff::jacobian_pattern(&self.constraints, n);
        let entries = rows.iter().enumerate().flat_map(|(r, cols)| cols.iter().map(move |&c| (r, c))).collect();
        Pattern::new(self.num_constraints(), n, entries)
    }

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        let p = self.jacobian_structure();
        match autodiff::jacobian(&self.constraints, x) {
            Ok(j) => {
                for (v, &(r, c)) in values.iter_mut().zip(p.entries()) {
                    *v = j.get(r, c);
                }
            }
            Err(_) => values.fill(f64::NAN),
        }
    }

    fn hessian_structure(&self) -> SymmetricPattern {
        let n = self.num_vars();
        let mut p = SymmetricPattern::new(n);
        for i in 0..n {
            for j in 0..=i {
                p.insert(i, j);
            }
        }
        p
    }

    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) {
        let f = Scaled(&self.objective, obj_factor);
        let h: Result<CsrMatrix, Error> = autodiff::lagrangian_hessian(&f, Some((&self.constraints, lambda)), x);
        match h {
            Ok(h) => {
                for (v, &(i, j)) in values.iter_mut().zip(self.hessian_structure().entries()) {
                    *v = h.get(i, j);
                }
            }
            Err(_) => values.fill(f64::NAN),
        }
    }
}
