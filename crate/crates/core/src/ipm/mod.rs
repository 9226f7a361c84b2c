//! Primal-dual interior-point method with a filter line search.
//!
//! Solves `min f(x) s.t. c(x) = 0, l <= x <= u` for a [`FlatNlp`]. Bounds
//! enter through log-barrier terms with one dual per finite bound side; each
//! iteration solves the reduced augmented system with one of the backends
//! in [`crate::kkt`].

mod linesearch;

pub use linesearch::{
    filter_line_search, fraction_to_boundary, fraction_to_boundary_positive, update_barrier, Filter, FilterParams,
    LineSearchResult,
};

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

use crate::ad::FunctionSet;
use crate::expr::ExprError;
use crate::graph::FlatNlp;
use crate::kkt::{make_solver, BackendKind, KktError, KktMatrix, KktSolver};
use crate::linsolve::Inertia;

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mu0: f64,
    /// Lower limit τ_min of the fraction-to-boundary factor τ = max(τ_min, 1 − μ).
    pub fraction_to_boundary: f64,
    pub backend: BackendKind,
    pub threads: usize,
    /// First primal regularization tried when the inertia is wrong.
    pub delta_w0: f64,
    /// Dual regularization coefficient: δc = delta_c · μ^0.25.
    pub delta_c: f64,
    /// Relative push of the starting point away from bounds.
    pub bound_push: f64,
    /// Directory for Matrix Market dumps of the final KKT (and Schur) matrix.
    pub dump_kkt: Option<PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 500,
            mu0: 0.1,
            fraction_to_boundary: 0.995,
            backend: BackendKind::Monolithic,
            threads: 1,
            delta_w0: 1e-4,
            delta_c: 1e-8,
            bound_push: 1e-2,
            dump_kkt: None,
        }
    }
}

const DELTA_W_MIN: f64 = 1e-20;
const DELTA_W_MAX: f64 = 1e40;
const DELTA_W_GROWTH: f64 = 8.0;
const KAPPA_EPS: f64 = 10.0;
const KAPPA_SIGMA: f64 = 1e10;
const S_MAX: f64 = 100.0;

impl SolverOptions {
    pub fn validate(&self) -> Result<(), IpmError> {
        let bad = |m: &str| Err(IpmError::InvalidOptions(m.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.fraction_to_boundary > 0.0 && self.fraction_to_boundary < 1.0) {
            return bad("fraction_to_boundary must lie in (0, 1)");
        }
        if !(self.mu0 > 0.0) {
            return bad("mu0 must be positive");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if !(self.delta_w0 > 0.0) || !(self.delta_c >= 0.0) {
            return bad("regularization seeds must be positive");
        }
        if !(self.bound_push > 0.0 && self.bound_push < 0.5) {
            return bad("bound_push must lie in (0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpmError {
    #[error("invalid option: {0}")]
    InvalidOptions(String),
    #[error("variable {index} ({name}) has lower bound above upper bound")]
    InconsistentBounds { index: usize, name: String },
    #[error("starting value of variable {index} ({name}) is not finite")]
    NonFiniteStart { index: usize, name: String },
    #[error(transparent)]
    Kkt(#[from] KktError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] ExprError),
    #[error("KKT matrix has wrong inertia up to the regularization limit")]
    SingularKkt,
}

/// Primal-dual iterate. `zl[i]` / `zu[i]` are zero for infinite bound sides.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub zl: Vec<f64>,
    pub zu: Vec<f64>,
    pub mu: f64,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchDirection {
    pub dx: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub dzl: Vec<f64>,
    pub dzu: Vec<f64>,
}

impl SearchDirection {
    /// ∞-norm over all components.
    pub fn norm_inf(&self) -> f64 {
        [&self.dx, &self.dlambda, &self.dzl, &self.dzu]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// ∞-norm of the componentwise difference.
    pub fn diff_inf(&self, o: &SearchDirection) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        d(&self.dx, &o.dx).max(d(&self.dlambda, &o.dlambda)).max(d(&self.dzl, &o.dzl)).max(d(&self.dzu, &o.dzu))
    }
}

/// How a step was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub delta_w: f64,
    pub delta_c: f64,
    pub inertia: Inertia,
    /// Number of refactorizations needed to reach the target inertia.
    pub corrections: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    LineSearchFailure,
    Error(String),
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveStatus::Optimal => write!(f, "optimal"),
            SolveStatus::MaxIterations => write!(f, "max_iter"),
            SolveStatus::LineSearchFailure => write!(f, "infeasible_step"),
            SolveStatus::Error(e) => write!(f, "error: {e}"),
        }
    }
}

/// Wall-clock seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub function_eval: f64,
    pub derivative_eval: f64,
    pub linear_solve: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: usize,
    pub timings: Timings,
    pub kkt_error: f64,
    pub backend: BackendKind,
    pub schur_dim: usize,
    pub final_state: IterationState,
}

/// Per-iteration data handed to observers, taken at the iterate where the
/// step was computed.
pub struct IterationEvent<'a> {
    pub k: usize,
    pub objective: f64,
    pub inf_pr: f64,
    pub inf_du: f64,
    pub mu: f64,
    pub alpha: f64,
    pub step_info: StepInfo,
    pub backtracks: usize,
    pub state: &'a IterationState,
    pub step: &'a SearchDirection,
}

impl IterationEvent<'_> {
    pub const CSV_HEADER: &'static str = "iter,objective,inf_pr,inf_du,mu,alpha,delta_w,corrections,backtracks";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.12e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3e},{},{}",
            self.k,
            self.objective,
            self.inf_pr,
            self.inf_du,
            self.mu,
            self.alpha,
            self.step_info.delta_w,
            self.step_info.corrections,
            self.backtracks
        )
    }
}

/// Problem data with bounds as seen by the barrier (fixed variables relaxed).
struct Problem<'a> {
    f: &'a FunctionSet,
    lower: Vec<f64>,
    upper: Vec<f64>,
    has_l: Vec<bool>,
    has_u: Vec<bool>,
    n: usize,
    m: usize,
}

impl<'a> Problem<'a> {
    fn new(flat: &'a FlatNlp) -> Result<Self, IpmError> {
        let n = flat.n_vars;
        let (mut lower, mut upper) = (flat.lower.clone(), flat.upper.clone());
        for i in 0..n {
            if !(lower[i] <= upper[i]) {
                return Err(IpmError::InconsistentBounds { index: i, name: flat.var_names[i].clone() });
            }
            if lower[i] == upper[i] {
                let r = 1e-8 * lower[i].abs().max(1.0);
                lower[i] -= r;
                upper[i] += r;
            }
        }
        let has_l = lower.iter().map(|v| v.is_finite()).collect();
        let has_u = upper.iter().map(|v| v.is_finite()).collect();
        Ok(Problem { f: flat.functions(), lower, upper, has_l, has_u, n, m: flat.n_cons })
    }

    fn interior(&self, x: &[f64]) -> bool {
        (0..self.n).all(|i| (!self.has_l[i] || x[i] > self.lower[i]) && (!self.has_u[i] || x[i] < self.upper[i]))
    }

    fn initial_point(&self, flat: &FlatNlp, push: f64) -> Result<Vec<f64>, IpmError> {
        let mut x = flat.x0.clone();
        for i in 0..self.n {
            if !x[i].is_finite() {
                return Err(IpmError::NonFiniteStart { index: i, name: flat.var_names[i].clone() });
            }
            let (l, u) = (self.lower[i], self.upper[i]);
            let width = u - l;
            if self.has_l[i] {
                let p = (push * l.abs().max(1.0)).min(push * width);
                x[i] = x[i].max(l + p);
            }
            if self.has_u[i] {
                let p = (push * u.abs().max(1.0)).min(push * width);
                x[i] = x[i].min(u - p);
            }
        }
        Ok(x)
    }

    fn barrier(&self, f: f64, x: &[f64], mu: f64) -> f64 {
        let mut b = 0.0;
        for i in 0..self.n {
            if self.has_l[i] {
                b += (x[i] - self.lower[i]).ln();
            }
            if self.has_u[i] {
                b += (self.upper[i] - x[i]).ln();
            }
        }
        f - mu * b
    }

    fn jt_lambda(&self, jac: &[f64], lambda: &[f64]) -> Vec<f64> {
        let (rows, cols) = self.f.jacobian_structure();
        let mut out = vec![0.0; self.n];
        for k in 0..jac.len() {
            out[cols[k]] += jac[k] * lambda[rows[k]];
        }
        out
    }
}

/// Objective, gradient, constraints and Jacobian at one point.
struct Point {
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<f64>,
}

impl Point {
    fn eval(p: &Problem, x: &[f64]) -> Result<Point, ExprError> {
        let mut grad = vec![0.0; p.n];
        let f = p.f.objective_gradient(x, &mut grad)?;
        let mut c = vec![0.0; p.m];
        let mut jac = vec![0.0; p.f.jacobian_structure().0.len()];
        p.f.constraints_and_jacobian(x, &mut c, &mut jac)?;
        Ok(Point { f, grad, c, jac })
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Scaled residual components at barrier parameter `mu`: (total, primal, dual, complementarity).
fn errors(p: &Problem, s: &IterationState, pt: &Point, mu: f64) -> (f64, f64, f64, f64) {
    let jtl = p.jt_lambda(&pt.jac, &s.lambda);
    let mut du = 0.0f64;
    let mut compl = 0.0f64;
    let (mut zsum, mut nz) = (0.0, 0usize);
    for i in 0..p.n {
        du = du.max((pt.grad[i] + jtl[i] - s.zl[i] + s.zu[i]).abs());
        if p.has_l[i] {
            compl = compl.max(((s.x[i] - p.lower[i]) * s.zl[i] - mu).abs());
            zsum += s.zl[i].abs();
            nz += 1;
        }
        if p.has_u[i] {
            compl = compl.max(((p.upper[i] - s.x[i]) * s.zu[i] - mu).abs());
            zsum += s.zu[i].abs();
            nz += 1;
        }
    }
    let lsum: f64 = s.lambda.iter().map(|v| v.abs()).sum();
    let s_d = if p.m + nz == 0 { 1.0 } else { S_MAX.max((lsum + zsum) / (p.m + nz) as f64) / S_MAX };
    let s_c = if nz == 0 { 1.0 } else { S_MAX.max(zsum / nz as f64) / S_MAX };
    let pr = norm_inf(&pt.c);
    let (du, compl) = (du / s_d, compl / s_c);
    (pr.max(du).max(compl), pr, du, compl)
}

/// Scaled KKT residual of `state` at barrier parameter `mu` (0 for the
/// original problem): max of dual infeasibility / s_d, ‖c‖∞ and
/// complementarity / s_c.
pub fn kkt_error(state: &IterationState, flat: &FlatNlp, mu: f64) -> Result<f64, IpmError> {
    let p = Problem::new(flat)?;
    let pt = Point::eval(&p, &state.x)?;
    Ok(errors(&p, state, &pt, mu).0)
}

/// Barrier Hessian diagonal Σ.
fn sigma(p: &Problem, s: &IterationState) -> Vec<f64> {
    (0..p.n)
        .map(|i| {
            let mut v = 0.0;
            if p.has_l[i] {
                v += s.zl[i] / (s.x[i] - p.lower[i]);
            }
            if p.has_u[i] {
                v += s.zu[i] / (p.upper[i] - s.x[i]);
            }
            v
        })
        .collect()
}

struct StepContext<'a> {
    kkt: KktMatrix,
    solver: Box<dyn KktSolver + 'a>,
    hess: Vec<f64>,
    /// Last nonzero δw; the next correction starts from a third of it.
    last_dw: f64,
}

/// Factors with inertia correction and solves the reduced system.
fn newton_step(
    p: &Problem,
    s: &IterationState,
    pt: &Point,
    ctx: &mut StepContext,
    opts: &SolverOptions,
) -> Result<(SearchDirection, StepInfo), IpmError> {
    p.f.hessian_values(&s.x, 1.0, &s.lambda, &mut ctx.hess)?;
    let sig = sigma(p, s);
    ctx.kkt.set_values(&ctx.hess, &sig, &pt.jac);
    let target = ctx.kkt.target_inertia();
    let (mut dw, mut dc) = (0.0, 0.0);
    let mut corrections = 0;
    let inertia = loop {
        let inertia = ctx.solver.factor(&ctx.kkt, dw, dc)?;
        if inertia == target {
            break inertia;
        }
        corrections += 1;
        if inertia.zero > 0 && dc == 0.0 && p.m > 0 {
            dc = opts.delta_c * s.mu.powf(0.25);
        }
        dw = match (dw == 0.0, ctx.last_dw == 0.0) {
            (true, true) => opts.delta_w0,
            (true, false) => (ctx.last_dw / 3.0).max(DELTA_W_MIN),
            (false, _) => dw * DELTA_W_GROWTH,
        };
        if dw > DELTA_W_MAX {
            return Err(IpmError::SingularKkt);
        }
    };
    if dw > 0.0 {
        ctx.last_dw = dw;
    }
    let jtl = p.jt_lambda(&pt.jac, &s.lambda);
    let mut rhs = vec![0.0; p.n + p.m];
    for i in 0..p.n {
        let mut g = pt.grad[i] + jtl[i];
        if p.has_l[i] {
            g -= s.mu / (s.x[i] - p.lower[i]);
        }
        if p.has_u[i] {
            g += s.mu / (p.upper[i] - s.x[i]);
        }
        rhs[i] = -g;
    }
    for j in 0..p.m {
        rhs[p.n + j] = -pt.c[j];
    }
    let (sol, residual) = ctx.solver.solve(&rhs);
    let dx = sol[..p.n].to_vec();
    let dlambda = sol[p.n..].to_vec();
    let mut dzl = vec![0.0; p.n];
    let mut dzu = vec![0.0; p.n];
    for i in 0..p.n {
        if p.has_l[i] {
            let sl = s.x[i] - p.lower[i];
            dzl[i] = s.mu / sl - s.zl[i] - s.zl[i] / sl * dx[i];
        }
        if p.has_u[i] {
            let su = p.upper[i] - s.x[i];
            dzu[i] = s.mu / su - s.zu[i] + s.zu[i] / su * dx[i];
        }
    }
    Ok((
        SearchDirection { dx, dlambda, dzl, dzu },
        StepInfo { delta_w: dw, delta_c: dc, inertia, corrections, residual },
    ))
}

fn context<'a>(p: &Problem, flat: &'a FlatNlp, backend: BackendKind) -> Result<StepContext<'a>, IpmError> {
    let kkt = KktMatrix::new(p.f);
    let solver = make_solver(backend, flat, &kkt)?;
    let hess = vec![0.0; p.f.hessian_structure().0.len()];
    Ok(StepContext { kkt, solver, hess, last_dw: 0.0 })
}

/// Newton direction at `state` using `backend` (a fresh solver each call).
pub fn compute_step(
    state: &IterationState,
    flat: &FlatNlp,
    backend: BackendKind,
    opts: &SolverOptions,
) -> Result<(SearchDirection, StepInfo), IpmError> {
    let p = Problem::new(flat)?;
    let pt = Point::eval(&p, &state.x)?;
    let mut ctx = context(&p, flat, backend)?;
    newton_step(&p, state, &pt, &mut ctx, opts)
}

/// Starting iterate: `x0` pushed inside the bounds, λ = 0, z = μ0 / slack.
pub fn initial_state(flat: &FlatNlp, opts: &SolverOptions) -> Result<IterationState, IpmError> {
    let p = Problem::new(flat)?;
    let x = p.initial_point(flat, opts.bound_push)?;
    let mu = opts.mu0;
    let zl = (0..p.n).map(|i| if p.has_l[i] { mu / (x[i] - p.lower[i]) } else { 0.0 }).collect();
    let zu = (0..p.n).map(|i| if p.has_u[i] { mu / (p.upper[i] - x[i]) } else { 0.0 }).collect();
    Ok(IterationState { x, lambda: vec![0.0; p.m], zl, zu, mu, k: 0 })
}

pub fn solve(flat: &FlatNlp, opts: &SolverOptions) -> Result<SolveReport, IpmError> {
    solve_with_observer(flat, opts, &mut |_| {})
}

/// Runs the solver on a pool of `opts.threads` workers, calling `observer`
/// once per iteration.
pub fn solve_with_observer(
    flat: &FlatNlp,
    opts: &SolverOptions,
    observer: &mut (dyn FnMut(&IterationEvent) + Send),
) -> Result<SolveReport, IpmError> {
    opts.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| IpmError::InvalidOptions(e.to_string()))?;
    pool.install(|| run(flat, opts, observer))
}

fn run(
    flat: &FlatNlp,
    opts: &SolverOptions,
    observer: &mut (dyn FnMut(&IterationEvent) + Send),
) -> Result<SolveReport, IpmError> {
    let start = Instant::now();
    let p = Problem::new(flat)?;
    let mut ctx = context(&p, flat, opts.backend)?;
    let mut s = initial_state(flat, opts)?;
    let mut t = Timings::default();

    let clock = Instant::now();
    let mut pt = Point::eval(&p, &s.x)?;
    t.derivative_eval += clock.elapsed().as_secs_f64();

    let theta = |c: &[f64]| c.iter().map(|v| v.abs()).sum::<f64>();
    let params = FilterParams::for_initial_violation(theta(&pt.c));
    let mut filter = Filter::new();
    let floor = opts.tol / 11.0;

    let status = loop {
        let mut e_mu = errors(&p, &s, &pt, s.mu).0;
        while e_mu <= KAPPA_EPS * s.mu && s.mu > floor {
            s.mu = update_barrier(s.mu, opts.tol);
            filter.clear();
            e_mu = errors(&p, &s, &pt, s.mu).0;
        }
        let (e0, inf_pr, inf_du, _) = errors(&p, &s, &pt, 0.0);
        if e0 <= opts.tol && s.mu <= opts.tol {
            break SolveStatus::Optimal;
        }
        if s.k >= opts.max_iter {
            break SolveStatus::MaxIterations;
        }

        let clock = Instant::now();
        let step = newton_step(&p, &s, &pt, &mut ctx, opts);
        t.linear_solve += clock.elapsed().as_secs_f64();
        let (d, info) = match step {
            Ok(v) => v,
            Err(IpmError::Eval(e)) => break SolveStatus::Error(e.to_string()),
            Err(IpmError::SingularKkt) => break SolveStatus::Error(IpmError::SingularKkt.to_string()),
            Err(e) => return Err(e),
        };

        let tau = opts.fraction_to_boundary.max(1.0 - s.mu);
        let a_x = fraction_to_boundary(&s.x, &d.dx, &p.lower, &p.upper, tau);
        let a_zl = fraction_to_boundary_positive(&s.zl, &d.dzl, tau);
        let a_zu = fraction_to_boundary_positive(&s.zu, &d.dzu, tau);
        let alpha_max = a_x.min(a_zl).min(a_zu);

        let tiny = (0..p.n).all(|i| d.dx[i].abs() / (1.0 + s.x[i].abs()) < 10.0 * f64::EPSILON);
        let (alpha, backtracks) = if tiny {
            (alpha_max, 0)
        } else {
            let phi = p.barrier(pt.f, &s.x, s.mu);
            let mut gpd = 0.0;
            for i in 0..p.n {
                let mut g = pt.grad[i];
                if p.has_l[i] {
                    g -= s.mu / (s.x[i] - p.lower[i]);
                }
                if p.has_u[i] {
                    g += s.mu / (p.upper[i] - s.x[i]);
                }
                gpd += g * d.dx[i];
            }
            let mut xt = vec![0.0; p.n];
            let mut ct = vec![0.0; p.m];
            let clock = Instant::now();
            let mut trial = |a: f64| -> Option<(f64, f64)> {
                for i in 0..p.n {
                    xt[i] = s.x[i] + a * d.dx[i];
                }
                if !p.interior(&xt) {
                    return None;
                }
                let f = p.f.objective(&xt).ok()?;
                p.f.constraints(&xt, &mut ct).ok()?;
                Some((theta(&ct), p.barrier(f, &xt, s.mu)))
            };
            let r = filter_line_search(theta(&pt.c), phi, gpd, alpha_max, &mut filter, &params, &mut trial);
            t.function_eval += clock.elapsed().as_secs_f64();
            match r {
                Some(r) => (r.alpha, r.backtracks),
                None => break SolveStatus::LineSearchFailure,
            }
        };

        observer(&IterationEvent {
            k: s.k,
            objective: pt.f,
            inf_pr,
            inf_du,
            mu: s.mu,
            alpha,
            step_info: info,
            backtracks,
            state: &s,
            step: &d,
        });

        for i in 0..p.n {
            s.x[i] += alpha * d.dx[i];
            if p.has_l[i] {
                let sl = s.x[i] - p.lower[i];
                let z = s.zl[i] + alpha * d.dzl[i];
                s.zl[i] = z.max(s.mu / (KAPPA_SIGMA * sl)).min(KAPPA_SIGMA * s.mu / sl);
            }
            if p.has_u[i] {
                let su = p.upper[i] - s.x[i];
                let z = s.zu[i] + alpha * d.dzu[i];
                s.zu[i] = z.max(s.mu / (KAPPA_SIGMA * su)).min(KAPPA_SIGMA * s.mu / su);
            }
        }
        for j in 0..p.m {
            s.lambda[j] += alpha * d.dlambda[j];
        }
        s.k += 1;
        debug_assert!(p.interior(&s.x), "iterate left the interior");

        let clock = Instant::now();
        match Point::eval(&p, &s.x) {
            Ok(v) => pt = v,
            Err(e) => break SolveStatus::Error(e.to_string()),
        }
        t.derivative_eval += clock.elapsed().as_secs_f64();
    };

    if let Some(dir) = &opts.dump_kkt {
        ctx.solver.dump(dir, "final").map_err(|e| IpmError::InvalidOptions(format!("dump failed: {e}")))?;
    }
    t.total = start.elapsed().as_secs_f64();
    let kkt_err = errors(&p, &s, &pt, 0.0).0;
    Ok(SolveReport {
        status,
        objective: pt.f,
        iterations: s.k,
        timings: t,
        kkt_error: kkt_err,
        backend: opts.backend,
        schur_dim: ctx.solver.schur_dim(),
        final_state: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::graph::{flatten, ConstraintKind, OptiGraph};

    #[allow(clippy::type_complexity)]
    fn single(
        nvars: usize,
        bounds: &[(f64, f64, f64)],
        obj: &dyn Fn(&[Expr]) -> Expr,
        cons: &dyn Fn(&[Expr]) -> Vec<(Expr, ConstraintKind)>,
    ) -> FlatNlp {
        let mut g = OptiGraph::new("t");
        let n = g.add_node("n");
        let x: Vec<Expr> = (0..nvars)
            .map(|i| Expr::var(g.add_variable(n, format!("x{i}"), bounds[i].0, bounds[i].1, bounds[i].2).unwrap()))
            .collect();
        g.set_objective(n, obj(&x)).unwrap();
        for (e, k) in cons(&x) {
            g.add_constraint(n, e, k).unwrap();
        }
        flatten(&g).unwrap()
    }

    const FREE: (f64, f64, f64) = (f64::NEG_INFINITY, f64::INFINITY, 0.0);

    #[test]
    fn bounded_quadratic_interior_optimum() {
        let f = single(1, &[(0.0, f64::INFINITY, 0.0)], &|x| (x[0].clone() - 2.0).powi(2), &|_| vec![]);
        let r = solve(&f, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.final_state.x[0] - 2.0).abs() < 1e-6);
        assert!(r.objective.abs() < 1e-10);
        assert!(r.kkt_error <= 1e-8);
    }

    #[test]
    fn equality_constrained_quadratic() {
        let f = single(2, &[FREE, FREE], &|x| x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone(), &|x| {
            vec![(x[0].clone() + x[1].clone() - 1.0, ConstraintKind::Equality)]
        });
        let r = solve(&f, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.final_state.x[0] - 0.5).abs() < 1e-8 && (r.final_state.x[1] - 0.5).abs() < 1e-8);
        assert!((r.objective - 0.5).abs() < 1e-10);
        let exact =
            IterationState { x: vec![0.5, 0.5], lambda: vec![-1.0], zl: vec![0.0; 2], zu: vec![0.0; 2], mu: 0.0, k: 0 };
        assert!(kkt_error(&exact, &f, 0.0).unwrap() < 1e-12);
        let off = IterationState { x: vec![0.501, 0.5], ..exact };
        assert!(kkt_error(&off, &f, 0.0).unwrap() >= 1e-4);
    }

    #[test]
    fn bilinear_with_bounds() {
        let b = (0.0, f64::INFINITY, 0.5);
        let f = single(2, &[b, b], &|x| -(x[0].clone() * x[1].clone()), &|x| {
            vec![(x[0].clone() + x[1].clone() - 2.0, ConstraintKind::Equality)]
        });
        let r = solve(&f, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.final_state.x[0] - 1.0).abs() < 1e-6);
        assert!((r.objective + 1.0).abs() < 1e-8);
        assert!(kkt_error(&r.final_state, &f, 0.0).unwrap() < 1e-8);
    }

    #[test]
    fn complementarity_only_error() {
        let mu = 1e-3;
        let f = single(2, &[(0.0, f64::INFINITY, 1.0); 2], &|_| Expr::constant(0.0), &|_| vec![]);
        // x = 1, z = 2μ, so x·z − μ = μ on every bound; unit scalings since z is small.
        let s = IterationState { x: vec![1.0, 1.0], lambda: vec![], zl: vec![2.0 * mu; 2], zu: vec![0.0; 2], mu, k: 0 };
        let p = Problem::new(&f).unwrap();
        let pt = Point::eval(&p, &s.x).unwrap();
        let (_, _, _, compl) = errors(&p, &s, &pt, mu);
        assert!((compl - mu).abs() < 1e-15);
    }

    #[test]
    fn newton_step_on_quadratic_hits_central_point() {
        // min (x-3)² + 2(y+1)², no bounds: one step from anywhere is exact.
        let f = single(
            2,
            &[FREE, FREE],
            &|x| (x[0].clone() - 3.0).powi(2) + 2.0 * (x[1].clone() + 1.0).powi(2),
            &|_| vec![],
        );
        let s =
            IterationState { x: vec![10.0, -7.0], lambda: vec![], zl: vec![0.0; 2], zu: vec![0.0; 2], mu: 0.1, k: 0 };
        let (d, info) = compute_step(&s, &f, BackendKind::Monolithic, &SolverOptions::default()).unwrap();
        assert!((s.x[0] + d.dx[0] - 3.0).abs() < 1e-12);
        assert!((s.x[1] + d.dx[1] + 1.0).abs() < 1e-12);
        assert_eq!(info.corrections, 0);
        let at = IterationState { x: vec![3.0, -1.0], ..s };
        let (d, _) = compute_step(&at, &f, BackendKind::Monolithic, &SolverOptions::default()).unwrap();
        assert_eq!(d.norm_inf(), 0.0);
    }

    #[test]
    fn options_validated() {
        let f = single(1, &[FREE], &|x| x[0].clone() * x[0].clone(), &|_| vec![]);
        let bad = SolverOptions { tol: 0.0, ..Default::default() };
        assert!(matches!(solve(&f, &bad), Err(IpmError::InvalidOptions(_))));
        let bad = SolverOptions { fraction_to_boundary: 1.0, ..Default::default() };
        assert!(matches!(solve(&f, &bad), Err(IpmError::InvalidOptions(_))));
    }
}
