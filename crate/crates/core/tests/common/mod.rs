//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use graphnlp::ad;
use graphnlp::expr::ExprKind;
use graphnlp::graph::{aggregate, flatten, ConstraintKind, FlatNlp, OptiGraph};
use graphnlp::ipm::{compute_step, solve, solve_with_observer, SolveStatus, SolverOptions};
use graphnlp::kkt::BackendKind;
use graphnlp::linsolve::Inertia;
use graphnlp::models::{build_gas, build_pid, GasConfig, PidConfig, MASTER_LABEL};
use graphnlp::Expr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let total: f64 = m.iter().flatten().map(|v| v * v).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// Inertia from eigenvalue signs, or `None` when an eigenvalue sits at roundoff level.
pub fn eig_inertia(a: &[Vec<f64>]) -> Option<Inertia> {
    let ev = jacobi_eigenvalues(a);
    let scale = ev.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if ev.iter().any(|v| v.abs() < 1e-9 * scale) {
        return None;
    }
    Some(Inertia::new(ev.iter().filter(|v| **v > 0.0).count(), ev.iter().filter(|v| **v < 0.0).count(), 0))
}

/// Gaussian elimination with partial pivoting on a dense copy.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().partial_cmp(&m[j][k].abs()).unwrap()).unwrap();
        m.swap(k, p);
        x.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k][j] * x[j]).sum();
        x[k] = (x[k] - s) / m[k][k];
    }
    x
}

/// Random symmetric matrix of mixed definiteness: a random sparse pattern,
/// some zero diagonals, and occasionally a saddle-point layout.
pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    let density: f64 = rng.gen_range(0.1..0.6);
    let saddle = rng.gen_bool(0.3);
    let nv = if saddle { (n * 2 / 3).max(1) } else { n };
    for i in 0..n {
        for j in 0..=i {
            let in_zero_block = saddle && i >= nv && j >= nv;
            if in_zero_block {
                continue;
            }
            if i == j {
                if rng.gen_bool(0.8) {
                    a[i][i] = rng.gen_range(-5.0..5.0);
                }
            } else if rng.gen_bool(density) {
                let v = rng.gen_range(-3.0..3.0);
                a[i][j] = v;
                a[j][i] = v;
            }
        }
    }
    a
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Random expression over `Expr::x(0..nvars)` with depth at most `depth`.
pub fn random_expr(rng: &mut ChaCha8Rng, nvars: usize, depth: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.75) {
            Expr::x(rng.gen_range(0..nvars))
        } else {
            Expr::constant(rng.gen_range(-2.0..2.0))
        };
    }
    let sub = |rng: &mut ChaCha8Rng| random_expr(rng, nvars, depth - 1);
    match rng.gen_range(0..100) {
        0..=19 => {
            let k = rng.gen_range(2..=3);
            Expr::sum((0..k).map(|_| sub(rng)))
        }
        20..=39 => Expr::product(sub(rng), sub(rng)),
        40..=54 => Expr::difference(sub(rng), sub(rng)),
        55..=64 => Expr::quotient(sub(rng), sub(rng)),
        65..=74 => sub(rng).powi(rng.gen_range(-2..=3)),
        75..=81 => sub(rng).powf(rng.gen_range(0.5..2.5)),
        82..=87 => sub(rng).exp(),
        88..=93 => sub(rng).ln(),
        _ => sub(rng).smooth_abs(),
    }
}

/// Minimum distance kept from singular points, and the largest magnitude
/// allowed for any subexpression.
const DOMAIN_MARGIN: f64 = 0.2;
const VALUE_CAP: f64 = 1e3;

/// True when every subexpression of `e` at `x` is finite, below
/// `VALUE_CAP`, and at least `DOMAIN_MARGIN` away from the domain boundary
/// of quotients, logarithms and powers.
pub fn well_inside_domain(e: &Expr, x: &[f64]) -> bool {
    let mut ok = true;
    e.visit_postorder(&mut |s| {
        if !ok {
            return;
        }
        let child = |c: &Expr| c.evaluate(x).unwrap_or(f64::NAN);
        let margin = match s.kind() {
            ExprKind::Quotient(_, d) => child(d).abs(),
            ExprKind::Log(a) | ExprKind::PowReal(a, _) => child(a),
            ExprKind::PowInt(a, p) if *p < 0 => child(a).abs(),
            _ => f64::INFINITY,
        };
        let v = s.evaluate(x).unwrap_or(f64::NAN);
        ok = margin >= DOMAIN_MARGIN && v.is_finite() && v.abs() <= VALUE_CAP;
    });
    ok
}

/// One corpus entry: an expression, its variable count and an evaluation point.
pub struct CorpusEntry {
    pub expr: Expr,
    pub x: Vec<f64>,
}

/// `size` random expressions (≤ 5 variables, depth ≤ 6), each paired with a
/// point well inside its domain. Expressions without such a point among 20
/// draws are discarded and redrawn.
pub fn expression_corpus(seed: u64, size: usize) -> Vec<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let nvars = rng.gen_range(1..=5);
        let depth = rng.gen_range(1..=6);
        let expr = random_expr(&mut rng, nvars, depth);
        for _ in 0..20 {
            let x: Vec<f64> = (0..nvars).map(|_| rng.gen_range(-1.5..1.5)).collect();
            if well_inside_domain(&expr, &x) {
                out.push(CorpusEntry { expr, x });
                break;
            }
        }
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn dense_gradient(e: &Expr, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for (i, v) in ad::gradient(e, x).expect("gradient") {
        g[i] += v;
    }
    g
}

/// Largest relative errors over a corpus.
#[derive(Debug, Default, Clone, Copy)]
pub struct DerivativeErrors {
    pub gradient: f64,
    pub hessian: f64,
}

/// Gradient vs central differences of values and Hessian vs central
/// differences of gradients, both with step `h`; errors are relative with a
/// floor of one.
pub fn derivative_errors(entry: &CorpusEntry, h: f64) -> DerivativeErrors {
    let (e, x) = (&entry.expr, &entry.x);
    let n = x.len();
    let g = dense_gradient(e, x);
    let hess = ad::lagrangian_hessian(e, &[], x, 1.0, &[]).expect("hessian");
    let mut hd = vec![vec![0.0; n]; n];
    for k in 0..hess.values.len() {
        let (r, c) = (hess.rows[k], hess.cols[k]);
        hd[r][c] += hess.values[k];
        if r != c {
            hd[c][r] += hess.values[k];
        }
    }
    let mut out = DerivativeErrors::default();
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fd = (e.evaluate(&xp).unwrap() - e.evaluate(&xm).unwrap()) / (2.0 * h);
        out.gradient = out.gradient.max(rel_err(g[j], fd));
        let (gp, gm) = (dense_gradient(e, &xp), dense_gradient(e, &xm));
        for i in 0..n {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            out.hessian = out.hessian.max(rel_err(hd[i][j], fd));
        }
    }
    out
}

/// Small analytic problem with a hand-derived optimal objective.
pub struct AnalyticProblem {
    pub name: &'static str,
    pub graph: OptiGraph,
    pub optimum: f64,
}

/// Single-node graph with variables `(lower, upper, init)`.
fn one_node(
    name: &'static str,
    vars: &[(f64, f64, f64)],
    objective: impl Fn(&[Expr]) -> Expr,
    constraints: impl Fn(&[Expr]) -> Vec<(Expr, ConstraintKind)>,
    optimum: f64,
) -> AnalyticProblem {
    let mut g = OptiGraph::new(name);
    let id = g.add_node("n");
    let x: Vec<Expr> = vars
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi, init))| Expr::var(g.add_variable(id, format!("x{i}"), lo, hi, init).unwrap()))
        .collect();
    for (c, kind) in constraints(&x) {
        g.add_constraint(id, c, kind).unwrap();
    }
    g.set_objective(id, objective(&x)).unwrap();
    AnalyticProblem { name, graph: g, optimum }
}

/// Ten problems: bound, equality and inequality constrained quadratics, a
/// lifted Rosenbrock, nonlinear objectives and a two-node linked problem.
pub fn analytic_suite() -> Vec<AnalyticProblem> {
    const INF: f64 = f64::INFINITY;
    let free = (-INF, INF, 0.0);
    let mut v = vec![
        // x* = 2.
        one_node("bounded_interior", &[(0.0, INF, 0.0)], |x| (&x[0] - 2.0).powi(2), |_| vec![], 0.0),
        // x* = (0.5, 0.5) by symmetry.
        one_node(
            "equality_quadratic",
            &[free, free],
            |x| &x[0] * &x[0] + &x[1] * &x[1],
            |x| vec![(&x[0] + &x[1] - 1.0, ConstraintKind::Equality)],
            0.5,
        ),
        // Stationary point of -x(2 - x): x* = (1, 1).
        one_node(
            "bilinear",
            &[(0.0, INF, 0.5), (0.0, INF, 0.5)],
            |x| -(&x[0] * &x[1]),
            |x| vec![(&x[0] + &x[1] - 2.0, ConstraintKind::Equality)],
            -1.0,
        ),
        // (1 - x)^2 + 100 w^2 with w = y - x^2: zero at x = y = 1.
        one_node(
            "lifted_rosenbrock",
            &[(-INF, INF, -1.2), (-INF, INF, 1.0), free],
            |x| (1.0 - &x[0]).powi(2) + 100.0 * x[2].powi(2),
            |x| vec![(&x[2] - (&x[1] - x[0].powi(2)), ConstraintKind::Equality)],
            0.0,
        ),
        // Linear objective on the disc of radius sqrt 2: x* = (-1, -1).
        one_node(
            "disc_linear",
            &[free, free],
            |x| &x[0] + &x[1],
            |x| vec![(x[0].powi(2) + x[1].powi(2), ConstraintKind::le(2.0))],
            -2.0,
        ),
        // Projection of (3, -1) onto [0, 1] x [0, 2] is (1, 0): 4 + 1.
        one_node(
            "box_quadratic",
            &[(0.0, 1.0, 0.5), (0.0, 2.0, 1.0)],
            |x| (&x[0] - 3.0).powi(2) + (&x[1] + 1.0).powi(2),
            |_| vec![],
            5.0,
        ),
        // exp(x) = 2 at x* = ln 2.
        one_node("exp_linear", &[free], |x| x[0].exp() - 2.0 * &x[0], |_| vec![], 2.0 - 2.0 * 2f64.ln()),
        // Lagrange: x = l/2, y = l/4, z = l/6, l = 12/11, f = 11 l^2 / 24 = 6/11.
        one_node(
            "weighted_equality",
            &[free, free, free],
            |x| x[0].powi(2) + 2.0 * x[1].powi(2) + 3.0 * x[2].powi(2),
            |x| vec![(&x[0] + &x[1] + &x[2] - 1.0, ConstraintKind::Equality)],
            6.0 / 11.0,
        ),
        // -ln x - ln y on x + y <= 2: x* = (1, 1).
        one_node(
            "log_utility",
            &[(0.01, INF, 0.5), (0.01, INF, 0.5)],
            |x| -(x[0].ln()) - x[1].ln(),
            |x| vec![(&x[0] + &x[1], ConstraintKind::le(2.0))],
            0.0,
        ),
    ];
    // Two nodes tied by x = y: x* = y* = 2, f = 1 + 1.
    let mut g = OptiGraph::new("linked_nodes");
    let a = g.add_node("a");
    let b = g.add_node("b");
    let x = Expr::var(g.add_variable(a, "x", -INF, INF, 0.0).unwrap());
    let y = Expr::var(g.add_variable(b, "y", -INF, INF, 0.0).unwrap());
    g.set_objective(a, (&x - 1.0).powi(2)).unwrap();
    g.set_objective(b, (&y - 3.0).powi(2)).unwrap();
    g.link_constraint(&x - &y, ConstraintKind::Equality).unwrap();
    v.push(AnalyticProblem { name: "linked_nodes", graph: g, optimum: 2.0 });
    v
}

/// Largest `‖step_b − step_a‖∞ / (1 + ‖step_a‖∞)` over every iterate of a
/// solve with backend `a`, both steps recomputed from scratch on each
/// state. Returns the ratio and the number of states checked.
pub fn step_mismatch(flat: &FlatNlp, a: BackendKind, b: BackendKind) -> (f64, usize) {
    let opts = SolverOptions { backend: a, ..Default::default() };
    let mut states = Vec::new();
    let r = solve_with_observer(flat, &opts, &mut |e| states.push(e.state.clone())).expect("solve");
    assert_eq!(r.status, SolveStatus::Optimal);
    let mut worst = 0.0f64;
    for s in &states {
        let (da, _) = compute_step(s, flat, a, &opts).expect("step a");
        let (db, _) = compute_step(s, flat, b, &SolverOptions { backend: b, ..opts.clone() }).expect("step b");
        worst = worst.max(db.diff_inf(&da) / (1.0 + da.norm_inf()));
    }
    (worst, states.len())
}

/// Every step of a solve, flattened to bit patterns.
pub fn step_bits(flat: &FlatNlp, backend: BackendKind, threads: usize) -> Vec<Vec<u64>> {
    let opts = SolverOptions { backend, threads, ..Default::default() };
    let mut out = Vec::new();
    solve_with_observer(flat, &opts, &mut |e| {
        let d = e.step;
        out.push(d.dx.iter().chain(&d.dlambda).chain(&d.dzl).chain(&d.dzu).map(|v| v.to_bits()).collect());
    })
    .expect("solve");
    out
}

/// Solves with each backend and returns the final objectives.
pub fn final_objectives(flat: &FlatNlp, backends: &[BackendKind]) -> Vec<f64> {
    backends
        .iter()
        .map(|&backend| {
            let r = solve(flat, &SolverOptions { backend, ..Default::default() }).expect("solve");
            assert_eq!(r.status, SolveStatus::Optimal, "{}", backend.name());
            r.objective
        })
        .collect()
}

/// Aggregated gas model and its schur-tree backend.
pub fn gas_flat(scenarios: usize, nt: usize, nx: usize) -> (FlatNlp, BackendKind) {
    let g = aggregate(&build_gas(&GasConfig::with_size(scenarios, nt, nx)).unwrap());
    let master = g.nodes().iter().find(|n| n.label == MASTER_LABEL).unwrap().id();
    (flatten(&g).unwrap(), BackendKind::SchurTree { master })
}

pub fn pid_flat(ns: usize, n: usize) -> FlatNlp {
    flatten(&aggregate(&build_pid(&PidConfig::with_size(ns, n)).unwrap())).unwrap()
}

/// Worst violations of the gas network's physical relations at a solution.
#[derive(Debug, Clone, Copy, Default)]
pub struct GasPhysics {
    /// Junction flow balances and pressure ties.
    pub junction_residual: f64,
    /// Smallest end-minus-start linepack over all pipelines and scenarios.
    pub refill_margin: f64,
    /// First-stage power equal to every scenario's compressor power.
    pub first_stage_residual: f64,
    /// Largest `delivered - overdelivery - demand`.
    pub delivery_excess: f64,
    /// Compressor power outside `[0, power_max]`.
    pub power_bound_violation: f64,
}

pub struct GasSolution {
    pub objective: f64,
    pub report: GasPhysics,
}

/// Solves the gas model with the monolithic backend on the unaggregated
/// graph and measures its physics at the solution.
pub fn gas_physics(scenarios: usize, nt: usize, nx: usize) -> GasSolution {
    let cfg = GasConfig::with_size(scenarios, nt, nx);
    let g = build_gas(&cfg).unwrap();
    let flat = flatten(&g).unwrap();
    let r = solve(&flat, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    let x = &r.final_state.x;
    let value = |v: graphnlp::VariableRef| flat.value(x, v);
    let resid = |e: &Expr| e.evaluate_with(&value).unwrap().abs();
    let var = |label: &str, name: &str| -> f64 {
        let node = g.all_nodes().into_iter().find(|n| n.label == label).unwrap_or_else(|| panic!("no node {label}"));
        let i = node.variables.iter().position(|v| v.name == name).unwrap_or_else(|| panic!("no {name} on {label}"));
        flat.value(x, node.var(i)).unwrap()
    };
    let mut out = GasPhysics { refill_margin: f64::INFINITY, ..Default::default() };
    for l in g.links() {
        out.first_stage_residual = out.first_stage_residual.max(resid(&l.expr));
    }
    let demands = cfg.demands();
    for (s, sg) in g.subgraphs().iter().enumerate() {
        for l in sg.links() {
            out.junction_residual = out.junction_residual.max(resid(&l.expr));
        }
        let tag = format!("s{}", s + 1);
        for t in 1..=nt {
            let last = format!("{tag}.j{}.t{t}", cfg.n_junctions);
            let excess = var(&last, "delivered") - var(&last, "overdelivery") - demands[s][t - 1];
            out.delivery_excess = out.delivery_excess.max(excess);
            for c in 1..=cfg.n_compressors {
                let p = var(&format!("{tag}.c{c}.t{t}"), "power");
                out.power_bound_violation = out.power_bound_violation.max(-p).max(p - cfg.power_max);
                let pbar = var("master", &format!("Pbar_c{c}_t{t}"));
                out.first_stage_residual = out.first_stage_residual.max((pbar - p).abs());
            }
        }
        for p in 1..=cfg.n_pipelines {
            let m0 = var(&format!("{tag}.p{p}.t1.x1"), "linepack");
            let m1 = var(&format!("{tag}.p{p}.t{nt}.x1"), "linepack");
            out.refill_margin = out.refill_margin.min(m1 - m0);
        }
    }
    GasSolution { objective: r.objective, report: out }
}
