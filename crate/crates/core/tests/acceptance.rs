//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any required check fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{
    analytic_suite, derivative_errors, eig_inertia, expression_corpus, final_objectives, gas_flat, gas_physics,
    pid_flat, random_symmetric, step_bits, step_mismatch, GasSolution,
};
use graphnlp::graph::{aggregate, flatten, partition};
use graphnlp::ipm::{solve, SolveStatus, SolverOptions};
use graphnlp::kkt::{schur_solve, BackendKind, BlockLayout, KktMatrix};
use graphnlp::linsolve::{ldlt_factor, LdltOptions, SparseSym, SymbolicOrdering};
use graphnlp::models::{build_gas, build_pid, pid_time_partition, GasConfig, PidConfig, MASTER_LABEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    label: String,
    pass: bool,
    /// Failures of non-required checks are printed but do not fail the run.
    required: bool,
    detail: String,
}

type Criterion = fn() -> Vec<Check>;

fn check(label: &str, pass: bool, detail: String) -> Check {
    Check { label: label.to_string(), pass, required: true, detail }
}

fn criterion_1() -> Vec<Check> {
    let start = Instant::now();
    let corpus = expression_corpus(1, 1000);
    let (mut grad, mut hess) = (0.0f64, 0.0f64);
    for entry in &corpus {
        let e = derivative_errors(entry, 1e-6);
        grad = grad.max(e.gradient);
        hess = hess.max(e.hessian);
    }
    let secs = start.elapsed().as_secs_f64();
    vec![check(
        "1",
        corpus.len() == 1000 && grad <= 1e-5 && hess <= 1e-4 && secs < 30.0,
        format!("{} expressions, worst gradient {grad:.2e} (<= 1e-5), worst Hessian {hess:.2e} (<= 1e-4), {secs:.1} s (< 30 s)", corpus.len()),
    )]
}

fn criterion_2() -> Vec<Check> {
    let start = Instant::now();
    let mut out = Vec::new();
    let pid = pid_flat(2, 10);
    let (worst, states) = step_mismatch(&pid, BackendKind::Monolithic, BackendKind::SchurDual);
    out.push(check(
        "2 (pid schur-dual steps)",
        worst <= 1e-8,
        format!("{states} iterations, worst scaled mismatch {worst:.2e} (<= 1e-8)"),
    ));
    let obj = final_objectives(&pid, &[BackendKind::Monolithic, BackendKind::SchurDual]);
    let spread = (obj[0] - obj[1]).abs();
    out.push(check("2 (pid objectives)", spread <= 1e-6, format!("objectives {obj:?}, spread {spread:.2e} (<= 1e-6)")));
    let (gas, tree) = gas_flat(2, 6, 4);
    for other in [BackendKind::SchurDual, tree] {
        let (worst, states) = step_mismatch(&gas, BackendKind::Monolithic, other);
        out.push(check(
            &format!("2 (gas {} steps)", other.name()),
            worst <= 1e-8,
            format!("{states} iterations, worst scaled mismatch {worst:.2e} (<= 1e-8)"),
        ));
    }
    let obj = final_objectives(&gas, &[BackendKind::Monolithic, BackendKind::SchurDual, tree]);
    let spread = obj.iter().fold(0.0f64, |m, o| m.max((o - obj[0]).abs()));
    out.push(check("2 (gas objectives)", spread <= 1e-6, format!("objectives {obj:?}, spread {spread:.2e} (<= 1e-6)")));
    let secs = start.elapsed().as_secs_f64();
    out.push(check("2 (runtime)", secs < 120.0, format!("{secs:.1} s (< 120 s)")));
    out
}

fn criterion_3() -> Vec<Check> {
    let g = build_pid(&PidConfig::default()).unwrap();
    let nodes = g.num_nodes();
    let p = partition(g.clone(), &pid_time_partition(&g, 4).unwrap()).unwrap();
    let sizes: Vec<usize> = p.subgraphs().iter().map(|s| s.all_nodes().len()).collect();
    let agg = aggregate(&g).num_nodes();
    vec![
        check("3 (pid nodes)", nodes == 501, format!("{nodes} nodes (501)")),
        check(
            "3 (time partition)",
            sizes == [126, 125, 125, 125],
            format!("subgraph sizes {sizes:?} ([126, 125, 125, 125])"),
        ),
        check("3 (aggregated)", agg == 6, format!("{agg} nodes after aggregation (6)")),
    ]
}

fn criterion_4() -> Vec<Check> {
    let mut out = Vec::new();
    for s in [1, 2, 4, 8] {
        let cfg = GasConfig { scenarios: s, ..Default::default() };
        let g = aggregate(&build_gas(&cfg).unwrap());
        let master = g.nodes().iter().find(|n| n.label == MASTER_LABEL).unwrap().id();
        let flat = flatten(&g).unwrap();
        let kkt = KktMatrix::new(flat.functions());
        let tree = BlockLayout::new(&flat, &kkt, BackendKind::SchurTree { master }).unwrap().core_dim();
        let dual = BlockLayout::new(&flat, &kkt, BackendKind::SchurDual).unwrap().core_dim();
        out.push(check(
            &format!("4 (S = {s})"),
            tree == 264 && dual == 264 * s,
            format!("nt {}, schur-tree dimension {tree} (264), schur-dual dimension {dual} ({})", cfg.nt, 264 * s),
        ));
    }
    out
}

fn criterion_5() -> Vec<Check> {
    let mut out = Vec::new();
    let mut failures = Vec::new();
    let mut max_iter = 0;
    let suite = analytic_suite();
    for p in &suite {
        let r = solve(&flatten(&p.graph).unwrap(), &SolverOptions::default()).unwrap();
        max_iter = max_iter.max(r.iterations);
        let err = (r.objective - p.optimum).abs();
        if r.status != SolveStatus::Optimal || r.iterations > 100 || err > 1e-6 {
            failures.push(format!("{} ({:?}, {} iterations, error {err:.2e})", p.name, r.status, r.iterations));
        }
    }
    out.push(check(
        "5 (analytic suite)",
        suite.len() == 10 && failures.is_empty(),
        if failures.is_empty() {
            format!("{} problems within 1e-6, at most {max_iter} iterations (<= 100)", suite.len())
        } else {
            format!("failed: {}", failures.join(", "))
        },
    ));
    let opts = SolverOptions { tol: 1e-8, ..Default::default() };
    let r = solve(&flatten(&build_pid(&PidConfig::default()).unwrap()).unwrap(), &opts).unwrap();
    out.push(check(
        "5 (pid defaults)",
        r.status == SolveStatus::Optimal && r.iterations <= 300,
        format!(
            "{:?} in {} iterations (<= 300), kkt error {:.2e}, objective {:.6}",
            r.status, r.iterations, r.kkt_error, r.objective
        ),
    ));
    out
}

fn criterion_6() -> Vec<Check> {
    let GasSolution { objective, report: r } = gas_physics(2, 6, 4);
    vec![
        check(
            "6 (junctions)",
            r.junction_residual <= 1e-8,
            format!("junction residual {:.2e} (<= 1e-8)", r.junction_residual),
        ),
        check(
            "6 (linepack refill)",
            r.refill_margin >= -1e-8,
            format!("smallest end-minus-start linepack {:.3e} (>= -1e-8)", r.refill_margin),
        ),
        check(
            "6 (first stage)",
            r.first_stage_residual <= 1e-8,
            format!("first-stage residual {:.2e} (<= 1e-8)", r.first_stage_residual),
        ),
        check(
            "6 (delivery)",
            r.delivery_excess <= 1e-8,
            format!("delivered minus slack minus demand {:.2e} (<= 1e-8), objective {objective:.4}", r.delivery_excess),
        ),
    ]
}

/// Random arrowhead system: diagonally dominant dense blocks with a dense border.
fn arrowhead(
    rng: &mut ChaCha8Rng,
    blocks: usize,
    size: usize,
    border: usize,
) -> (SparseSym, Vec<Vec<usize>>, Vec<usize>) {
    let n = blocks * size + border;
    let core: Vec<usize> = (n - border..n).collect();
    let mut t = Vec::new();
    let mut idx = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let off = b * size;
        for i in 0..size {
            t.push((off + i, off + i, 4.0 * size as f64 + rng.gen_range(0.0..1.0)));
            for j in 0..i {
                t.push((off + i, off + j, rng.gen_range(-1.0..1.0)));
            }
            for &c in &core {
                t.push((c, off + i, rng.gen_range(-1.0..1.0)));
            }
        }
        idx.push((off..off + size).collect());
    }
    for (k, &c) in core.iter().enumerate() {
        t.push((c, c, -(4.0 * (blocks * size) as f64) - k as f64));
    }
    (SparseSym::from_triplets(n, &t), idx, core)
}

fn best_of(runs: usize, mut f: impl FnMut()) -> f64 {
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_7() -> Vec<Check> {
    let mut out = Vec::new();
    let pid = pid_flat(2, 10);
    let (gas, tree) = gas_flat(2, 6, 4);
    let same = step_bits(&pid, BackendKind::SchurDual, 1) == step_bits(&pid, BackendKind::SchurDual, 4)
        && step_bits(&gas, BackendKind::SchurDual, 1) == step_bits(&gas, BackendKind::SchurDual, 4)
        && step_bits(&gas, tree, 1) == step_bits(&gas, tree, 4);
    out.push(check(
        "7 (bitwise steps)",
        same,
        "schur-dual and schur-tree steps at 4 threads equal 1 thread bit for bit".into(),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (m, blocks, core) = arrowhead(&mut rng, 16, 200, 20);
    let layout = BlockLayout::from_partition(&m, blocks, core, BackendKind::SchurDual).unwrap();
    let bk = layout.extract(&m);
    let rhs: Vec<f64> = (0..m.n).map(|i| ((i * 13 + 5) % 17) as f64 - 8.0).collect();
    let x1 = schur_solve(&layout, &bk, &rhs, 1).unwrap();
    let x4 = schur_solve(&layout, &bk, &rhs, 4).unwrap();
    let serial = best_of(5, || {
        schur_solve(&layout, &bk, &rhs, 1).unwrap();
    });
    let parallel = best_of(5, || {
        schur_solve(&layout, &bk, &rhs, 4).unwrap();
    });
    let speedup = serial / parallel;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    out.push(check(
        "7 (synthetic bitwise)",
        x1.iter().zip(&x4).all(|(a, b)| a.to_bits() == b.to_bits()),
        "16 x 200 blocks, border 20: solution at 4 threads equals 1 thread bit for bit".into(),
    ));
    out.push(Check {
        label: "7 (speedup)".into(),
        pass: speedup >= 2.0,
        // Four threads cannot beat one thread by 2x without four cores.
        required: cores >= 4,
        detail: format!(
            "16 x 200 blocks, border 20: 1 thread {serial:.4} s, 4 threads {parallel:.4} s, speedup {speedup:.2} (>= 2), {cores} core(s) available{}",
            if cores >= 4 { "" } else { "; needs 4 cores, not counted" }
        ),
    });
    out
}

fn criterion_8() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut checked, mut mismatches) = (0, 0);
    while checked < 200 {
        let n = rng.gen_range(1..=50);
        let a = random_symmetric(&mut rng, n);
        let Some(expected) = eig_inertia(&a) else { continue };
        let m = SparseSym::from_dense(&a);
        match ldlt_factor(&m, &SymbolicOrdering::new(&m), &LdltOptions::default()) {
            Ok(f) if f.inertia() == expected => {}
            _ => mismatches += 1,
        }
        checked += 1;
    }
    vec![check("8", mismatches == 0, format!("{checked} matrices, {mismatches} inertia mismatches (0)"))]
}

fn main() {
    let criteria: [(&str, Criterion); 8] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        let checks = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| vec![check(id, false, "panicked".into())]);
        for c in checks {
            println!("{} criterion {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.label, c.detail);
            if !c.pass && c.required {
                failed += 1;
            }
        }
    }
    if failed > 0 {
        println!("{failed} required check(s) failed");
        std::process::exit(1);
    }
}
