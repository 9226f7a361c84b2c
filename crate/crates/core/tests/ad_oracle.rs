mod common;

use common::{derivative_errors, expression_corpus, random_expr, well_inside_domain};
use graphnlp::ad::{self, FunctionSet};
use graphnlp::Expr;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn corpus_derivatives_match_finite_differences() {
    let corpus = expression_corpus(1, 1000);
    let mut worst = (0.0f64, 0.0f64);
    for (k, entry) in corpus.iter().enumerate() {
        let err = derivative_errors(entry, 1e-6);
        assert!(
            err.gradient <= 1e-5,
            "expression {k}: gradient error {:.3e} for {:?} at {:?}",
            err.gradient,
            entry.expr,
            entry.x
        );
        assert!(
            err.hessian <= 1e-4,
            "expression {k}: Hessian error {:.3e} for {:?} at {:?}",
            err.hessian,
            entry.expr,
            entry.x
        );
        worst = (worst.0.max(err.gradient), worst.1.max(err.hessian));
    }
    eprintln!("worst relative errors: gradient {:.3e}, Hessian {:.3e}", worst.0, worst.1);
}

#[test]
fn corpus_uses_every_kind() {
    let corpus = expression_corpus(1, 1000);
    let mut seen = std::collections::BTreeSet::new();
    for e in &corpus {
        e.expr.visit_postorder(&mut |s| {
            let tag = format!("{:?}", s.kind());
            seen.insert(tag.split(['(', ' ']).next().unwrap().to_string());
        });
    }
    for kind in [
        "Constant",
        "Variable",
        "Sum",
        "Product",
        "Difference",
        "Quotient",
        "PowInt",
        "PowReal",
        "Exp",
        "Log",
        "SmoothAbs",
    ] {
        assert!(seen.contains(kind), "{kind} missing from corpus: {seen:?}");
    }
}

#[test]
fn hessian_pattern_is_point_independent() {
    let corpus = expression_corpus(2, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for chunk in corpus.chunks(5) {
        let n = chunk.iter().map(|e| e.x.len()).max().unwrap();
        let cons: Vec<Expr> = chunk.iter().map(|e| e.expr.clone()).collect();
        let fs = FunctionSet::new_free(n, &cons[..1], &cons[1..]).unwrap();
        let (hr, hc) = fs.hessian_structure();
        let (jr, jc) = fs.jacobian_structure();
        let (hr, hc, jr, jc) = (hr.to_vec(), hc.to_vec(), jr.to_vec(), jc.to_vec());
        let pad = |x: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut v = x.to_vec();
            v.resize_with(n, || rng.gen_range(-1.0..1.0));
            v
        };
        for e in chunk {
            let x = pad(&e.x, &mut rng);
            let h = ad::lagrangian_hessian(&cons[0], &cons[1..], &x, 1.0, &vec![1.0; cons.len() - 1]);
            // Points outside another member's domain may fail to evaluate; the pattern never depends on them.
            if let Ok(h) = h {
                assert_eq!((h.rows, h.cols), (hr.clone(), hc.clone()));
            }
            if let Ok(j) = ad::jacobian(&cons[1..], &x) {
                assert_eq!((j.rows, j.cols), (jr.clone(), jc.clone()));
            }
        }
    }
}

#[test]
fn hessian_lower_triangle_mirrors_exactly() {
    for entry in expression_corpus(4, 200) {
        let h = ad::lagrangian_hessian(&entry.expr, &[], &entry.x, 1.0, &[]).unwrap();
        let n = entry.x.len();
        let mut d = vec![vec![0.0; n]; n];
        for k in 0..h.values.len() {
            assert!(h.rows[k] >= h.cols[k], "upper-triangle entry stored");
            d[h.rows[k]][h.cols[k]] += h.values[k];
            if h.rows[k] != h.cols[k] {
                d[h.cols[k]][h.rows[k]] += h.values[k];
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(d[i][j].to_bits(), d[j][i].to_bits());
            }
        }
    }
}

proptest! {
    #[test]
    fn smooth_abs_bounds(u in -1e3f64..1e3) {
        let s = Expr::x(0).smooth_abs().evaluate(&[u]).unwrap();
        prop_assert!(s >= u.abs());
        prop_assert!(s - u.abs() <= 1e-4f64.sqrt() + 1e-15);
    }

    #[test]
    fn random_gradients_match_differences(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=5);
        let e = random_expr(&mut rng, n, 4);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        prop_assume!(well_inside_domain(&e, &x));
        let err = derivative_errors(&common::CorpusEntry { expr: e, x }, 1e-6);
        prop_assert!(err.gradient <= 1e-5);
        prop_assert!(err.hessian <= 1e-4);
    }
}
