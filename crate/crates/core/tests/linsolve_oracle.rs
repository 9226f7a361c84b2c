mod common;

use common::{eig_inertia, jacobi_eigenvalues, random_symmetric};
use graphnlp::linsolve::dense::{dense_solve, dense_sym_factor};
use graphnlp::linsolve::ldlt::{ldlt_factor, Factorization};
use graphnlp::linsolve::{DenseSym, Inertia, LdltOptions, SparseSym, SymbolicOrdering};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sparse_inertia_matches_jacobi_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.gen_range(1..=50);
        let a = random_symmetric(&mut rng, n);
        let Some(expected) = eig_inertia(&a) else { continue };
        let m = SparseSym::from_dense(&a);
        let f = ldlt_factor(&m, &SymbolicOrdering::new(&m), &LdltOptions::default()).expect("nonsingular");
        assert_eq!(f.inertia(), expected, "matrix {checked} (n = {n})");
        let dense = dense_sym_factor(&DenseSym::from_rows(&a)).expect("nonsingular");
        assert_eq!(dense.inertia(), expected, "dense, matrix {checked}");
        checked += 1;
    }
}

#[test]
fn spd_residual_after_refinement() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let n = 20;
    let g: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n).map(|j| (0..n).map(|k| g[k][i] * g[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let m = SparseSym::from_dense(&a);
    let f = ldlt_factor(&m, &SymbolicOrdering::new(&m), &LdltOptions::default()).unwrap();
    assert_eq!(f.inertia(), Inertia::new(n, 0, 0));
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x = vec![0.0; n];
    let res = f.solve_refined(&m, &b, &mut x, 1, 0.0);
    assert!(res / common::inf_norm(&b) <= 1e-12, "relative residual {}", res / common::inf_norm(&b));
}

#[test]
fn ill_conditioned_residual() {
    // Graded diagonal scaling of a random indefinite matrix, conditioning about 1e8.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40;
    let mut a = random_symmetric(&mut rng, n);
    for i in 0..n {
        a[i][i] += if i % 2 == 0 { 8.0 } else { -8.0 };
    }
    let d: Vec<f64> = (0..n).map(|i| 10f64.powf(-4.0 * i as f64 / (n - 1) as f64)).collect();
    for i in 0..n {
        for j in 0..n {
            a[i][j] *= d[i] * d[j];
        }
    }
    let m = SparseSym::from_dense(&a);
    let f = ldlt_factor(&m, &SymbolicOrdering::new(&m), &LdltOptions::default()).unwrap();
    let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
    let mut x = vec![0.0; n];
    let res = f.solve_refined(&m, &b, &mut x, 2, 1e-10);
    assert!(res <= 1e-10 * common::inf_norm(&b), "residual {res}");
}

#[test]
fn block_rhs_equals_stacked_single_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let n = 30;
    let a = random_symmetric(&mut rng, n);
    let m = SparseSym::from_dense(&a);
    let Ok(f) = ldlt_factor(&m, &SymbolicOrdering::new(&m), &LdltOptions::default()) else {
        panic!("seeded matrix is nonsingular")
    };
    let nrhs = 32;
    let cols: Vec<Vec<f64>> = (0..nrhs).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut block = vec![0.0; n * nrhs];
    for (c, col) in cols.iter().enumerate() {
        for i in 0..n {
            block[i * nrhs + c] = col[i];
        }
    }
    f.solve_multi(&mut block, nrhs);
    for (c, col) in cols.iter().enumerate() {
        let mut x = col.clone();
        f.solve(&mut x);
        for i in 0..n {
            assert_eq!(block[i * nrhs + c], x[i]);
        }
    }
}

#[test]
fn factorization_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_symmetric(&mut rng, 45);
    let m = SparseSym::from_dense(&a);
    let ord = SymbolicOrdering::new(&m);
    let f1 = ldlt_factor(&m, &ord, &LdltOptions::default()).unwrap();
    let f2 = ldlt_factor(&m, &SymbolicOrdering::new(&m), &LdltOptions::default()).unwrap();
    assert_eq!(f1.permutation(), f2.permutation());
    let b: Vec<f64> = (0..45).map(|i| i as f64).collect();
    let (mut x1, mut x2) = (b.clone(), b);
    f1.solve(&mut x1);
    f2.solve(&mut x2);
    assert_eq!(x1, x2);
}

#[test]
fn partial_factorization_defers_vanishing_schur_rows() {
    // [[A, B], [Bᵀ, Bᵀ A⁻¹ B]] has a zero Schur complement on its last two rows.
    let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, -3.0, 1.0], vec![0.0, 1.0, 2.0]];
    let b = [vec![1.0, 2.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let ainv_b: Vec<Vec<f64>> = (0..2).map(|c| common::dense_solve(&a, &[b[0][c], b[1][c], b[2][c]])).collect();
    let mut full = vec![vec![0.0; 5]; 5];
    for i in 0..3 {
        for j in 0..3 {
            full[i][j] = a[i][j];
        }
        for c in 0..2 {
            full[i][3 + c] = b[i][c];
            full[3 + c][i] = b[i][c];
        }
    }
    for p in 0..2 {
        for q in 0..2 {
            full[3 + p][3 + q] = (0..3).map(|i| b[i][p] * ainv_b[q][i]).sum();
        }
    }
    let m = SparseSym::from_dense(&full);
    let f = Factorization::partial(&m, &SymbolicOrdering::natural(&m), &LdltOptions::default());
    assert_eq!(f.deferred(), &[3, 4]);
    assert!(f.remainder().iter().all(|v| v.abs() < 1e-12));
    assert_eq!(f.inertia(), eig_inertia(&a).unwrap());
}

#[test]
fn dense_residual_and_2x2() {
    let x =
        dense_solve(&dense_sym_factor(&DenseSym::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap(), &[2.0, 3.0]);
    assert_eq!(x, vec![3.0, 2.0]);
}

proptest! {
    #[test]
    fn solve_residual_small(seed in 0u64..10_000, n in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symmetric(&mut rng, n);
        prop_assume!(eig_inertia(&a).is_some());
        let ev = jacobi_eigenvalues(&a);
        let amax = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let amin = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        prop_assume!(amax / amin <= 1e8);
        let m = SparseSym::from_dense(&a);
        let f = ldlt_factor(&m, &SymbolicOrdering::new(&m), &LdltOptions::default()).unwrap();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let mut x = vec![0.0; n];
        let res = f.solve_refined(&m, &b, &mut x, 2, 1e-10);
        prop_assert!(res <= 1e-10 * common::inf_norm(&b));
    }
}
