//! KKT systems of the interior-point method and their solvers.
//!
//! The reduced augmented matrix
//!
//! ```text
//! [ W + Σ + δw I    Jᵀ    ]
//! [ J              −δc I  ]
//! ```
//!
//! is assembled once per iteration into a fixed lower-triangle pattern of
//! dimension `n + m` (variables first, then rows). Backends factor it either
//! whole ([`MonolithicSolver`]) or through a bordered block decomposition
//! ([`SchurSolver`]), where the border is either the link rows (dual) or a
//! master node's variables (tree).

mod arrowhead;
mod monolithic;

pub use arrowhead::{schur_solve, ArrowFactor, BlockKkt, BlockLayout, SchurSolver};
pub use monolithic::MonolithicSolver;

use std::path::Path;

use thiserror::Error;

use crate::ad::FunctionSet;
use crate::expr::NodeId;
use crate::graph::FlatNlp;
use crate::linsolve::{Inertia, LinsolveError, SparseSym};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KktError {
    #[error("link row {row} is not affine; Schur backends need affine links")]
    NonAffineLink { row: usize },
    #[error("link row {row} does not couple the master with exactly one other block")]
    NotTwoStage { row: usize },
    #[error("master node {0} is not a block of this problem")]
    UnknownMaster(NodeId),
    #[error("entry ({row}, {col}) couples two different blocks")]
    CrossBlockEntry { row: usize, col: usize },
    #[error(transparent)]
    Linsolve(#[from] LinsolveError),
}

/// Which KKT solver to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Monolithic,
    /// Border = all link rows; one block per flat block.
    SchurDual,
    /// Border = the master node's variables and rows; every other block
    /// absorbs the link rows that touch it.
    SchurTree {
        master: NodeId,
    },
}

impl BackendKind {
    pub fn name(&self) -> &'static str {
        match self {
            BackendKind::Monolithic => "monolithic",
            BackendKind::SchurDual => "schur-dual",
            BackendKind::SchurTree { .. } => "schur-tree",
        }
    }
}

/// Augmented matrix pattern plus scatter maps from derivative values.
#[derive(Clone, Debug)]
pub struct KktMatrix {
    pub n: usize,
    pub m: usize,
    /// Values without regularization.
    pub matrix: SparseSym,
    hess_map: Vec<usize>,
    jac_map: Vec<usize>,
    diag: Vec<usize>,
}

impl KktMatrix {
    pub fn new(f: &FunctionSet) -> Self {
        let (n, m) = (f.n_vars(), f.n_cons());
        let (hr, hc) = f.hessian_structure();
        let (jr, jc) = f.jacobian_structure();
        let mut entries: Vec<(usize, usize)> = Vec::with_capacity(hr.len() + jr.len() + n + m);
        entries.extend(hr.iter().zip(hc).map(|(&r, &c)| (r, c)));
        entries.extend(jr.iter().zip(jc).map(|(&r, &c)| (n + r, c)));
        entries.extend((0..n + m).map(|i| (i, i)));
        let (matrix, map) = SparseSym::pattern(n + m, &entries);
        let nh = hr.len();
        let nj = jr.len();
        KktMatrix {
            n,
            m,
            matrix,
            hess_map: map[..nh].to_vec(),
            jac_map: map[nh..nh + nj].to_vec(),
            diag: map[nh + nj..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    /// Fills values from Lagrangian-Hessian values, the barrier diagonal and Jacobian values.
    pub fn set_values(&mut self, hess: &[f64], sigma: &[f64], jac: &[f64]) {
        let v = &mut self.matrix.values;
        v.fill(0.0);
        for (&p, &h) in self.hess_map.iter().zip(hess) {
            v[p] += h;
        }
        for (&p, &j) in self.jac_map.iter().zip(jac) {
            v[p] += j;
        }
        for (i, &s) in sigma.iter().enumerate() {
            v[self.diag[i]] += s;
        }
    }

    /// Copy with `delta_w` on the variable diagonal and `-delta_c` on the row diagonal.
    pub fn regularized(&self, delta_w: f64, delta_c: f64) -> SparseSym {
        let mut m = self.matrix.clone();
        if delta_w != 0.0 {
            for &p in &self.diag[..self.n] {
                m.values[p] += delta_w;
            }
        }
        if delta_c != 0.0 {
            for &p in &self.diag[self.n..] {
                m.values[p] -= delta_c;
            }
        }
        m
    }

    /// Inertia the regularized matrix must have for a usable step.
    pub fn target_inertia(&self) -> Inertia {
        Inertia::new(self.n, self.m, 0)
    }
}

/// A factor-then-solve KKT backend.
pub trait KktSolver: Send {
    /// Factors the regularized matrix and returns its inertia.
    fn factor(&mut self, kkt: &KktMatrix, delta_w: f64, delta_c: f64) -> Result<Inertia, KktError>;

    /// Solves with the last factorization, refining against the regularized
    /// matrix. Returns the solution and the final residual ∞-norm.
    fn solve(&self, rhs: &[f64]) -> (Vec<f64>, f64);

    /// Dimension of the dense coupling matrix (zero for the monolithic solver).
    fn schur_dim(&self) -> usize;

    fn kind(&self) -> BackendKind;

    /// Writes the last factored system (and Schur matrix if any) as Matrix Market files.
    fn dump(&self, dir: &Path, tag: &str) -> std::io::Result<()>;
}

/// Creates a backend for `flat`. Schur backends check link affinity and,
/// for the tree variant, the two-stage shape.
pub fn make_solver(kind: BackendKind, flat: &FlatNlp, kkt: &KktMatrix) -> Result<Box<dyn KktSolver>, KktError> {
    Ok(match kind {
        BackendKind::Monolithic => Box::new(MonolithicSolver::new()),
        BackendKind::SchurDual | BackendKind::SchurTree { .. } => {
            Box::new(SchurSolver::new(BlockLayout::new(flat, kkt, kind)?))
        }
    })
}

/// Up to `max_refine` refinement steps of `solve` against `m`; stops once
/// the residual stops shrinking. Returns the residual ∞-norm of `x`.
pub(crate) fn refine(
    m: &SparseSym,
    rhs: &[f64],
    x: &mut Vec<f64>,
    max_refine: usize,
    solve: &dyn Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    let n = rhs.len();
    let mut r = vec![0.0; n];
    let resid = |x: &[f64], r: &mut [f64]| {
        m.matvec(x, r);
        let mut norm = 0.0f64;
        for i in 0..n {
            r[i] = rhs[i] - r[i];
            norm = norm.max(r[i].abs());
        }
        norm
    };
    let mut res = resid(x, &mut r);
    let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for _ in 0..max_refine {
        if res <= 1e-15 * scale {
            break;
        }
        let d = solve(&r);
        let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let mut rc = vec![0.0; n];
        let rc_norm = resid(&cand, &mut rc);
        if !(rc_norm < res) {
            break;
        }
        *x = cand;
        r = rc;
        res = rc_norm;
    }
    res
}
