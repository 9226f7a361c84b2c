//! Symmetric indefinite factorizations with inertia.

pub mod amd;
pub mod dense;
pub mod ldlt;
pub mod mm;
pub mod sparse;

pub use amd::amd_order;
pub use dense::{dense_solve, dense_sym_factor, DenseLdlt, DenseSym};
pub use ldlt::{ldlt_factor, Factorization, LdltOptions, Pivot, SymbolicOrdering};
pub use mm::{read_sparse_sym, write_dense_sym, write_sparse_sym};
pub use sparse::SparseSym;

use thiserror::Error;

/// Counts of positive, negative and zero eigenvalues.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Inertia {
    pub fn new(positive: usize, negative: usize, zero: usize) -> Self {
        Inertia { positive, negative, zero }
    }

    pub fn dim(&self) -> usize {
        self.positive + self.negative + self.zero
    }
}

impl std::ops::Add for Inertia {
    type Output = Inertia;
    fn add(self, o: Inertia) -> Inertia {
        Inertia::new(self.positive + o.positive, self.negative + o.negative, self.zero + o.zero)
    }
}

impl std::fmt::Display for Inertia {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.positive, self.negative, self.zero)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinsolveError {
    #[error("matrix is singular to working precision, inertia {0}")]
    StructurallySingular(Inertia),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix market: {0}")]
    MatrixMarket(String),
}

/// Eigenvalue sign classification of a symmetric 2x2 block `[[a, b], [b, c]]`.
pub(crate) fn inertia_2x2(a: f64, b: f64, c: f64) -> Inertia {
    let det = a * c - b * b;
    if det < 0.0 {
        Inertia::new(1, 1, 0)
    } else if a + c > 0.0 {
        Inertia::new(2, 0, 0)
    } else {
        Inertia::new(0, 2, 0)
    }
}
