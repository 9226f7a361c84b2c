use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::{refine, BackendKind, KktError, KktMatrix, KktSolver};
use crate::linsolve::{
    ldlt_factor, write_sparse_sym, Factorization, Inertia, LdltOptions, LinsolveError, SparseSym, SymbolicOrdering,
};

/// Sparse LDLᵀ of the whole augmented matrix. The fill-reducing ordering is
/// computed on the first factorization and reused while the pattern holds.
#[derive(Default)]
pub struct MonolithicSolver {
    ordering: Option<SymbolicOrdering>,
    factor: Option<Factorization>,
    matrix: Option<SparseSym>,
    pub opts: LdltOptions,
}

impl MonolithicSolver {
    pub fn new() -> Self {
        Self::default()
    }
}

impl KktSolver for MonolithicSolver {
    fn factor(&mut self, kkt: &KktMatrix, delta_w: f64, delta_c: f64) -> Result<Inertia, KktError> {
        let m = kkt.regularized(delta_w, delta_c);
        if !self.ordering.as_ref().is_some_and(|o| o.matches(&m)) {
            self.ordering = Some(SymbolicOrdering::new(&m));
        }
        let ord = self.ordering.as_ref().unwrap();
        let (f, inertia) = match ldlt_factor(&m, ord, &self.opts) {
            Ok(f) => {
                let i = f.inertia();
                (Some(f), i)
            }
            Err(LinsolveError::StructurallySingular(i)) => (None, i),
            Err(e) => return Err(e.into()),
        };
        self.factor = f;
        self.matrix = Some(m);
        Ok(inertia)
    }

    fn solve(&self, rhs: &[f64]) -> (Vec<f64>, f64) {
        let f = self.factor.as_ref().expect("solve after a nonsingular factorization");
        let m = self.matrix.as_ref().unwrap();
        let solve = |b: &[f64]| {
            let mut x = b.to_vec();
            f.solve(&mut x);
            x
        };
        let mut x = solve(rhs);
        let res = refine(m, rhs, &mut x, 3, &solve);
        (x, res)
    }

    fn schur_dim(&self) -> usize {
        0
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Monolithic
    }

    fn dump(&self, dir: &Path, tag: &str) -> std::io::Result<()> {
        if let Some(m) = &self.matrix {
            let mut w = BufWriter::new(File::create(dir.join(format!("kkt_{tag}.mtx")))?);
            write_sparse_sym(m, &mut w)?;
        }
        Ok(())
    }
}
