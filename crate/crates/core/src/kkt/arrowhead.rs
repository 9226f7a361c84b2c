//! Bordered block-diagonal (arrowhead) solves by Schur complement.
//!
//! Each block is factored on its own with deferral of numerically zero rows.
//! The deferred rows join the border in an extended Schur matrix, so the
//! inertia of the whole system is the sum of the block pivot inertias and
//! the Schur inertia even when individual blocks are singular.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::{refine, BackendKind, KktError, KktMatrix, KktSolver};
use crate::graph::FlatNlp;
use crate::linsolve::{
    write_dense_sym, write_sparse_sym, DenseLdlt, DenseSym, Factorization, Inertia, LdltOptions, SparseSym,
    SymbolicOrdering,
};

const BATCH: usize = 32;
const CORE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
enum Dest {
    Block(u32, u32),
    Couple(u32, u32),
    Core(u32, u32),
}

/// Fixed split of a symmetric pattern into blocks and a core (border).
#[derive(Clone, Debug)]
pub struct BlockLayout {
    kind: BackendKind,
    n: usize,
    pattern: SparseSym,
    blocks: Arc<Vec<Vec<usize>>>,
    core: Arc<Vec<usize>>,
    dest: Vec<Dest>,
    block_patterns: Vec<SparseSym>,
    orderings: Vec<SymbolicOrdering>,
    /// Per block: (local row, core index) of each coupling entry.
    coupling: Vec<Vec<(usize, usize)>>,
}

impl BlockLayout {
    /// Layout for a flattened problem: dual uses the link rows as the core,
    /// tree uses the master block.
    pub fn new(flat: &FlatNlp, kkt: &KktMatrix, kind: BackendKind) -> Result<Self, KktError> {
        if let Err(row) = flat.links_affine() {
            return Err(KktError::NonAffineLink { row });
        }
        let n = flat.n_vars;
        let own = |b: usize| -> Vec<usize> {
            let r = &flat.blocks[b];
            r.vars.clone().chain(r.rows.clone().map(|i| n + i)).collect()
        };
        let (blocks, core) = match kind {
            BackendKind::Monolithic => panic!("monolithic backend has no block layout"),
            BackendKind::SchurDual => {
                let blocks: Vec<Vec<usize>> = (0..flat.blocks.len()).map(own).collect();
                (blocks, flat.link_rows.clone().map(|r| n + r).collect())
            }
            BackendKind::SchurTree { master } => {
                let mb = flat.block_index(master).ok_or(KktError::UnknownMaster(master))?;
                let mut extra: Vec<Vec<usize>> = vec![Vec::new(); flat.blocks.len()];
                for (k, r) in flat.link_rows.clone().enumerate() {
                    let lb = &flat.link_blocks[k];
                    if lb.len() != 2 || !lb.contains(&mb) {
                        return Err(KktError::NotTwoStage { row: r });
                    }
                    let child = if lb[0] == mb { lb[1] } else { lb[0] };
                    extra[child].push(n + r);
                }
                let mut blocks = Vec::new();
                for b in 0..flat.blocks.len() {
                    if b != mb {
                        let mut v = own(b);
                        v.extend_from_slice(&extra[b]);
                        blocks.push(v);
                    }
                }
                (blocks, own(mb))
            }
        };
        Self::from_partition(&kkt.matrix, blocks, core, kind)
    }

    /// Layout for an arbitrary symmetric pattern. Every off-diagonal entry
    /// must lie inside one block, inside the core, or between a block and the core.
    pub fn from_partition(
        pattern: &SparseSym,
        blocks: Vec<Vec<usize>>,
        core: Vec<usize>,
        kind: BackendKind,
    ) -> Result<Self, KktError> {
        let n = pattern.n;
        let mut owner = vec![(CORE, u32::MAX); n];
        for (b, idx) in blocks.iter().enumerate() {
            for (l, &g) in idx.iter().enumerate() {
                owner[g] = (b as u32, l as u32);
            }
        }
        for (l, &g) in core.iter().enumerate() {
            owner[g] = (CORE, l as u32);
        }
        assert!(owner.iter().all(|o| o.1 != u32::MAX), "partition must cover every index");
        let mut block_entries: Vec<Vec<(usize, usize)>> = vec![Vec::new(); blocks.len()];
        let mut coupling: Vec<Vec<(usize, usize)>> = vec![Vec::new(); blocks.len()];
        let mut dest = Vec::with_capacity(pattern.nnz());
        for (r, c, _) in pattern.iter() {
            let ((br, lr), (bc, lc)) = (owner[r], owner[c]);
            let d = if br == CORE && bc == CORE {
                Dest::Core(lr, lc)
            } else if br == bc {
                let e = &mut block_entries[br as usize];
                e.push((lr as usize, lc as usize));
                Dest::Block(br, e.len() as u32 - 1)
            } else if br == CORE {
                let e = &mut coupling[bc as usize];
                e.push((lc as usize, lr as usize));
                Dest::Couple(bc, e.len() as u32 - 1)
            } else if bc == CORE {
                let e = &mut coupling[br as usize];
                e.push((lr as usize, lc as usize));
                Dest::Couple(br, e.len() as u32 - 1)
            } else {
                return Err(KktError::CrossBlockEntry { row: r, col: c });
            };
            dest.push(d);
        }
        let mut block_patterns = Vec::with_capacity(blocks.len());
        let mut maps = Vec::with_capacity(blocks.len());
        for (b, entries) in block_entries.iter().enumerate() {
            let mut all = entries.clone();
            all.extend((0..blocks[b].len()).map(|i| (i, i)));
            let (p, map) = SparseSym::pattern(blocks[b].len(), &all);
            block_patterns.push(p);
            maps.push(map);
        }
        for d in dest.iter_mut() {
            if let Dest::Block(b, k) = d {
                *k = maps[*b as usize][*k as usize] as u32;
            }
        }
        let orderings = block_patterns.iter().map(SymbolicOrdering::new).collect();
        Ok(BlockLayout {
            kind,
            n,
            pattern: pattern.clone(),
            blocks: Arc::new(blocks),
            core: Arc::new(core),
            dest,
            block_patterns,
            orderings,
            coupling,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Size of the border (link rows for dual, master indices for tree).
    pub fn core_dim(&self) -> usize {
        self.core.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn core(&self) -> &[usize] {
        &self.core
    }

    /// Splits matrix values (on this layout's pattern) into blocks.
    pub fn extract(&self, m: &SparseSym) -> BlockKkt {
        assert!(m.same_pattern(&self.pattern), "matrix pattern differs from layout");
        let mut blocks = self.block_patterns.clone();
        let mut coupling: Vec<Vec<(usize, usize, f64)>> =
            self.coupling.iter().map(|c| c.iter().map(|&(r, j)| (r, j, 0.0)).collect()).collect();
        let nc = self.core.len();
        let mut core = DenseSym::zeros(nc);
        for (&d, &v) in self.dest.iter().zip(&m.values) {
            match d {
                Dest::Block(b, p) => blocks[b as usize].values[p as usize] += v,
                Dest::Couple(b, k) => coupling[b as usize][k as usize].2 += v,
                Dest::Core(i, j) => core.add_sym(i as usize, j as usize, v),
            }
        }
        BlockKkt { n: self.n, blocks, coupling, core, block_index: self.blocks.clone(), core_index: self.core.clone() }
    }
}

/// Block form of a bordered symmetric matrix.
#[derive(Clone, Debug)]
pub struct BlockKkt {
    n: usize,
    /// Diagonal blocks in local indices.
    pub blocks: Vec<SparseSym>,
    /// Per block: (local row, core index, value).
    pub coupling: Vec<Vec<(usize, usize, f64)>>,
    /// Core-core part.
    pub core: DenseSym,
    block_index: Arc<Vec<Vec<usize>>>,
    core_index: Arc<Vec<usize>>,
}

impl BlockKkt {
    /// Rebuilds the global matrix from the blocks.
    pub fn assemble(&self) -> SparseSym {
        let mut t = Vec::new();
        for (b, k) in self.blocks.iter().enumerate() {
            let idx = &self.block_index[b];
            t.extend(k.iter().map(|(r, c, v)| (idx[r], idx[c], v)));
            t.extend(self.coupling[b].iter().map(|&(r, j, v)| (idx[r], self.core_index[j], v)));
        }
        let c = &self.core_index;
        for i in 0..c.len() {
            for j in 0..=i {
                let v = self.core.get(i, j);
                if v != 0.0 || i == j {
                    t.push((c[i], c[j], v));
                }
            }
        }
        SparseSym::from_triplets(self.n, &t)
    }

    pub fn core_dim(&self) -> usize {
        self.core_index.len()
    }
}

struct BlockFactor {
    f: Factorization,
    /// Core indices this block couples to, ascending.
    border: Vec<usize>,
    /// (local row, border position, value).
    coupling: Vec<(usize, usize, f64)>,
    deferred_pos: Vec<usize>,
    offset: usize,
}

struct BlockContribution {
    factor: BlockFactor,
    /// `C_Fᵀ K_FF⁻¹ C_F` over the border, row-major.
    cc: Vec<f64>,
    /// Deferred rows after forward elimination of the border columns, row-major nd × nb.
    dc: Vec<f64>,
}

fn factor_block(
    k: &SparseSym,
    ord: &SymbolicOrdering,
    opts: &LdltOptions,
    coupling: &[(usize, usize, f64)],
) -> BlockContribution {
    let f = Factorization::partial(k, ord, opts);
    let dim = k.n;
    let mut border: Vec<usize> = coupling.iter().map(|e| e.1).collect();
    border.sort_unstable();
    border.dedup();
    let nb = border.len();
    let coupling: Vec<(usize, usize, f64)> =
        coupling.iter().map(|&(r, j, v)| (r, border.binary_search(&j).unwrap(), v)).collect();
    let deferred = f.deferred().to_vec();
    let nd = deferred.len();
    let mut deferred_pos = vec![usize::MAX; dim];
    for (q, &i) in deferred.iter().enumerate() {
        deferred_pos[i] = q;
    }
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
    for &(r, j, v) in &coupling {
        by_col[j].push((r, v));
    }
    let mut cc = vec![0.0; nb * nb];
    let mut dc = vec![0.0; nd * nb];
    for start in (0..nb).step_by(BATCH) {
        let w = BATCH.min(nb - start);
        let mut b = vec![0.0; dim * w];
        for jj in 0..w {
            for &(r, v) in &by_col[start + jj] {
                b[r * w + jj] += v;
            }
        }
        f.forward(&mut b, w);
        for (q, &i) in deferred.iter().enumerate() {
            for jj in 0..w {
                dc[q * nb + start + jj] = b[i * w + jj];
                b[i * w + jj] = 0.0;
            }
        }
        f.diag_solve(&mut b, w);
        f.backward(&mut b, w);
        for (i, col) in by_col.iter().enumerate() {
            for &(r, v) in col {
                if deferred_pos[r] == usize::MAX {
                    for jj in 0..w {
                        cc[i * nb + start + jj] += v * b[r * w + jj];
                    }
                }
            }
        }
    }
    BlockContribution { factor: BlockFactor { f, border, coupling, deferred_pos, offset: 0 }, cc, dc }
}

/// Factored bordered system.
pub struct ArrowFactor {
    blocks: Vec<BlockFactor>,
    core_dim: usize,
    schur: DenseSym,
    schur_factor: DenseLdlt,
    inertia: Inertia,
}

impl ArrowFactor {
    /// Factors all blocks (in parallel on the current rayon pool), forms the
    /// extended Schur matrix in block order, and factors it.
    pub fn new(layout: &BlockLayout, bk: &BlockKkt, opts: &LdltOptions) -> ArrowFactor {
        let nblk = bk.blocks.len();
        let contribs: Vec<BlockContribution> = (0..nblk)
            .into_par_iter()
            .map(|b| factor_block(&bk.blocks[b], &layout.orderings[b], opts, &bk.coupling[b]))
            .collect();
        let nc = bk.core.n;
        let total_d: usize = contribs.iter().map(|c| c.factor.f.deferred().len()).sum();
        let dim = nc + total_d;
        let mut s = DenseSym::zeros(dim);
        for i in 0..nc {
            for j in 0..nc {
                s.set(i, j, bk.core.get(i, j));
            }
        }
        let mut inertia = Inertia::default();
        let mut offset = nc;
        let mut blocks = Vec::with_capacity(nblk);
        for mut c in contribs {
            let bf = &mut c.factor;
            inertia = inertia + bf.f.inertia();
            let nb = bf.border.len();
            for i in 0..nb {
                for j in 0..nb {
                    let (gi, gj) = (bf.border[i], bf.border[j]);
                    s.set(gi, gj, s.get(gi, gj) - c.cc[i * nb + j]);
                }
            }
            let nd = bf.f.deferred().len();
            let rem = bf.f.remainder();
            for q in 0..nd {
                for j in 0..nb {
                    let v = c.dc[q * nb + j];
                    s.set(bf.border[j], offset + q, v);
                    s.set(offset + q, bf.border[j], v);
                }
                for q2 in 0..nd {
                    s.set(offset + q, offset + q2, rem[q * nd + q2]);
                }
            }
            bf.offset = offset;
            offset += nd;
            blocks.push(c.factor);
        }
        s.symmetrize();
        let schur_factor = DenseLdlt::factor_unchecked(&s, opts.zero_tol);
        inertia = inertia + schur_factor.inertia();
        ArrowFactor { blocks, core_dim: nc, schur: s, schur_factor, inertia }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Extended Schur matrix: border first, then deferred block rows.
    pub fn schur(&self) -> &DenseSym {
        &self.schur
    }

    pub fn num_deferred(&self) -> usize {
        self.schur.n - self.core_dim
    }

    /// Solves the bordered system for a global right-hand side.
    pub fn solve(&self, layout: &BlockLayout, rhs: &[f64]) -> Vec<f64> {
        let core = &layout.core;
        let stage1: Vec<(Vec<f64>, Vec<f64>)> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(b, bf)| {
                let idx = &layout.blocks[b];
                let mut z: Vec<f64> = idx.iter().map(|&g| rhs[g]).collect();
                bf.f.forward(&mut z, 1);
                let deferred = bf.f.deferred();
                let yd: Vec<f64> = deferred.iter().map(|&i| z[i]).collect();
                for &i in deferred {
                    z[i] = 0.0;
                }
                bf.f.diag_solve(&mut z, 1);
                bf.f.backward(&mut z, 1);
                let mut cz = vec![0.0; bf.border.len()];
                for &(r, j, v) in &bf.coupling {
                    if bf.deferred_pos[r] == usize::MAX {
                        cz[j] += v * z[r];
                    }
                }
                (yd, cz)
            })
            .collect();
        let mut s_rhs = vec![0.0; self.schur.n];
        for (i, &g) in core.iter().enumerate() {
            s_rhs[i] = rhs[g];
        }
        for (bf, (yd, cz)) in self.blocks.iter().zip(&stage1) {
            for (j, &c) in bf.border.iter().enumerate() {
                s_rhs[c] -= cz[j];
            }
            s_rhs[bf.offset..bf.offset + yd.len()].copy_from_slice(yd);
        }
        self.schur_factor.solve(&mut s_rhs);
        let d = &s_rhs;
        let parts: Vec<Vec<f64>> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(b, bf)| {
                let idx = &layout.blocks[b];
                let mut r: Vec<f64> = idx.iter().map(|&g| rhs[g]).collect();
                for &(row, j, v) in &bf.coupling {
                    r[row] -= v * d[bf.border[j]];
                }
                bf.f.forward(&mut r, 1);
                bf.f.diag_solve(&mut r, 1);
                for (q, &i) in bf.f.deferred().iter().enumerate() {
                    r[i] = d[bf.offset + q];
                }
                bf.f.backward(&mut r, 1);
                r
            })
            .collect();
        let mut x = vec![0.0; layout.n];
        for (b, part) in parts.into_iter().enumerate() {
            for (&g, v) in layout.blocks[b].iter().zip(part) {
                x[g] = v;
            }
        }
        for (i, &g) in core.iter().enumerate() {
            x[g] = d[i];
        }
        x
    }
}

/// Factors and solves a block system on a pool of `threads` workers.
/// Returns `StructurallySingular` when the system has zero eigenvalues.
pub fn schur_solve(layout: &BlockLayout, bk: &BlockKkt, rhs: &[f64], threads: usize) -> Result<Vec<f64>, KktError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool");
    pool.install(|| {
        let af = ArrowFactor::new(layout, bk, &LdltOptions::default());
        if af.inertia().zero > 0 {
            return Err(crate::linsolve::LinsolveError::StructurallySingular(af.inertia()).into());
        }
        Ok(af.solve(layout, rhs))
    })
}

/// Schur-complement backend over a [`BlockLayout`].
pub struct SchurSolver {
    layout: BlockLayout,
    pub opts: LdltOptions,
    state: Option<(ArrowFactor, SparseSym)>,
}

impl SchurSolver {
    pub fn new(layout: BlockLayout) -> Self {
        SchurSolver { layout, opts: LdltOptions::default(), state: None }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Number of deferred block rows in the last factorization.
    pub fn num_deferred(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.0.num_deferred())
    }
}

impl KktSolver for SchurSolver {
    fn factor(&mut self, kkt: &KktMatrix, delta_w: f64, delta_c: f64) -> Result<Inertia, KktError> {
        let m = kkt.regularized(delta_w, delta_c);
        let bk = self.layout.extract(&m);
        let af = ArrowFactor::new(&self.layout, &bk, &self.opts);
        let inertia = af.inertia();
        self.state = Some((af, m));
        Ok(inertia)
    }

    fn solve(&self, rhs: &[f64]) -> (Vec<f64>, f64) {
        let (af, m) = self.state.as_ref().expect("solve after factor");
        let solve = |b: &[f64]| af.solve(&self.layout, b);
        let mut x = solve(rhs);
        let res = refine(m, rhs, &mut x, 3, &solve);
        (x, res)
    }

    fn schur_dim(&self) -> usize {
        self.layout.core_dim()
    }

    fn kind(&self) -> BackendKind {
        self.layout.kind
    }

    fn dump(&self, dir: &Path, tag: &str) -> std::io::Result<()> {
        if let Some((af, m)) = &self.state {
            let mut w = BufWriter::new(File::create(dir.join(format!("kkt_{tag}.mtx")))?);
            write_sparse_sym(m, &mut w)?;
            let mut w = BufWriter::new(File::create(dir.join(format!("schur_{tag}.mtx")))?);
            write_dense_sym(af.schur(), &mut w)?;
        }
        Ok(())
    }
}
