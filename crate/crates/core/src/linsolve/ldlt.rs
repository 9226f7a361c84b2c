//! Sparse symmetric-indefinite LDLᵀ with Bunch–Kaufman 1×1/2×2 pivoting.
//!
//! Right-looking elimination on a dynamic symmetric structure. A fill-reducing
//! ordering gives the preferred pivot sequence; the Bunch–Kaufman test may
//! substitute a neighbour or take a 2×2 block. L is stored column by column in
//! original indices, so solves need no permutation vectors.
//!
//! Rows that are numerically zero when reached can either be counted as zero
//! eigenvalues (plain factorization) or deferred: they stay in the active
//! matrix, keep receiving updates, and come back as a dense remainder (the
//! Schur complement of the factored part onto them).

use super::amd::amd_order;
use super::{inertia_2x2, Inertia, LinsolveError, SparseSym};

#[derive(Clone, Copy, Debug)]
pub struct LdltOptions {
    /// Bunch–Kaufman threshold α.
    pub pivot_tol: f64,
    /// A row whose largest remaining entry is below `zero_tol` times its
    /// original largest entry is treated as zero.
    pub zero_tol: f64,
}

impl Default for LdltOptions {
    fn default() -> Self {
        LdltOptions { pivot_tol: 0.01, zero_tol: 1e-13 }
    }
}

/// Fill-reducing pivot preference for one sparsity pattern.
#[derive(Clone, Debug)]
pub struct SymbolicOrdering {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    order: Vec<usize>,
}

impl SymbolicOrdering {
    pub fn new(m: &SparseSym) -> Self {
        SymbolicOrdering {
            n: m.n,
            col_ptr: m.col_ptr.clone(),
            row_idx: m.row_idx.clone(),
            order: amd_order(&m.adjacency()),
        }
    }

    pub fn natural(m: &SparseSym) -> Self {
        SymbolicOrdering { n: m.n, col_ptr: m.col_ptr.clone(), row_idx: m.row_idx.clone(), order: (0..m.n).collect() }
    }

    /// True when `m` has the pattern this ordering was computed for.
    pub fn matches(&self, m: &SparseSym) -> bool {
        self.n == m.n && self.col_ptr == m.col_ptr && self.row_idx == m.row_idx
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pivot {
    One(usize),
    Two(usize, usize),
}

#[derive(Clone, Debug)]
struct Step {
    pivot: Pivot,
    /// Inverse of the pivot block `[[a, b], [b, c]]` stored as (a, b, c); 1×1 uses `a`.
    inv: [f64; 3],
    start: usize,
    end: usize,
}

#[derive(Clone, Debug)]
pub struct Factorization {
    n: usize,
    steps: Vec<Step>,
    ent_idx: Vec<usize>,
    ent_l0: Vec<f64>,
    ent_l1: Vec<f64>,
    inertia: Inertia,
    deferred: Vec<usize>,
    remainder: Vec<f64>,
}

struct Active {
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
    alive: Vec<bool>,
    deferred: Vec<bool>,
}

impl Active {
    /// Largest |a_jk| over pivotable neighbours j of k.
    fn col_max(&self, k: usize) -> (f64, Option<usize>) {
        let mut best = (0.0, None);
        for &(j, v) in &self.rows[k] {
            if !self.deferred[j] && v.abs() > best.0 {
                best = (v.abs(), Some(j));
            }
        }
        best
    }

    /// Largest |a_ij| over pivotable j other than `skip`.
    fn col_max_except(&self, i: usize, skip: usize) -> f64 {
        self.rows[i].iter().filter(|&&(j, _)| j != skip && !self.deferred[j]).fold(0.0, |m, &(_, v)| m.max(v.abs()))
    }

    /// Partner for a 2×2 pivot with `k` that keeps fill low: among eligible neighbours
    /// whose coupling is within a factor 10 of the column maximum, the one
    /// with the shortest row, accepted if the block passes the threshold test
    /// `|P⁻¹| [λ_k, λ_r]ᵀ ≤ 1/α`.
    fn sparse_partner(&self, k: usize, lambda: f64, alpha: f64, eligible: impl Fn(usize) -> bool) -> Option<usize> {
        let mut best: Option<(usize, usize, f64)> = None;
        for &(j, v) in &self.rows[k] {
            if self.deferred[j] || v.abs() < 0.1 * lambda || !eligible(j) {
                continue;
            }
            let len = self.rows[j].len();
            if best.is_none_or(|(_, l, bv)| len < l || (len == l && v.abs() > bv)) {
                best = Some((j, len, v.abs()));
            }
        }
        let (r, _, _) = best?;
        let (a, b, c) = (self.diag[k], self.entry(k, r), self.diag[r]);
        let det = a * c - b * b;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let (i00, i01, i11) = ((c / det).abs(), (b / det).abs(), (a / det).abs());
        let (lk, lr) = (self.col_max_except(k, r), self.col_max_except(r, k));
        let bound = 1.0 / alpha;
        (i00 * lk + i01 * lr <= bound && i01 * lk + i11 * lr <= bound).then_some(r)
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(p) => self.rows[i][p].1,
            Err(_) => 0.0,
        }
    }
}

/// Factors `m` using the pivot preference in `ordering`.
///
/// Zero pivots are counted in the inertia and reported as
/// `StructurallySingular`. Use [`Factorization::partial`] to defer them instead.
pub fn ldlt_factor(
    m: &SparseSym,
    ordering: &SymbolicOrdering,
    opts: &LdltOptions,
) -> Result<Factorization, LinsolveError> {
    let f = factor_impl(m, ordering, opts, false);
    if f.inertia.zero > 0 {
        Err(LinsolveError::StructurallySingular(f.inertia))
    } else {
        Ok(f)
    }
}

fn factor_impl(m: &SparseSym, ordering: &SymbolicOrdering, opts: &LdltOptions, defer: bool) -> Factorization {
    let n = m.n;
    assert!(ordering.n == n, "ordering dimension mismatch");
    let mut act =
        Active { rows: vec![Vec::new(); n], diag: vec![0.0; n], alive: vec![true; n], deferred: vec![false; n] };
    for (r, c, v) in m.iter() {
        if r == c {
            act.diag[r] += v;
        } else {
            act.rows[r].push((c, v));
            act.rows[c].push((r, v));
        }
    }
    for row in &mut act.rows {
        row.sort_unstable_by_key(|e| e.0);
        // Merge duplicates that may come from mirrored input.
        row.dedup_by(|a, b| {
            if a.0 == b.0 {
                b.1 += a.1;
                true
            } else {
                false
            }
        });
    }
    let scale = m.row_max_abs();

    let mut f = Factorization {
        n,
        steps: Vec::with_capacity(n),
        ent_idx: Vec::new(),
        ent_l0: Vec::new(),
        ent_l1: Vec::new(),
        inertia: Inertia::default(),
        deferred: Vec::new(),
        remainder: Vec::new(),
    };

    let mut bufs = Buffers::default();
    let mut delayed = vec![false; n];
    let mut retry: Vec<usize> = Vec::new();
    for &k in ordering.order() {
        pivot_at(&mut act, &mut f, k, true, opts, &scale, defer, &mut bufs, &mut delayed, &mut retry);
        while let Some(j) = retry.pop() {
            pivot_at(&mut act, &mut f, j, true, opts, &scale, defer, &mut bufs, &mut delayed, &mut retry);
        }
    }
    for &k in ordering.order() {
        if delayed[k] {
            delayed[k] = false;
            pivot_at(&mut act, &mut f, k, false, opts, &scale, defer, &mut bufs, &mut delayed, &mut retry);
            retry.clear();
        }
    }

    if defer {
        let d: Vec<usize> = (0..n).filter(|&i| act.deferred[i]).collect();
        let nd = d.len();
        let mut rem = vec![0.0; nd * nd];
        let mut pos = vec![usize::MAX; n];
        for (p, &i) in d.iter().enumerate() {
            pos[i] = p;
        }
        for (p, &i) in d.iter().enumerate() {
            rem[p * nd + p] = act.diag[i];
            for &(j, v) in &act.rows[i] {
                debug_assert!(act.deferred[j]);
                rem[p * nd + pos[j]] = v;
            }
        }
        f.deferred = d;
        f.remainder = rem;
    }
    f
}

#[derive(Default)]
struct Buffers {
    nbrs: Vec<(usize, f64, f64)>,
    upd: Vec<(usize, f64)>,
    merged: Vec<(usize, f64)>,
}

/// Eliminates row `k` (possibly through a partner). With `may_delay`, a row
/// that fails the 1×1 test pairs with an already delayed neighbour if the
/// 2×2 block is stable, and is otherwise set aside until one of its
/// neighbours is eliminated. Both keep the elimination close to the
/// preferred order.
#[allow(clippy::too_many_arguments)]
fn pivot_at(
    act: &mut Active,
    f: &mut Factorization,
    k: usize,
    may_delay: bool,
    opts: &LdltOptions,
    scale: &[f64],
    defer: bool,
    bufs: &mut Buffers,
    delayed: &mut [bool],
    retry: &mut Vec<usize>,
) {
    let alpha = opts.pivot_tol;
    while act.alive[k] && !act.deferred[k] {
        let akk = act.diag[k];
        let (lambda, r) = act.col_max(k);
        let tol = opts.zero_tol * scale[k];
        if akk.abs().max(lambda) <= tol {
            if defer {
                act.deferred[k] = true;
            } else {
                f.inertia.zero += 1;
                f.steps.push(Step {
                    pivot: Pivot::One(k),
                    inv: [0.0; 3],
                    start: f.ent_idx.len(),
                    end: f.ent_idx.len(),
                });
                for (j, _) in std::mem::take(&mut act.rows[k]) {
                    if let Ok(p) = act.rows[j].binary_search_by_key(&k, |e| e.0) {
                        act.rows[j].remove(p);
                    }
                }
                act.alive[k] = false;
            }
            return;
        }
        let pivot = if akk.abs() >= alpha * lambda {
            Pivot::One(k)
        } else if let Some(r) = act.sparse_partner(k, lambda, alpha, |j| !may_delay || delayed[j]) {
            delayed[r] = false;
            Pivot::Two(k, r)
        } else if may_delay {
            delayed[k] = true;
            return;
        } else {
            let r = r.expect("lambda > 0 implies a neighbour");
            let (sigma, _) = act.col_max(r);
            if akk.abs() * sigma >= alpha * lambda * lambda {
                Pivot::One(k)
            } else if act.diag[r].abs() >= alpha * sigma {
                Pivot::One(r)
            } else {
                Pivot::Two(k, r)
            }
        };
        eliminate(act, f, pivot, &mut bufs.nbrs, &mut bufs.upd, &mut bufs.merged);
        for &(j, _, _) in &bufs.nbrs {
            if delayed[j] {
                delayed[j] = false;
                retry.push(j);
            }
        }
    }
}

fn eliminate(
    act: &mut Active,
    f: &mut Factorization,
    pivot: Pivot,
    nbrs: &mut Vec<(usize, f64, f64)>,
    upd: &mut Vec<(usize, f64)>,
    merged: &mut Vec<(usize, f64)>,
) {
    let (k, r) = match pivot {
        Pivot::One(k) => (k, usize::MAX),
        Pivot::Two(k, r) => (k, r),
    };
    // Neighbours of the pivot set with their coupling coefficients.
    nbrs.clear();
    {
        let rk = &act.rows[k];
        let empty = Vec::new();
        let rr = if r == usize::MAX { &empty } else { &act.rows[r] };
        let (mut a, mut b) = (0, 0);
        while a < rk.len() || b < rr.len() {
            let ia = rk.get(a).map_or(usize::MAX, |e| e.0);
            let ib = rr.get(b).map_or(usize::MAX, |e| e.0);
            let j = ia.min(ib);
            let mut vk = 0.0;
            let mut vr = 0.0;
            if ia == j {
                vk = rk[a].1;
                a += 1;
            }
            if ib == j {
                vr = rr[b].1;
                b += 1;
            }
            if j != k && j != r {
                nbrs.push((j, vk, vr));
            }
        }
    }
    let start = f.ent_idx.len();
    let inv;
    match pivot {
        Pivot::One(_) => {
            let d = act.diag[k];
            inv = [1.0 / d, 0.0, 0.0];
            f.inertia = f.inertia + if d > 0.0 { Inertia::new(1, 0, 0) } else { Inertia::new(0, 1, 0) };
            for &(j, vk, _) in nbrs.iter() {
                f.ent_idx.push(j);
                f.ent_l0.push(vk * inv[0]);
                f.ent_l1.push(0.0);
            }
        }
        Pivot::Two(_, _) => {
            let (a, b, c) = (act.diag[k], act.entry(k, r), act.diag[r]);
            let det = a * c - b * b;
            inv = [c / det, -b / det, a / det];
            f.inertia = f.inertia + inertia_2x2(a, b, c);
            for &(j, vk, vr) in nbrs.iter() {
                f.ent_idx.push(j);
                f.ent_l0.push(vk * inv[0] + vr * inv[1]);
                f.ent_l1.push(vk * inv[1] + vr * inv[2]);
            }
        }
    }
    let end = f.ent_idx.len();
    f.steps.push(Step { pivot, inv, start, end });

    let l0 = &f.ent_l0[start..end];
    let l1 = &f.ent_l1[start..end];
    for (p, &(j, vk, vr)) in nbrs.iter().enumerate() {
        act.diag[j] -= vk * l0[p] + vr * l1[p];
        upd.clear();
        for (q, &(i, _, _)) in nbrs.iter().enumerate() {
            if i != j {
                upd.push((i, -(vk * l0[q] + vr * l1[q])));
            }
        }
        let old = std::mem::take(&mut act.rows[j]);
        merged.clear();
        merged.reserve(old.len() + upd.len());
        let (mut a, mut b) = (0, 0);
        while a < old.len() || b < upd.len() {
            let ia = old.get(a).map_or(usize::MAX, |e| e.0);
            let ib = upd.get(b).map_or(usize::MAX, |e| e.0);
            if ia < ib {
                if ia != k && ia != r {
                    merged.push(old[a]);
                }
                a += 1;
            } else if ib < ia {
                merged.push(upd[b]);
                b += 1;
            } else {
                merged.push((ia, old[a].1 + upd[b].1));
                a += 1;
                b += 1;
            }
        }
        let mut row = old;
        row.clear();
        row.extend_from_slice(merged);
        act.rows[j] = row;
    }
    act.rows[k] = Vec::new();
    act.alive[k] = false;
    if r != usize::MAX {
        act.rows[r] = Vec::new();
        act.alive[r] = false;
    }
}

impl Factorization {
    /// Factors `m`, deferring numerically zero rows instead of failing.
    pub fn partial(m: &SparseSym, ordering: &SymbolicOrdering, opts: &LdltOptions) -> Factorization {
        factor_impl(m, ordering, opts, true)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Inertia of the factored part (zero pivots included for plain factorizations).
    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Pivot sequence: original indices in elimination order.
    pub fn permutation(&self) -> Vec<usize> {
        let mut p = Vec::with_capacity(self.n);
        for s in &self.steps {
            match s.pivot {
                Pivot::One(k) => p.push(k),
                Pivot::Two(k, r) => {
                    p.push(k);
                    p.push(r);
                }
            }
        }
        p.extend_from_slice(&self.deferred);
        p
    }

    pub fn pivots(&self) -> impl Iterator<Item = Pivot> + '_ {
        self.steps.iter().map(|s| s.pivot)
    }

    /// Number of stored off-diagonal entries of L.
    pub fn nnz_l(&self) -> usize {
        self.ent_idx.len()
    }

    /// Indices left unfactored by [`Factorization::partial`], ascending.
    pub fn deferred(&self) -> &[usize] {
        &self.deferred
    }

    /// Dense row-major Schur complement of the factored part onto the deferred indices.
    pub fn remainder(&self) -> &[f64] {
        &self.remainder
    }

    /// Applies L⁻¹ to a row-major `n × nrhs` block (entry (i, c) at `i * nrhs + c`).
    pub fn forward(&self, b: &mut [f64], nrhs: usize) {
        for s in &self.steps {
            match s.pivot {
                Pivot::One(k) => {
                    for e in s.start..s.end {
                        let j = self.ent_idx[e];
                        let l = self.ent_l0[e];
                        if l == 0.0 {
                            continue;
                        }
                        for c in 0..nrhs {
                            b[j * nrhs + c] -= l * b[k * nrhs + c];
                        }
                    }
                }
                Pivot::Two(k, r) => {
                    for e in s.start..s.end {
                        let j = self.ent_idx[e];
                        let (l0, l1) = (self.ent_l0[e], self.ent_l1[e]);
                        for c in 0..nrhs {
                            b[j * nrhs + c] -= l0 * b[k * nrhs + c] + l1 * b[r * nrhs + c];
                        }
                    }
                }
            }
        }
    }

    /// Applies D⁻¹ on the factored indices.
    pub fn diag_solve(&self, b: &mut [f64], nrhs: usize) {
        for s in &self.steps {
            match s.pivot {
                Pivot::One(k) => {
                    for c in 0..nrhs {
                        b[k * nrhs + c] *= s.inv[0];
                    }
                }
                Pivot::Two(k, r) => {
                    for c in 0..nrhs {
                        let (x, y) = (b[k * nrhs + c], b[r * nrhs + c]);
                        b[k * nrhs + c] = s.inv[0] * x + s.inv[1] * y;
                        b[r * nrhs + c] = s.inv[1] * x + s.inv[2] * y;
                    }
                }
            }
        }
    }

    /// Applies L⁻ᵀ; deferred entries of `b` are read as already-known values.
    pub fn backward(&self, b: &mut [f64], nrhs: usize) {
        for s in self.steps.iter().rev() {
            match s.pivot {
                Pivot::One(k) => {
                    for e in s.start..s.end {
                        let j = self.ent_idx[e];
                        let l = self.ent_l0[e];
                        if l == 0.0 {
                            continue;
                        }
                        for c in 0..nrhs {
                            b[k * nrhs + c] -= l * b[j * nrhs + c];
                        }
                    }
                }
                Pivot::Two(k, r) => {
                    for e in s.start..s.end {
                        let j = self.ent_idx[e];
                        let (l0, l1) = (self.ent_l0[e], self.ent_l1[e]);
                        for c in 0..nrhs {
                            let bj = b[j * nrhs + c];
                            b[k * nrhs + c] -= l0 * bj;
                            b[r * nrhs + c] -= l1 * bj;
                        }
                    }
                }
            }
        }
    }

    /// Solves in place for a single right-hand side.
    pub fn solve(&self, b: &mut [f64]) {
        self.solve_multi(b, 1);
    }

    /// Solves in place for a row-major `n × nrhs` block.
    pub fn solve_multi(&self, b: &mut [f64], nrhs: usize) {
        assert!(self.deferred.is_empty(), "solve requires a complete factorization");
        assert_eq!(b.len(), self.n * nrhs, "right-hand side dimension");
        self.forward(b, nrhs);
        self.diag_solve(b, nrhs);
        self.backward(b, nrhs);
    }

    /// Solves `m x = b` with up to `max_refine` steps of iterative refinement.
    /// Returns the final residual infinity norm.
    pub fn solve_refined(&self, m: &SparseSym, b: &[f64], x: &mut [f64], max_refine: usize, rtol: f64) -> f64 {
        x.copy_from_slice(b);
        self.solve(x);
        let mut r = vec![0.0; self.n];
        let bnorm = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut res = f64::INFINITY;
        for it in 0..=max_refine {
            m.matvec(x, &mut r);
            for i in 0..self.n {
                r[i] = b[i] - r[i];
            }
            res = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if res <= rtol * bnorm.max(f64::MIN_POSITIVE) || it == max_refine {
                break;
            }
            self.solve(&mut r);
            for i in 0..self.n {
                x[i] += r[i];
            }
        }
        res
    }
}
