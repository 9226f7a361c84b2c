//! Tape compilation and exact derivatives.
//!
//! An expression is compiled to a postfix [`Tape`] whose variable leaves are
//! bound to indices of a flat vector. Gradients use one reverse sweep; Hessians
//! use forward-over-reverse (one tangent sweep per nonlinearly-appearing
//! variable). Sparsity patterns are structural and fixed at compile time.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::expr::{ops, Expr, ExprError, ExprKind, VariableRef, SMOOTH_ABS_EPS};

#[derive(Clone, Copy, Debug)]
enum Instr {
    Const(f64),
    Var(u32),
    Sum { start: u32, len: u32 },
    Mul(u32, u32),
    Sub(u32, u32),
    Div(u32, u32),
    PowI(u32, i32),
    PowF(u32, f64),
    Exp(u32),
    Log(u32),
    Sabs(u32),
}

/// A compiled expression.
#[derive(Clone, Debug)]
pub struct Tape {
    instrs: Vec<Instr>,
    sum_args: Vec<u32>,
    /// Flat index of each local variable slot, ascending.
    vars: Vec<usize>,
    /// Lower-triangle Hessian pattern over local slots, `(i, j)` with `i >= j`.
    hess: Vec<(u32, u32)>,
    /// Slots seeded by the forward-over-reverse sweep.
    hess_slots: Vec<u32>,
}

/// Scratch space for tape sweeps. One per thread.
#[derive(Default, Debug)]
pub struct Workspace {
    val: Vec<f64>,
    bar: Vec<f64>,
    dot: Vec<f64>,
    bardot: Vec<f64>,
    // First and second partials of each instruction w.r.t. its (at most two) arguments.
    d0: Vec<f64>,
    d1: Vec<f64>,
    d00: Vec<f64>,
    d01: Vec<f64>,
    d11: Vec<f64>,
    col: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn fit(&mut self, n: usize, nv: usize) {
        for v in [
            &mut self.val,
            &mut self.bar,
            &mut self.dot,
            &mut self.bardot,
            &mut self.d0,
            &mut self.d1,
            &mut self.d00,
            &mut self.d01,
            &mut self.d11,
        ] {
            if v.len() < n {
                v.resize(n, 0.0);
            }
        }
        if self.col.len() < nv {
            self.col.resize(nv, 0.0);
        }
    }
}

impl Tape {
    /// Compiles `expr`, binding each variable through `index`.
    pub fn compile(expr: &Expr, index: impl Fn(VariableRef) -> Option<usize>) -> Result<Tape, ExprError> {
        let mut slot_of_var: HashMap<usize, u32> = HashMap::new();
        let mut refs = Vec::new();
        for v in expr.variables() {
            let g = index(v).ok_or(ExprError::Unbound(v))?;
            refs.push((g, v));
        }
        let mut globals: Vec<usize> = refs.iter().map(|r| r.0).collect();
        globals.sort_unstable();
        globals.dedup();
        for (s, g) in globals.iter().enumerate() {
            slot_of_var.insert(*g, s as u32);
        }
        let slot_of_ref: HashMap<VariableRef, u32> = refs.iter().map(|(g, v)| (*v, slot_of_var[g])).collect();

        let mut instrs = Vec::new();
        let mut sum_args = Vec::new();
        let mut pos: HashMap<*const ExprKind, u32> = HashMap::new();
        let mut var_pos: HashMap<u32, u32> = HashMap::new();
        expr.visit_postorder(&mut |e| {
            let p = |c: &Expr| pos[&c.ptr()];
            let ins = match e.kind() {
                ExprKind::Constant(c) => Instr::Const(*c),
                ExprKind::Variable(v) => {
                    let s = slot_of_ref[v];
                    if let Some(&at) = var_pos.get(&s) {
                        pos.insert(e.ptr(), at);
                        return;
                    }
                    var_pos.insert(s, instrs.len() as u32);
                    Instr::Var(s)
                }
                ExprKind::Sum(c) => {
                    let start = sum_args.len() as u32;
                    sum_args.extend(c.iter().map(p));
                    Instr::Sum { start, len: c.len() as u32 }
                }
                ExprKind::Product(a, b) => Instr::Mul(p(a), p(b)),
                ExprKind::Difference(a, b) => Instr::Sub(p(a), p(b)),
                ExprKind::Quotient(a, b) => Instr::Div(p(a), p(b)),
                ExprKind::PowInt(a, k) => Instr::PowI(p(a), *k),
                ExprKind::PowReal(a, k) => Instr::PowF(p(a), *k),
                ExprKind::Exp(a) => Instr::Exp(p(a)),
                ExprKind::Log(a) => Instr::Log(p(a)),
                ExprKind::SmoothAbs(a) => Instr::Sabs(p(a)),
            };
            pos.insert(e.ptr(), instrs.len() as u32);
            instrs.push(ins);
        });
        // The root may be a deduplicated variable leaf; make it the last instruction.
        let root = pos[&expr.ptr()];
        if root as usize != instrs.len() - 1 {
            instrs.push(Instr::Sum { start: sum_args.len() as u32, len: 1 });
            sum_args.push(root);
        }

        let mut tape = Tape { instrs, sum_args, vars: globals, hess: vec![], hess_slots: vec![] };
        tape.analyze_hessian();
        Ok(tape)
    }

    /// Structural second-order sparsity: each nonlinear instruction couples the
    /// variable sets of its arguments.
    fn analyze_hessian(&mut self) {
        let mut deps: Vec<BTreeSet<u32>> = Vec::with_capacity(self.instrs.len());
        let mut pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
        let cross = |a: &BTreeSet<u32>, b: &BTreeSet<u32>, pairs: &mut BTreeSet<(u32, u32)>| {
            for &i in a {
                for &j in b {
                    pairs.insert((i.max(j), i.min(j)));
                }
            }
        };
        for ins in &self.instrs {
            let d: BTreeSet<u32> = match *ins {
                Instr::Const(_) => BTreeSet::new(),
                Instr::Var(s) => [s].into_iter().collect(),
                Instr::Sum { start, len } => {
                    let mut u = BTreeSet::new();
                    for &a in &self.sum_args[start as usize..(start + len) as usize] {
                        u.extend(deps[a as usize].iter().copied());
                    }
                    u
                }
                Instr::Sub(a, b) => deps[a as usize].union(&deps[b as usize]).copied().collect(),
                Instr::Mul(a, b) => {
                    cross(&deps[a as usize], &deps[b as usize], &mut pairs);
                    deps[a as usize].union(&deps[b as usize]).copied().collect()
                }
                Instr::Div(a, b) => {
                    cross(&deps[a as usize], &deps[b as usize], &mut pairs);
                    cross(&deps[b as usize], &deps[b as usize], &mut pairs);
                    deps[a as usize].union(&deps[b as usize]).copied().collect()
                }
                Instr::PowI(a, k) => {
                    if k != 0 && k != 1 {
                        cross(&deps[a as usize], &deps[a as usize], &mut pairs);
                    }
                    if k == 0 {
                        BTreeSet::new()
                    } else {
                        deps[a as usize].clone()
                    }
                }
                Instr::PowF(a, k) => {
                    if k != 1.0 {
                        cross(&deps[a as usize], &deps[a as usize], &mut pairs);
                    }
                    deps[a as usize].clone()
                }
                Instr::Exp(a) | Instr::Log(a) | Instr::Sabs(a) => {
                    cross(&deps[a as usize], &deps[a as usize], &mut pairs);
                    deps[a as usize].clone()
                }
            };
            deps.push(d);
        }
        let slots: BTreeSet<u32> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
        self.hess = pairs.into_iter().collect();
        self.hess_slots = slots.into_iter().collect();
    }

    /// Flat indices of the variables, ascending. Gradient outputs follow this order.
    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    /// Lower-triangle Hessian pattern in flat indices, `(row, col)` with `row >= col`.
    pub fn hessian_pattern(&self) -> Vec<(usize, usize)> {
        self.hess.iter().map(|&(i, j)| (self.vars[i as usize], self.vars[j as usize])).collect()
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    fn forward(&self, x: &[f64], ws: &mut Workspace) -> Result<f64, ExprError> {
        ws.fit(self.instrs.len(), self.vars.len());
        let val = &mut ws.val;
        for (i, ins) in self.instrs.iter().enumerate() {
            let v = match *ins {
                Instr::Const(c) => c,
                Instr::Var(s) => x[self.vars[s as usize]],
                Instr::Sum { start, len } => {
                    self.sum_args[start as usize..(start + len) as usize].iter().map(|&a| val[a as usize]).sum()
                }
                Instr::Mul(a, b) => val[a as usize] * val[b as usize],
                Instr::Sub(a, b) => val[a as usize] - val[b as usize],
                Instr::Div(a, b) => ops::div(val[a as usize], val[b as usize])?,
                Instr::PowI(a, k) => ops::powi(val[a as usize], k)?,
                Instr::PowF(a, k) => ops::powf(val[a as usize], k)?,
                Instr::Exp(a) => val[a as usize].exp(),
                Instr::Log(a) => ops::log(val[a as usize])?,
                Instr::Sabs(a) => ops::sabs(val[a as usize]),
            };
            val[i] = v;
        }
        Ok(val[self.instrs.len() - 1])
    }

    pub fn eval(&self, x: &[f64], ws: &mut Workspace) -> Result<f64, ExprError> {
        self.forward(x, ws)
    }

    /// Fills first (and optionally second) partials of every instruction.
    fn partials(&self, ws: &mut Workspace, second: bool) {
        let Workspace { val, d0, d1, d00, d01, d11, .. } = ws;
        for (i, ins) in self.instrs.iter().enumerate() {
            let (mut p0, mut p1, mut p00, mut p01, mut p11) = (0.0, 0.0, 0.0, 0.0, 0.0);
            match *ins {
                Instr::Const(_) | Instr::Var(_) | Instr::Sum { .. } => {}
                Instr::Mul(a, b) => {
                    p0 = val[b as usize];
                    p1 = val[a as usize];
                    p01 = 1.0;
                }
                Instr::Sub(_, _) => {
                    p0 = 1.0;
                    p1 = -1.0;
                }
                Instr::Div(a, b) => {
                    let (u, w) = (val[a as usize], val[b as usize]);
                    p0 = 1.0 / w;
                    p1 = -u / (w * w);
                    p01 = -1.0 / (w * w);
                    p11 = 2.0 * u / (w * w * w);
                }
                Instr::PowI(a, k) => {
                    let u = val[a as usize];
                    let k = k as f64;
                    if k != 0.0 {
                        p0 = k * u.powi(k as i32 - 1);
                        if second {
                            p00 = k * (k - 1.0) * u.powi(k as i32 - 2);
                        }
                    }
                }
                Instr::PowF(a, k) => {
                    let u = val[a as usize];
                    p0 = k * val[i] / u;
                    p00 = k * (k - 1.0) * val[i] / (u * u);
                }
                Instr::Exp(_) => {
                    p0 = val[i];
                    p00 = val[i];
                }
                Instr::Log(a) => {
                    let u = val[a as usize];
                    p0 = 1.0 / u;
                    p00 = -1.0 / (u * u);
                }
                Instr::Sabs(a) => {
                    let u = val[a as usize];
                    let s = val[i];
                    p0 = u / s;
                    p00 = SMOOTH_ABS_EPS / (s * s * s);
                }
            }
            d0[i] = p0;
            d1[i] = p1;
            d00[i] = p00;
            d01[i] = p01;
            d11[i] = p11;
        }
    }

    fn reverse(&self, ws: &mut Workspace) {
        let n = self.instrs.len();
        let Workspace { bar, d0, d1, .. } = ws;
        bar[..n].fill(0.0);
        bar[n - 1] = 1.0;
        for i in (0..n).rev() {
            let g = bar[i];
            if g == 0.0 {
                continue;
            }
            match self.instrs[i] {
                Instr::Const(_) | Instr::Var(_) => {}
                Instr::Sum { start, len } => {
                    for &a in &self.sum_args[start as usize..(start + len) as usize] {
                        bar[a as usize] += g;
                    }
                }
                Instr::Mul(a, b) | Instr::Sub(a, b) | Instr::Div(a, b) => {
                    bar[a as usize] += d0[i] * g;
                    bar[b as usize] += d1[i] * g;
                }
                Instr::PowI(a, _) | Instr::PowF(a, _) | Instr::Exp(a) | Instr::Log(a) | Instr::Sabs(a) => {
                    bar[a as usize] += d0[i] * g;
                }
            }
        }
    }

    /// Value and gradient; `grad[k]` is the partial w.r.t. `vars()[k]`.
    pub fn gradient(&self, x: &[f64], ws: &mut Workspace, grad: &mut [f64]) -> Result<f64, ExprError> {
        let f = self.forward(x, ws)?;
        self.partials(ws, false);
        self.reverse(ws);
        grad[..self.vars.len()].fill(0.0);
        for (i, ins) in self.instrs.iter().enumerate() {
            if let Instr::Var(s) = *ins {
                grad[s as usize] = ws.bar[i];
            }
        }
        Ok(f)
    }

    /// Adds `weight` times the Hessian entries (ordered as `hessian_pattern()`) to `out`.
    pub fn hessian_add(&self, x: &[f64], weight: f64, ws: &mut Workspace, out: &mut [f64]) -> Result<(), ExprError> {
        if self.hess.is_empty() {
            return Ok(());
        }
        self.forward(x, ws)?;
        self.partials(ws, true);
        self.reverse(ws);
        let n = self.instrs.len();
        let mut var_instr = vec![0usize; self.vars.len()];
        for (i, ins) in self.instrs.iter().enumerate() {
            if let Instr::Var(s) = *ins {
                var_instr[s as usize] = i;
            }
        }
        for &j in &self.hess_slots {
            let Workspace { bar, dot, bardot, d0, d1, d00, d01, d11, col, .. } = &mut *ws;
            for (i, ins) in self.instrs.iter().enumerate() {
                dot[i] = match *ins {
                    Instr::Const(_) => 0.0,
                    Instr::Var(s) => (s == j) as u8 as f64,
                    Instr::Sum { start, len } => {
                        self.sum_args[start as usize..(start + len) as usize].iter().map(|&a| dot[a as usize]).sum()
                    }
                    Instr::Mul(a, b) | Instr::Sub(a, b) | Instr::Div(a, b) => {
                        d0[i] * dot[a as usize] + d1[i] * dot[b as usize]
                    }
                    Instr::PowI(a, _) | Instr::PowF(a, _) | Instr::Exp(a) | Instr::Log(a) | Instr::Sabs(a) => {
                        d0[i] * dot[a as usize]
                    }
                };
            }
            bardot[..n].fill(0.0);
            for i in (0..n).rev() {
                let (g, gd) = (bar[i], bardot[i]);
                match self.instrs[i] {
                    Instr::Const(_) | Instr::Var(_) => {}
                    Instr::Sum { start, len } => {
                        if gd != 0.0 {
                            for &a in &self.sum_args[start as usize..(start + len) as usize] {
                                bardot[a as usize] += gd;
                            }
                        }
                    }
                    Instr::Mul(a, b) | Instr::Sub(a, b) | Instr::Div(a, b) => {
                        let (ta, tb) = (dot[a as usize], dot[b as usize]);
                        bardot[a as usize] += d0[i] * gd + (d00[i] * ta + d01[i] * tb) * g;
                        bardot[b as usize] += d1[i] * gd + (d01[i] * ta + d11[i] * tb) * g;
                    }
                    Instr::PowI(a, _) | Instr::PowF(a, _) | Instr::Exp(a) | Instr::Log(a) | Instr::Sabs(a) => {
                        bardot[a as usize] += d0[i] * gd + d00[i] * dot[a as usize] * g;
                    }
                }
            }
            for (s, &vi) in var_instr.iter().enumerate() {
                col[s] = bardot[vi];
            }
            for (p, &(r, c)) in self.hess.iter().enumerate() {
                if c == j {
                    out[p] += weight * col[r as usize];
                }
            }
        }
        Ok(())
    }
}

/// Coordinate-format sparse matrix; duplicates are summed on assembly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseTriplet {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseTriplet {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SparseTriplet { nrows, ncols, ..Default::default() }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        self.rows.push(r);
        self.cols.push(c);
        self.values.push(v);
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for k in 0..self.nnz() {
            d[self.rows[k]][self.cols[k]] += self.values[k];
        }
        d
    }
}

/// Objective terms and constraints compiled against one flat variable vector,
/// with fixed Jacobian and Lagrangian-Hessian patterns.
#[derive(Clone, Debug)]
pub struct FunctionSet {
    n: usize,
    objective: Vec<Tape>,
    constraints: Vec<Tape>,
    jac_offsets: Vec<usize>,
    jac_rows: Vec<usize>,
    jac_cols: Vec<usize>,
    hess_rows: Vec<usize>,
    hess_cols: Vec<usize>,
    // Tapes in order objective..., constraints...; offset into hess_map per tape.
    hess_offsets: Vec<usize>,
    hess_map: Vec<usize>,
}

/// Splits top-level sums so that each term gets its own small tape.
pub(crate) fn split_terms(e: &Expr, out: &mut Vec<Expr>) {
    match e.kind() {
        ExprKind::Sum(c) => {
            for t in c {
                split_terms(t, out);
            }
        }
        ExprKind::Constant(c) if *c == 0.0 => {}
        _ => out.push(e.clone()),
    }
}

fn chunk_len(items: usize) -> usize {
    let t = rayon::current_num_threads();
    if t <= 1 {
        items.max(1)
    } else {
        (items / (4 * t)).max(64)
    }
}

impl FunctionSet {
    /// Compiles objective and constraints with free variables (`Expr::x(i)`) over `n` entries.
    pub fn new_free(n: usize, objective: &[Expr], constraints: &[Expr]) -> Result<Self, ExprError> {
        let bind = |v: VariableRef| {
            if v.node == crate::expr::NodeId::FREE && (v.local as usize) < n {
                Some(v.local as usize)
            } else {
                None
            }
        };
        let obj: Vec<Tape> = {
            let mut terms = Vec::new();
            for o in objective {
                split_terms(o, &mut terms);
            }
            terms.iter().map(|t| Tape::compile(t, bind)).collect::<Result<_, _>>()?
        };
        let cons = constraints.iter().map(|c| Tape::compile(c, bind)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_tapes(n, obj, cons))
    }

    pub fn from_tapes(n: usize, objective: Vec<Tape>, constraints: Vec<Tape>) -> Self {
        let mut jac_offsets = vec![0];
        let (mut jac_rows, mut jac_cols) = (vec![], vec![]);
        for (r, t) in constraints.iter().enumerate() {
            for &c in t.vars() {
                jac_rows.push(r);
                jac_cols.push(c);
            }
            jac_offsets.push(jac_rows.len());
        }
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut pattern: Vec<(usize, usize)> = Vec::new();
        let mut per_tape: Vec<Vec<(usize, usize)>> = Vec::new();
        for t in objective.iter().chain(constraints.iter()) {
            let p = t.hessian_pattern();
            for &e in &p {
                index.entry(e).or_insert_with(|| {
                    pattern.push(e);
                    0
                });
            }
            per_tape.push(p);
        }
        pattern.sort_unstable_by_key(|&(r, c)| (c, r));
        for (k, e) in pattern.iter().enumerate() {
            index.insert(*e, k);
        }
        let mut hess_offsets = vec![0];
        let mut hess_map = vec![];
        for p in &per_tape {
            hess_map.extend(p.iter().map(|e| index[e]));
            hess_offsets.push(hess_map.len());
        }
        FunctionSet {
            n,
            objective,
            constraints,
            jac_offsets,
            jac_rows,
            jac_cols,
            hess_rows: pattern.iter().map(|e| e.0).collect(),
            hess_cols: pattern.iter().map(|e| e.1).collect(),
            hess_offsets,
            hess_map,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn n_cons(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraint_tape(&self, i: usize) -> &Tape {
        &self.constraints[i]
    }

    pub fn objective_tapes(&self) -> &[Tape] {
        &self.objective
    }

    /// Jacobian pattern `(row, col)`; values from [`Self::jacobian_values`] follow it.
    pub fn jacobian_structure(&self) -> (&[usize], &[usize]) {
        (&self.jac_rows, &self.jac_cols)
    }

    /// Row range of constraint `i` within the Jacobian value vector.
    pub fn jacobian_row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.jac_offsets[i]..self.jac_offsets[i + 1]
    }

    /// Lower-triangle Hessian pattern `(row, col)` sorted column-major.
    pub fn hessian_structure(&self) -> (&[usize], &[usize]) {
        (&self.hess_rows, &self.hess_cols)
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64, ExprError> {
        let vals = par_map(&self.objective, |t, ws| t.eval(x, ws))?;
        Ok(vals.iter().sum())
    }

    pub fn objective_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ExprError> {
        let parts = par_map(&self.objective, |t, ws| {
            let mut g = vec![0.0; t.vars().len()];
            t.gradient(x, ws, &mut g).map(|f| (f, g))
        })?;
        grad[..self.n].fill(0.0);
        let mut f = 0.0;
        for (t, (fv, g)) in self.objective.iter().zip(parts) {
            f += fv;
            for (k, &c) in t.vars().iter().enumerate() {
                grad[c] += g[k];
            }
        }
        Ok(f)
    }

    pub fn constraints(&self, x: &[f64], c: &mut [f64]) -> Result<(), ExprError> {
        let vals = par_map(&self.constraints, |t, ws| t.eval(x, ws))?;
        c[..vals.len()].copy_from_slice(&vals);
        Ok(())
    }

    /// Constraint values and Jacobian values in one pass.
    pub fn constraints_and_jacobian(&self, x: &[f64], c: &mut [f64], jac: &mut [f64]) -> Result<(), ExprError> {
        let parts = par_map(&self.constraints, |t, ws| {
            let mut g = vec![0.0; t.vars().len()];
            t.gradient(x, ws, &mut g).map(|f| (f, g))
        })?;
        for (i, (f, g)) in parts.into_iter().enumerate() {
            c[i] = f;
            jac[self.jac_offsets[i]..self.jac_offsets[i + 1]].copy_from_slice(&g);
        }
        Ok(())
    }

    pub fn jacobian_values(&self, x: &[f64], jac: &mut [f64]) -> Result<(), ExprError> {
        let mut c = vec![0.0; self.constraints.len()];
        self.constraints_and_jacobian(x, &mut c, jac)
    }

    /// Values of `obj_weight * ∇²f + Σ λ_i ∇²c_i` on the fixed pattern.
    pub fn hessian_values(&self, x: &[f64], obj_weight: f64, lambda: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let tapes: Vec<(usize, &Tape, f64)> = self
            .objective
            .iter()
            .map(|t| (t, obj_weight))
            .chain(self.constraints.iter().zip(lambda.iter().copied()))
            .enumerate()
            .filter(|(_, (t, w))| *w != 0.0 && !t.hess.is_empty())
            .map(|(k, (t, w))| (k, t, w))
            .collect();
        let parts = par_map(&tapes, |&(_, t, w), ws| {
            let mut h = vec![0.0; t.hess.len()];
            t.hessian_add(x, w, ws, &mut h).map(|_| h)
        })?;
        out[..self.hess_rows.len()].fill(0.0);
        for ((k, _, _), h) in tapes.iter().zip(parts) {
            let map = &self.hess_map[self.hess_offsets[*k]..self.hess_offsets[*k + 1]];
            for (p, v) in map.iter().zip(h) {
                out[*p] += v;
            }
        }
        Ok(())
    }
}

/// Maps `f` over `items` in parallel chunks (sequentially on a one-thread pool),
/// returning results in input order.
fn par_map<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T, &mut Workspace) -> Result<R, ExprError> + Sync,
) -> Result<Vec<R>, ExprError> {
    if rayon::current_num_threads() <= 1 || items.len() < 128 {
        let mut ws = Workspace::new();
        return items.iter().map(|t| f(t, &mut ws)).collect();
    }
    let chunks: Vec<Result<Vec<R>, ExprError>> = items
        .par_chunks(chunk_len(items.len()))
        .map(|ch| {
            let mut ws = Workspace::new();
            ch.iter().map(|t| f(t, &mut ws)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(items.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Value of a free-variable expression at `x`.
pub fn evaluate(expr: &Expr, x: &[f64]) -> Result<f64, ExprError> {
    expr.evaluate(x)
}

/// Sparse gradient as `(index, value)` pairs for the variables that appear in `expr`.
pub fn gradient(expr: &Expr, x: &[f64]) -> Result<Vec<(usize, f64)>, ExprError> {
    let tape = Tape::compile(expr, free_binding(x.len()))?;
    let mut ws = Workspace::new();
    let mut g = vec![0.0; tape.vars().len()];
    tape.gradient(x, &mut ws, &mut g)?;
    Ok(tape.vars().iter().copied().zip(g).collect())
}

/// Jacobian of free-variable constraints at `x`.
pub fn jacobian(constraints: &[Expr], x: &[f64]) -> Result<SparseTriplet, ExprError> {
    let fs = FunctionSet::new_free(x.len(), &[], constraints)?;
    let (r, c) = fs.jacobian_structure();
    let mut vals = vec![0.0; r.len()];
    fs.jacobian_values(x, &mut vals)?;
    Ok(SparseTriplet { nrows: constraints.len(), ncols: x.len(), rows: r.to_vec(), cols: c.to_vec(), values: vals })
}

/// Lower triangle of `obj_weight * ∇²f + Σ λ_i ∇²c_i` at `x`.
pub fn lagrangian_hessian(
    objective: &Expr,
    constraints: &[Expr],
    x: &[f64],
    obj_weight: f64,
    lambda: &[f64],
) -> Result<SparseTriplet, ExprError> {
    assert_eq!(lambda.len(), constraints.len(), "one multiplier per constraint");
    let fs = FunctionSet::new_free(x.len(), std::slice::from_ref(objective), constraints)?;
    let (r, c) = fs.hessian_structure();
    let mut vals = vec![0.0; r.len()];
    fs.hessian_values(x, obj_weight, lambda, &mut vals)?;
    Ok(SparseTriplet { nrows: x.len(), ncols: x.len(), rows: r.to_vec(), cols: c.to_vec(), values: vals })
}

fn free_binding(n: usize) -> impl Fn(VariableRef) -> Option<usize> {
    move |v| {
        if v.node == crate::expr::NodeId::FREE && (v.local as usize) < n {
            Some(v.local as usize)
        } else {
            None
        }
    }
}
