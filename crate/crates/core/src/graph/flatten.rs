use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;

use super::{ConstraintKind, GraphError, OptiGraph};
use crate::ad::{split_terms, FunctionSet, Tape};
use crate::expr::{Expr, ExprError, NodeId, VariableRef};

/// Where a flat constraint row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowOrigin {
    /// Constraint `index` of a node.
    Node { node: NodeId, index: usize },
    /// Link `index` in `all_links` order.
    Link { index: usize },
}

/// Row `expr - rhs - x[slack] = 0`, with the slack term present only for
/// two-valued ranges.
#[derive(Clone, Debug)]
pub struct FlatConstraint {
    pub expr: Expr,
    pub rhs: f64,
    pub slack: Option<usize>,
    pub origin: RowOrigin,
}

/// Contiguous variables and internal rows owned by one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockRange {
    pub node: NodeId,
    pub label: String,
    pub vars: Range<usize>,
    pub rows: Range<usize>,
}

/// A graph flattened to `min Σ f(x) s.t. c(x) = 0, l <= x <= u`.
///
/// Variables are grouped per node in `all_nodes` order, each node's model
/// variables followed by its slacks. Rows are every node's internal rows in
/// the same order, then all link rows.
#[derive(Clone, Debug)]
pub struct FlatNlp {
    pub n_vars: usize,
    pub n_cons: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
    pub var_names: Vec<String>,
    /// Model variable behind each flat variable; `None` for slacks.
    pub var_refs: Vec<Option<VariableRef>>,
    pub objective: Vec<Expr>,
    pub constraints: Vec<FlatConstraint>,
    pub blocks: Vec<BlockRange>,
    pub link_rows: Range<usize>,
    /// Blocks touched by each link row (sorted).
    pub link_blocks: Vec<Vec<usize>>,
    pub block_of_var: Vec<usize>,
    offsets: HashMap<NodeId, (usize, usize)>,
    functions: Arc<FunctionSet>,
}

impl FlatNlp {
    pub fn functions(&self) -> &FunctionSet {
        &self.functions
    }

    /// Flat index of a model variable.
    pub fn index_of(&self, v: VariableRef) -> Option<usize> {
        let &(off, nv) = self.offsets.get(&v.node)?;
        ((v.local as usize) < nv).then(|| off + v.local as usize)
    }

    /// Flat indices of all model (non-slack) variables, in order.
    pub fn model_vars(&self) -> Vec<usize> {
        (0..self.n_vars).filter(|&i| self.var_refs[i].is_some()).collect()
    }

    pub fn block_index(&self, node: NodeId) -> Option<usize> {
        self.blocks.iter().position(|b| b.node == node)
    }

    pub fn num_link_rows(&self) -> usize {
        self.link_rows.len()
    }

    /// True when every link row is affine.
    pub fn links_affine(&self) -> Result<(), usize> {
        for r in self.link_rows.clone() {
            if !self.functions.constraint_tape(r).hessian_pattern().is_empty() {
                return Err(r);
            }
        }
        Ok(())
    }

    /// Value of model variable `v` in flat vector `x`.
    pub fn value(&self, x: &[f64], v: VariableRef) -> Option<f64> {
        self.index_of(v).map(|i| x[i])
    }
}

fn split_kind(kind: ConstraintKind) -> (f64, Option<(f64, f64)>) {
    match kind {
        ConstraintKind::Equality => (0.0, None),
        ConstraintKind::Range { lo, hi } if lo == hi => (lo, None),
        ConstraintKind::Range { lo, hi } => (0.0, Some((lo, hi))),
    }
}

/// Flattens the whole hierarchy.
pub fn flatten(graph: &OptiGraph) -> Result<FlatNlp, GraphError> {
    let nodes = graph.all_nodes();
    let links = graph.all_links();
    let pos: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id(), i)).collect();

    // Slack counts per block: node inequalities plus link inequalities owned
    // by the earliest support node.
    let mut link_owner = Vec::with_capacity(links.len());
    let mut extra = vec![0usize; nodes.len()];
    for l in &links {
        let owner = l.support.iter().map(|s| pos[s]).min().expect("link support");
        link_owner.push(owner);
        if split_kind(l.kind).1.is_some() {
            extra[owner] += 1;
        }
    }

    let mut offsets = HashMap::with_capacity(nodes.len());
    let mut slack_next = Vec::with_capacity(nodes.len());
    let mut blocks = Vec::with_capacity(nodes.len());
    let (mut lower, mut upper, mut x0) = (vec![], vec![], vec![]);
    let (mut var_names, mut var_refs, mut block_of_var) = (vec![], vec![], vec![]);
    let mut constraints = Vec::new();
    let mut slack_bounds: Vec<(usize, f64, f64)> = Vec::new();
    for (b, n) in nodes.iter().enumerate() {
        let start = lower.len();
        offsets.insert(n.id(), (start, n.variables.len()));
        for (k, v) in n.variables.iter().enumerate() {
            lower.push(v.lower);
            upper.push(v.upper);
            x0.push(v.init);
            var_names.push(format!("{}.{}", n.label, v.name));
            var_refs.push(Some(VariableRef::new(n.id(), k as u32)));
        }
        let n_slack = n.constraints.iter().filter(|c| split_kind(c.kind).1.is_some()).count() + extra[b];
        for s in 0..n_slack {
            lower.push(0.0);
            upper.push(0.0);
            x0.push(0.0);
            var_names.push(format!("{}.slack{s}", n.label));
            var_refs.push(None);
        }
        block_of_var.resize(lower.len(), b);
        slack_next.push(start + n.variables.len());
        let row_start = constraints.len();
        for (k, c) in n.constraints.iter().enumerate() {
            let (rhs, range) = split_kind(c.kind);
            let slack = range.map(|(lo, hi)| {
                let s = slack_next[b];
                slack_next[b] += 1;
                slack_bounds.push((s, lo, hi));
                s
            });
            constraints.push(FlatConstraint {
                expr: c.expr.clone(),
                rhs,
                slack,
                origin: RowOrigin::Node { node: n.id(), index: k },
            });
        }
        blocks.push(BlockRange {
            node: n.id(),
            label: n.label.clone(),
            vars: start..lower.len(),
            rows: row_start..constraints.len(),
        });
    }
    let link_start = constraints.len();
    let mut link_blocks = Vec::with_capacity(links.len());
    for (k, l) in links.iter().enumerate() {
        let (rhs, range) = split_kind(l.kind);
        let owner = link_owner[k];
        let slack = range.map(|(lo, hi)| {
            let s = slack_next[owner];
            slack_next[owner] += 1;
            slack_bounds.push((s, lo, hi));
            s
        });
        let mut bl: Vec<usize> = l.support.iter().map(|s| pos[s]).collect();
        bl.sort_unstable();
        link_blocks.push(bl);
        constraints.push(FlatConstraint { expr: l.expr.clone(), rhs, slack, origin: RowOrigin::Link { index: k } });
    }
    let link_rows = link_start..constraints.len();
    let n_vars = lower.len();

    let bind = |v: VariableRef| -> Option<usize> {
        if v.node == NodeId::FREE {
            return ((v.local as usize) < n_vars).then_some(v.local as usize);
        }
        let &(off, nv) = offsets.get(&v.node)?;
        ((v.local as usize) < nv).then(|| off + v.local as usize)
    };

    let row_exprs: Vec<Expr> = constraints
        .iter()
        .map(|c| {
            let mut e = c.expr.clone();
            if c.rhs != 0.0 {
                e = e - c.rhs;
            }
            if let Some(s) = c.slack {
                e = e - Expr::x(s);
            }
            e
        })
        .collect();
    let con_tapes: Vec<Tape> = row_exprs.par_iter().map(|e| Tape::compile(e, bind)).collect::<Result<_, _>>()?;
    let mut terms = Vec::new();
    let mut objective = Vec::new();
    for n in &nodes {
        if !n.objective.is_zero() {
            objective.push(n.objective.clone());
            split_terms(&n.objective, &mut terms);
        }
    }
    let obj_tapes: Vec<Tape> = terms.par_iter().map(|e| Tape::compile(e, bind)).collect::<Result<_, _>>()?;

    // Slack bounds and a start inside them, from the constraint body at x0.
    let value = |v: VariableRef| bind(v).map(|i| x0[i]);
    let mut slack_init = Vec::with_capacity(slack_bounds.len());
    for c in &constraints {
        if let Some(s) = c.slack {
            let g = match c.expr.evaluate_with(&value) {
                Ok(g) => g,
                Err(ExprError::Domain(_)) => 0.0,
                Err(e) => return Err(e.into()),
            };
            slack_init.push((s, g));
        }
    }
    for &(s, lo, hi) in &slack_bounds {
        lower[s] = lo;
        upper[s] = hi;
    }
    for (s, g) in slack_init {
        x0[s] = g.max(lower[s]).min(upper[s]);
    }

    let functions = FunctionSet::from_tapes(n_vars, obj_tapes, con_tapes);
    Ok(FlatNlp {
        n_vars,
        n_cons: constraints.len(),
        lower,
        upper,
        x0,
        var_names,
        var_refs,
        objective,
        constraints,
        blocks,
        link_rows,
        link_blocks,
        block_of_var,
        offsets,
        functions: Arc::new(functions),
    })
}
