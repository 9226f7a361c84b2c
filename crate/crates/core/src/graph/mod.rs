//! Hierarchical graph models.
//!
//! An [`OptiGraph`] holds nodes, link constraints between nodes, and nested
//! subgraphs. Node ids come from a process-wide counter, so graphs built
//! independently can be nested without clashes.

mod aggregate;
mod export;
mod flatten;
mod partition;

pub use aggregate::{aggregate, aggregate_all};
pub use export::{adjacency_csv, adjacency_export, to_dot, Adjacency};
pub use flatten::{flatten, BlockRange, FlatConstraint, FlatNlp, RowOrigin};
pub use partition::{heuristic_partition, partition, Partition};

use std::collections::HashSet;
use std::sync::atomic::{AtomicU32, Ordering};

use thiserror::Error;

use crate::expr::{Expr, ExprError, NodeId, VariableRef};

static NEXT_NODE_ID: AtomicU32 = AtomicU32::new(1);

pub(crate) fn fresh_node_id() -> NodeId {
    NodeId(NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("expression on node {node} references variable {var} of another node")]
    CrossNodeExpression { node: NodeId, var: VariableRef },
    #[error("link constraint touches a single node ({0}); add it to the node instead")]
    SingleNodeLink(NodeId),
    #[error("link constraint references free variable {0}")]
    FreeVariableInLink(VariableRef),
    #[error("node {0} is not reachable from this graph")]
    UnreachableNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("variable {name:?} has lower bound {lower} above upper bound {upper}")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("variable {var} out of range for node {node}")]
    UnknownVariable { node: NodeId, var: VariableRef },
    #[error("membership vector has length {got}, graph has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("part {0} has no nodes")]
    EmptyPart(usize),
    #[error("cannot split {nodes} nodes into {parts} parts")]
    InvalidPartCount { parts: usize, nodes: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub init: f64,
}

/// `Equality` means `expr == 0`; `Range` means `lo <= expr <= hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConstraintKind {
    Equality,
    Range { lo: f64, hi: f64 },
}

impl ConstraintKind {
    pub fn le(hi: f64) -> Self {
        ConstraintKind::Range { lo: f64::NEG_INFINITY, hi }
    }

    pub fn ge(lo: f64) -> Self {
        ConstraintKind::Range { lo, hi: f64::INFINITY }
    }

    pub fn is_equality(&self) -> bool {
        matches!(self, ConstraintKind::Equality)
    }
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub expr: Expr,
    pub kind: ConstraintKind,
}

#[derive(Clone, Debug)]
pub struct OptiNode {
    id: NodeId,
    pub label: String,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Expr,
}

impl OptiNode {
    pub(crate) fn with_id(id: NodeId, label: impl Into<String>) -> Self {
        OptiNode { id, label: label.into(), variables: vec![], constraints: vec![], objective: Expr::constant(0.0) }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn var(&self, local: usize) -> VariableRef {
        assert!(local < self.variables.len(), "variable {local} out of range on {}", self.label);
        VariableRef::new(self.id, local as u32)
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        init: f64,
    ) -> Result<VariableRef, GraphError> {
        let name = name.into();
        if !(lower <= upper) {
            return Err(GraphError::InvalidBounds { name, lower, upper });
        }
        self.variables.push(Variable { name, lower, upper, init });
        Ok(VariableRef::new(self.id, self.variables.len() as u32 - 1))
    }

    fn check_local(&self, expr: &Expr) -> Result<(), GraphError> {
        for v in expr.variables() {
            if v.node != self.id {
                return Err(GraphError::CrossNodeExpression { node: self.id, var: v });
            }
            if v.local as usize >= self.variables.len() {
                return Err(GraphError::UnknownVariable { node: self.id, var: v });
            }
        }
        Ok(())
    }

    pub fn add_constraint(&mut self, expr: Expr, kind: ConstraintKind) -> Result<(), GraphError> {
        self.check_local(&expr)?;
        self.constraints.push(Constraint { expr, kind });
        Ok(())
    }

    pub fn set_objective(&mut self, expr: Expr) -> Result<(), GraphError> {
        self.check_local(&expr)?;
        self.objective = expr;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LinkConstraint {
    pub expr: Expr,
    pub kind: ConstraintKind,
    /// Sorted ids of the nodes referenced by `expr`.
    pub support: Vec<NodeId>,
}

#[derive(Clone, Debug, Default)]
pub struct OptiGraph {
    pub label: String,
    nodes: Vec<OptiNode>,
    links: Vec<LinkConstraint>,
    subgraphs: Vec<OptiGraph>,
    reach: HashSet<NodeId>,
}

impl OptiGraph {
    pub fn new(label: impl Into<String>) -> Self {
        OptiGraph { label: label.into(), ..Default::default() }
    }

    pub fn add_node(&mut self, label: impl Into<String>) -> NodeId {
        let id = fresh_node_id();
        self.push_node(OptiNode::with_id(id, label));
        id
    }

    pub(crate) fn push_node(&mut self, node: OptiNode) {
        self.reach.insert(node.id);
        self.nodes.push(node);
    }

    pub fn add_subgraph(&mut self, g: OptiGraph) -> usize {
        self.reach.extend(g.all_nodes().iter().map(|n| n.id));
        self.subgraphs.push(g);
        self.subgraphs.len() - 1
    }

    pub fn nodes(&self) -> &[OptiNode] {
        &self.nodes
    }

    pub fn links(&self) -> &[LinkConstraint] {
        &self.links
    }

    pub fn subgraphs(&self) -> &[OptiGraph] {
        &self.subgraphs
    }

    pub fn subgraph_mut(&mut self, i: usize) -> &mut OptiGraph {
        &mut self.subgraphs[i]
    }

    pub fn node(&self, id: NodeId) -> Option<&OptiNode> {
        if let Some(n) = self.nodes.iter().find(|n| n.id == id) {
            return Some(n);
        }
        self.subgraphs.iter().find_map(|g| g.node(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut OptiNode> {
        if let Some(p) = self.nodes.iter().position(|n| n.id == id) {
            return Some(&mut self.nodes[p]);
        }
        self.subgraphs.iter_mut().find_map(|g| g.node_mut(id))
    }

    fn node_mut_or_err(&mut self, id: NodeId) -> Result<&mut OptiNode, GraphError> {
        self.node_mut(id).ok_or(GraphError::UnknownNode(id))
    }

    pub fn add_variable(
        &mut self,
        node: NodeId,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        init: f64,
    ) -> Result<VariableRef, GraphError> {
        self.node_mut_or_err(node)?.add_variable(name, lower, upper, init)
    }

    pub fn add_constraint(&mut self, node: NodeId, expr: Expr, kind: ConstraintKind) -> Result<(), GraphError> {
        self.node_mut_or_err(node)?.add_constraint(expr, kind)
    }

    pub fn set_objective(&mut self, node: NodeId, expr: Expr) -> Result<(), GraphError> {
        self.node_mut_or_err(node)?.set_objective(expr)
    }

    /// Adds a link constraint at this level. Every referenced node must be
    /// reachable from here, and at least two distinct nodes must appear.
    pub fn link_constraint(&mut self, expr: Expr, kind: ConstraintKind) -> Result<&LinkConstraint, GraphError> {
        let vars = expr.variables();
        let mut support: Vec<NodeId> = Vec::new();
        for v in &vars {
            if v.node == NodeId::FREE {
                return Err(GraphError::FreeVariableInLink(*v));
            }
            if support.last() != Some(&v.node) {
                support.push(v.node);
            }
        }
        if support.len() < 2 {
            return Err(match support.first() {
                Some(&n) => GraphError::SingleNodeLink(n),
                None => GraphError::SingleNodeLink(NodeId::FREE),
            });
        }
        for &n in &support {
            if !self.reach.contains(&n) {
                self.reach = self.all_nodes().iter().map(|n| n.id).collect();
                if !self.reach.contains(&n) {
                    return Err(GraphError::UnreachableNode(n));
                }
            }
        }
        for v in &vars {
            let node = self.node(v.node).ok_or(GraphError::UnknownNode(v.node))?;
            if v.local as usize >= node.variables.len() {
                return Err(GraphError::UnknownVariable { node: v.node, var: *v });
            }
        }
        self.links.push(LinkConstraint { expr, kind, support });
        Ok(self.links.last().unwrap())
    }

    /// Own nodes, then each subgraph's nodes depth-first in insertion order.
    pub fn all_nodes(&self) -> Vec<&OptiNode> {
        let mut out = Vec::new();
        self.collect_nodes(&mut out);
        out
    }

    fn collect_nodes<'a>(&'a self, out: &mut Vec<&'a OptiNode>) {
        out.extend(self.nodes.iter());
        for g in &self.subgraphs {
            g.collect_nodes(out);
        }
    }

    /// Own links, then each subgraph's links depth-first.
    pub fn all_links(&self) -> Vec<&LinkConstraint> {
        let mut out = Vec::new();
        self.collect_links(&mut out);
        out
    }

    fn collect_links<'a>(&'a self, out: &mut Vec<&'a LinkConstraint>) {
        out.extend(self.links.iter());
        for g in &self.subgraphs {
            g.collect_links(out);
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len() + self.subgraphs.iter().map(OptiGraph::num_nodes).sum::<usize>()
    }

    pub fn num_variables(&self) -> usize {
        self.nodes.iter().map(|n| n.variables.len()).sum::<usize>()
            + self.subgraphs.iter().map(OptiGraph::num_variables).sum::<usize>()
    }

    pub fn num_constraints(&self) -> usize {
        self.nodes.iter().map(|n| n.constraints.len()).sum::<usize>()
            + self.subgraphs.iter().map(OptiGraph::num_constraints).sum::<usize>()
    }

    pub fn num_links(&self) -> usize {
        self.links.len() + self.subgraphs.iter().map(OptiGraph::num_links).sum::<usize>()
    }

    /// Checks that every link at every level references only nodes reachable
    /// from its level. Returns the first offending node.
    pub fn check_link_reachability(&self) -> Result<(), GraphError> {
        let reach: HashSet<NodeId> = self.all_nodes().iter().map(|n| n.id).collect();
        for l in &self.links {
            for n in &l.support {
                if !reach.contains(n) {
                    return Err(GraphError::UnreachableNode(*n));
                }
            }
        }
        self.subgraphs.iter().try_for_each(OptiGraph::check_link_reachability)
    }

    /// Total objective at a point given per-variable values.
    pub fn objective_value(&self, value: &dyn Fn(VariableRef) -> Option<f64>) -> Result<f64, GraphError> {
        let mut f = 0.0;
        for n in self.all_nodes() {
            f += n.objective.evaluate_with(value)?;
        }
        Ok(f)
    }

    /// Decomposes into parts; used by the restructuring operations.
    pub(crate) fn into_parts(self) -> (String, Vec<OptiNode>, Vec<LinkConstraint>, Vec<OptiGraph>) {
        (self.label, self.nodes, self.links, self.subgraphs)
    }

    pub(crate) fn push_link_unchecked(&mut self, link: LinkConstraint) {
        self.links.push(link);
    }
}
