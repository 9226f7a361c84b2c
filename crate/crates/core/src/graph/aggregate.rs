use std::collections::HashMap;

use super::{fresh_node_id, Constraint, LinkConstraint, OptiGraph, OptiNode};
use crate::expr::{Expr, NodeId, VariableRef};

/// Collapses every top-level subgraph into a single node. Variables keep
/// their order and are renamed `<node label>.<name>`; links inside a
/// subgraph become constraints of the new node. Top-level nodes and links
/// are kept, except links that end up touching one node, which move onto it.
/// A graph without subgraphs comes back unchanged.
pub fn aggregate(graph: &OptiGraph) -> OptiGraph {
    let mut out = OptiGraph::new(graph.label.clone());
    let mut remap: HashMap<NodeId, (NodeId, u32)> = HashMap::new();
    for n in graph.nodes() {
        out.push_node(n.clone());
    }
    for sub in graph.subgraphs() {
        let id = fresh_node_id();
        let mut node = OptiNode::with_id(id, sub.label.clone());
        let members = sub.all_nodes();
        for m in &members {
            remap.insert(m.id(), (id, node.variables.len() as u32));
            for v in &m.variables {
                let mut v = v.clone();
                v.name = format!("{}.{}", m.label, v.name);
                node.variables.push(v);
            }
        }
        let map = |v: VariableRef| match remap.get(&v.node) {
            Some(&(n, off)) => VariableRef::new(n, off + v.local),
            None => v,
        };
        let mut objective = Vec::new();
        for m in &members {
            for c in &m.constraints {
                node.constraints.push(Constraint { expr: c.expr.map_vars(&map), kind: c.kind });
            }
            if !m.objective.is_zero() {
                objective.push(m.objective.map_vars(&map));
            }
        }
        for l in sub.all_links() {
            node.constraints.push(Constraint { expr: l.expr.map_vars(&map), kind: l.kind });
        }
        node.objective = if objective.is_empty() { Expr::constant(0.0) } else { Expr::sum(objective) };
        out.push_node(node);
    }
    let map = |v: VariableRef| match remap.get(&v.node) {
        Some(&(n, off)) => VariableRef::new(n, off + v.local),
        None => v,
    };
    for l in graph.links() {
        let mut support: Vec<NodeId> = l.support.iter().map(|s| remap.get(s).map_or(*s, |r| r.0)).collect();
        support.sort_unstable();
        support.dedup();
        let expr = if remap.is_empty() { l.expr.clone() } else { l.expr.map_vars(&map) };
        if support.len() == 1 {
            let node = out.node_mut(support[0]).expect("aggregated node exists");
            node.constraints.push(Constraint { expr, kind: l.kind });
        } else {
            out.push_link_unchecked(LinkConstraint { expr, kind: l.kind, support });
        }
    }
    out
}

/// Collapses the whole graph into one node.
pub fn aggregate_all(graph: &OptiGraph) -> OptiGraph {
    let mut wrapper = OptiGraph::new(graph.label.clone());
    wrapper.add_subgraph(graph.clone());
    aggregate(&wrapper)
}
