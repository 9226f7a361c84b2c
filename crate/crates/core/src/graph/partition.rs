use std::collections::{HashMap, VecDeque};

use super::{GraphError, LinkConstraint, OptiGraph, OptiNode};
use crate::expr::NodeId;

/// Part index per node, indexed in `all_nodes` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub membership: Vec<usize>,
    pub num_parts: usize,
}

impl Partition {
    pub fn new(membership: Vec<usize>) -> Self {
        let num_parts = membership.iter().map(|&p| p + 1).max().unwrap_or(0);
        Partition { membership, num_parts }
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_parts];
        for &p in &self.membership {
            s[p] += 1;
        }
        s
    }
}

/// Rebuilds `graph` as one subgraph per part. Links whose nodes all land in a
/// single part move into that part; the rest stay at the top level.
pub fn partition(graph: OptiGraph, part: &Partition) -> Result<OptiGraph, GraphError> {
    let n = graph.num_nodes();
    if part.membership.len() != n {
        return Err(GraphError::LengthMismatch { expected: n, got: part.membership.len() });
    }
    let sizes = part.part_sizes();
    if let Some(p) = sizes.iter().position(|&s| s == 0) {
        return Err(GraphError::EmptyPart(p));
    }
    let label = graph.label.clone();
    let mut nodes = Vec::with_capacity(n);
    let mut links = Vec::new();
    drain(graph, &mut nodes, &mut links);

    let where_: HashMap<NodeId, usize> = nodes.iter().zip(&part.membership).map(|(nd, &p)| (nd.id(), p)).collect();
    let mut out = OptiGraph::new(label.clone());
    let mut parts: Vec<OptiGraph> = (0..part.num_parts).map(|p| OptiGraph::new(format!("{label}.part{p}"))).collect();
    for (nd, &p) in nodes.into_iter().zip(&part.membership) {
        parts[p].push_node(nd);
    }
    let mut cross = Vec::new();
    for l in links {
        let p0 = where_[&l.support[0]];
        if l.support.iter().all(|s| where_[s] == p0) {
            parts[p0].push_link_unchecked(l);
        } else {
            cross.push(l);
        }
    }
    for g in parts {
        out.add_subgraph(g);
    }
    for l in cross {
        out.push_link_unchecked(l);
    }
    Ok(out)
}

fn drain(g: OptiGraph, nodes: &mut Vec<OptiNode>, links: &mut Vec<LinkConstraint>) {
    let (_, ns, ls, subs) = g.into_parts();
    nodes.extend(ns);
    links.extend(ls);
    for s in subs {
        drain(s, nodes, links);
    }
}

/// Node adjacency through shared links, indexed in `all_nodes` order.
pub(crate) fn node_adjacency(graph: &OptiGraph) -> Vec<Vec<usize>> {
    let nodes = graph.all_nodes();
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id(), i)).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for l in graph.all_links() {
        for (a, na) in l.support.iter().enumerate() {
            for nb in &l.support[a + 1..] {
                let (i, j) = (index[na], index[nb]);
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Greedy breadth-first growth into `parts` parts of near-equal size
/// (sizes differ by at most one). Deterministic.
pub fn heuristic_partition(graph: &OptiGraph, parts: usize) -> Result<Partition, GraphError> {
    let adj = node_adjacency(graph);
    let n = adj.len();
    if parts == 0 || parts > n {
        return Err(GraphError::InvalidPartCount { parts, nodes: n });
    }
    let mut membership = vec![usize::MAX; n];
    let mut next_seed = 0;
    for p in 0..parts {
        let target = n / parts + usize::from(p < n % parts);
        let mut count = 0;
        let mut queue = VecDeque::new();
        while count < target {
            let v = match queue.pop_front() {
                Some(v) => v,
                None => {
                    while membership[next_seed] != usize::MAX {
                        next_seed += 1;
                    }
                    next_seed
                }
            };
            if membership[v] != usize::MAX {
                continue;
            }
            membership[v] = p;
            count += 1;
            for &u in &adj[v] {
                if membership[u] == usize::MAX {
                    queue.push_back(u);
                }
            }
        }
    }
    Ok(Partition { membership, num_parts: parts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::graph::ConstraintKind;

    fn path(n: usize) -> OptiGraph {
        let mut g = OptiGraph::new("p");
        let ids: Vec<NodeId> = (0..n).map(|i| g.add_node(format!("n{i}"))).collect();
        let v: Vec<_> = ids.iter().map(|&i| g.add_variable(i, "x", 0.0, 1.0, 0.0).unwrap()).collect();
        for i in 0..n - 1 {
            g.link_constraint(Expr::var(v[i]) - Expr::var(v[i + 1]), ConstraintKind::Equality).unwrap();
        }
        g
    }

    #[test]
    fn path_bisection_cuts_one_link() {
        let g = path(10);
        let p = heuristic_partition(&g, 2).unwrap();
        assert_eq!(p.part_sizes(), vec![5, 5]);
        let pg = partition(g, &p).unwrap();
        assert_eq!(pg.links().len(), 1);
        assert_eq!(pg.subgraphs().len(), 2);
        assert_eq!(pg.num_links(), 9);
    }

    #[test]
    fn rejects_bad_membership() {
        let g = path(4);
        assert!(matches!(partition(g.clone(), &Partition::new(vec![0, 1, 0])), Err(GraphError::LengthMismatch { .. })));
        assert!(matches!(partition(g, &Partition::new(vec![0, 2, 0, 2])), Err(GraphError::EmptyPart(1))));
    }

    #[test]
    fn sizes_balanced_on_disconnected_graph() {
        let mut g = OptiGraph::new("d");
        for i in 0..7 {
            g.add_node(format!("n{i}"));
        }
        let p = heuristic_partition(&g, 3).unwrap();
        assert_eq!(p.part_sizes(), vec![3, 2, 2]);
    }
}
