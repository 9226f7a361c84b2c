use std::collections::HashMap;
use std::fmt::Write as _;

use super::partition::node_adjacency;
use super::OptiGraph;
use crate::expr::NodeId;

/// Node adjacency (clique expansion of links) in `all_nodes` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    pub labels: Vec<String>,
    /// Top-level subgraph holding each node; `None` for top-level nodes.
    pub parts: Vec<Option<usize>>,
    /// Edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
}

pub fn adjacency_export(graph: &OptiGraph) -> Adjacency {
    let nodes = graph.all_nodes();
    let mut part_of: HashMap<NodeId, usize> = HashMap::new();
    for (p, g) in graph.subgraphs().iter().enumerate() {
        for n in g.all_nodes() {
            part_of.insert(n.id(), p);
        }
    }
    let adj = node_adjacency(graph);
    let mut edges = Vec::new();
    for (i, a) in adj.iter().enumerate() {
        edges.extend(a.iter().filter(|&&j| j > i).map(|&j| (i, j)));
    }
    Adjacency {
        labels: nodes.iter().map(|n| n.label.clone()).collect(),
        parts: nodes.iter().map(|n| part_of.get(&n.id()).copied()).collect(),
        edges,
    }
}

fn part_str(p: Option<usize>) -> String {
    p.map_or_else(|| "top".to_string(), |p| p.to_string())
}

/// Coordinate form of the symmetric adjacency matrix, both triangles.
pub fn adjacency_csv(a: &Adjacency) -> String {
    let mut s = String::from("row,col,row_label,col_label,row_part,col_part\n");
    let mut all: Vec<(usize, usize)> = a.edges.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
    all.sort_unstable();
    for (i, j) in all {
        let _ =
            writeln!(s, "{i},{j},{},{},{},{}", a.labels[i], a.labels[j], part_str(a.parts[i]), part_str(a.parts[j]));
    }
    s
}

/// Graphviz rendering with one cluster per top-level subgraph.
pub fn to_dot(graph: &OptiGraph) -> String {
    let a = adjacency_export(graph);
    let mut s = String::new();
    let _ = writeln!(s, "graph \"{}\" {{", graph.label.replace('"', "'"));
    let nparts = graph.subgraphs().len();
    for i in 0..a.labels.len() {
        if a.parts[i].is_none() {
            let _ = writeln!(s, "  n{i} [label=\"{}\"];", a.labels[i].replace('"', "'"));
        }
    }
    for p in 0..nparts {
        let _ = writeln!(s, "  subgraph cluster_{p} {{");
        let _ = writeln!(s, "    label=\"{}\";", graph.subgraphs()[p].label.replace('"', "'"));
        for i in 0..a.labels.len() {
            if a.parts[i] == Some(p) {
                let _ = writeln!(s, "    n{i} [label=\"{}\"];", a.labels[i].replace('"', "'"));
            }
        }
        let _ = writeln!(s, "  }}");
    }
    for &(i, j) in &a.edges {
        let _ = writeln!(s, "  n{i} -- n{j};");
    }
    s.push_str("}\n");
    s
}
