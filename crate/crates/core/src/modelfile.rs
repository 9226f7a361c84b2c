//! JSON model exchange format.
//!
//! ```text
//! {
//!   "format": "graphnlp-model", "version": 1,
//!   "metadata": {"name": .., "generator": .., "config": {..}, "master": "master" | null},
//!   "label": "..",
//!   "nodes": [{"label": .., "variables": [{"name", "lower", "upper", "init"}],
//!              "constraints": [{"expr": <sexpr>, "lo": .., "hi": ..}], "objective": <sexpr>}],
//!   "links": [{"expr": <sexpr>, "lo": .., "hi": ..}],
//!   "subgraphs": [{"label", "nodes", "links", "subgraphs"}]
//! }
//! ```
//!
//! Expressions are prefix s-expressions whose `["var", g]` leaves use the
//! global variable index `g`: variables numbered node by node in
//! `all_nodes` order. A constraint without `lo`/`hi` keys is an equality
//! `expr == 0`; otherwise `null` stands for an infinite bound, as it does for
//! variable bounds.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::expr::{Expr, ExprError, VariableRef};
use crate::graph::{Constraint, ConstraintKind, GraphError, OptiGraph, OptiNode};

pub const FORMAT: &str = "graphnlp-model";
pub const VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("JSON error at line {line}, column {column}: {msg}")]
    Json { line: usize, column: usize, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("{path}: {source}")]
    Graph { path: String, source: GraphError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for ModelFileError {
    fn from(e: serde_json::Error) -> Self {
        ModelFileError::Json { line: e.line(), column: e.column(), msg: e.to_string() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub generator: String,
    #[serde(default)]
    pub config: Value,
    /// Label of the node carrying first-stage variables, if any.
    #[serde(default)]
    pub master: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ModelFile {
    pub metadata: Metadata,
    pub graph: OptiGraph,
}

fn bound(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn constraint_json(expr: &Expr, kind: &ConstraintKind, index: &dyn Fn(VariableRef) -> u64) -> Value {
    let e = expr.to_sexpr_with(index);
    match kind {
        ConstraintKind::Equality => json!({ "expr": e }),
        ConstraintKind::Range { lo, hi } => json!({ "expr": e, "lo": bound(*lo), "hi": bound(*hi) }),
    }
}

fn graph_json(g: &OptiGraph, index: &dyn Fn(VariableRef) -> u64) -> Value {
    let nodes: Vec<Value> = g
        .nodes()
        .iter()
        .map(|n| {
            let vars: Vec<Value> = n
                .variables
                .iter()
                .map(|v| json!({ "name": v.name, "lower": bound(v.lower), "upper": bound(v.upper), "init": v.init }))
                .collect();
            let cons: Vec<Value> = n.constraints.iter().map(|c| constraint_json(&c.expr, &c.kind, index)).collect();
            json!({
                "label": n.label,
                "variables": vars,
                "constraints": cons,
                "objective": n.objective.to_sexpr_with(index),
            })
        })
        .collect();
    let links: Vec<Value> = g.links().iter().map(|l| constraint_json(&l.expr, &l.kind, index)).collect();
    let subs: Vec<Value> = g.subgraphs().iter().map(|s| graph_json(s, index)).collect();
    json!({ "label": g.label, "nodes": nodes, "links": links, "subgraphs": subs })
}

impl ModelFile {
    pub fn new(graph: OptiGraph, metadata: Metadata) -> Self {
        ModelFile { metadata, graph }
    }

    pub fn to_json(&self) -> Value {
        let mut offsets = std::collections::HashMap::new();
        let mut off = 0u64;
        for n in self.graph.all_nodes() {
            offsets.insert(n.id(), off);
            off += n.num_variables() as u64;
        }
        let index = |v: VariableRef| offsets[&v.node] + v.local as u64;
        let mut doc = graph_json(&self.graph, &index);
        let obj = doc.as_object_mut().unwrap();
        obj.insert("format".into(), json!(FORMAT));
        obj.insert("version".into(), json!(VERSION));
        obj.insert("metadata".into(), serde_json::to_value(&self.metadata).unwrap());
        doc
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), ModelFileError> {
        serde_json::to_writer(w, &self.to_json())?;
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        self.to_json().to_string()
    }

    pub fn parse(text: &str) -> Result<ModelFile, ModelFileError> {
        let doc: Value = serde_json::from_str(text)?;
        Self::from_json(&doc)
    }

    pub fn from_json(doc: &Value) -> Result<ModelFile, ModelFileError> {
        let invalid = |path: &str, msg: String| ModelFileError::Invalid { path: path.into(), msg };
        match doc.get("format").and_then(Value::as_str) {
            Some(FORMAT) => {}
            other => return Err(invalid("format", format!("expected {FORMAT:?}, found {other:?}"))),
        }
        match doc.get("version").and_then(Value::as_u64) {
            Some(VERSION) => {}
            other => return Err(invalid("version", format!("unsupported version {other:?}"))),
        }
        let metadata: Metadata = match doc.get("metadata") {
            Some(m) => serde_json::from_value(m.clone()).map_err(|e| invalid("metadata", e.to_string()))?,
            None => Metadata::default(),
        };
        let mut graph = build_structure(doc, "$")?;
        let table: Vec<VariableRef> =
            graph.all_nodes().iter().flat_map(|n| (0..n.num_variables()).map(|i| n.var(i))).collect();
        add_rows(&mut graph, doc, "$", &table)?;
        Ok(ModelFile { metadata, graph })
    }
}

fn array<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a [Value], ModelFileError> {
    match v.get(key) {
        None => Ok(&[]),
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(ModelFileError::Invalid { path: format!("{path}.{key}"), msg: "expected an array".into() }),
    }
}

fn num_or_null(v: Option<&Value>, default: f64, path: &str) -> Result<f64, ModelFileError> {
    match v {
        None | Some(Value::Null) => Ok(default),
        Some(x) => x.as_f64().ok_or_else(|| ModelFileError::Invalid {
            path: path.into(),
            msg: format!("expected a number or null, found {x}"),
        }),
    }
}

/// Graph tree with nodes and variables only.
fn build_structure(v: &Value, path: &str) -> Result<OptiGraph, ModelFileError> {
    let label = v.get("label").and_then(Value::as_str).unwrap_or("").to_string();
    let mut g = OptiGraph::new(label);
    for (i, n) in array(v, "nodes", path)?.iter().enumerate() {
        let npath = format!("{path}.nodes[{i}]");
        let label = n.get("label").and_then(Value::as_str).unwrap_or("").to_string();
        let id = g.add_node(label);
        let node = g.node_mut(id).unwrap();
        for (j, var) in array(n, "variables", &npath)?.iter().enumerate() {
            let vpath = format!("{npath}.variables[{j}]");
            let name = var
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| ModelFileError::Invalid { path: vpath.clone(), msg: "missing name".into() })?;
            let lower = num_or_null(var.get("lower"), f64::NEG_INFINITY, &format!("{vpath}.lower"))?;
            let upper = num_or_null(var.get("upper"), f64::INFINITY, &format!("{vpath}.upper"))?;
            let init = num_or_null(var.get("init"), 0.0, &format!("{vpath}.init"))?;
            node.add_variable(name, lower, upper, init)
                .map_err(|source| ModelFileError::Graph { path: vpath, source })?;
        }
    }
    for (i, s) in array(v, "subgraphs", path)?.iter().enumerate() {
        g.add_subgraph(build_structure(s, &format!("{path}.subgraphs[{i}]"))?);
    }
    Ok(g)
}

fn parse_expr(v: Option<&Value>, table: &[VariableRef], path: &str) -> Result<Expr, ModelFileError> {
    let v = v.ok_or_else(|| ModelFileError::Invalid { path: path.into(), msg: "missing expression".into() })?;
    Expr::from_sexpr_with(v, &|i| {
        table.get(i as usize).copied().ok_or_else(|| ExprError::Parse(format!("variable index {i} out of range")))
    })
    .map_err(|e| ModelFileError::Invalid { path: path.into(), msg: e.to_string() })
}

fn parse_constraint(c: &Value, table: &[VariableRef], path: &str) -> Result<Constraint, ModelFileError> {
    let expr = parse_expr(c.get("expr"), table, &format!("{path}.expr"))?;
    let kind = if c.get("lo").is_none() && c.get("hi").is_none() {
        ConstraintKind::Equality
    } else {
        let lo = num_or_null(c.get("lo"), f64::NEG_INFINITY, &format!("{path}.lo"))?;
        let hi = num_or_null(c.get("hi"), f64::INFINITY, &format!("{path}.hi"))?;
        if !(lo <= hi) {
            return Err(ModelFileError::Invalid { path: path.into(), msg: format!("range [{lo}, {hi}] is empty") });
        }
        ConstraintKind::Range { lo, hi }
    };
    Ok(Constraint { expr, kind })
}

fn add_rows(g: &mut OptiGraph, v: &Value, path: &str, table: &[VariableRef]) -> Result<(), ModelFileError> {
    let graph_err = |path: String| move |source: GraphError| ModelFileError::Graph { path, source };
    let ids: Vec<_> = g.nodes().iter().map(OptiNode::id).collect();
    for (i, n) in array(v, "nodes", path)?.iter().enumerate() {
        let npath = format!("{path}.nodes[{i}]");
        for (j, c) in array(n, "constraints", &npath)?.iter().enumerate() {
            let cpath = format!("{npath}.constraints[{j}]");
            let c = parse_constraint(c, table, &cpath)?;
            g.add_constraint(ids[i], c.expr, c.kind).map_err(graph_err(cpath))?;
        }
        if let Some(o) = n.get("objective") {
            let opath = format!("{npath}.objective");
            let e = parse_expr(Some(o), table, &opath)?;
            g.set_objective(ids[i], e).map_err(graph_err(opath))?;
        }
    }
    for (i, s) in array(v, "subgraphs", path)?.iter().enumerate() {
        add_rows(g.subgraph_mut(i), s, &format!("{path}.subgraphs[{i}]"), table)?;
    }
    for (i, l) in array(v, "links", path)?.iter().enumerate() {
        let lpath = format!("{path}.links[{i}]");
        let c = parse_constraint(l, table, &lpath)?;
        g.link_constraint(c.expr, c.kind).map_err(graph_err(lpath))?;
    }
    Ok(())
}
