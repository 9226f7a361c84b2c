//! Stochastic PID tuning.
//!
//! Every scenario is a chain of `N` time nodes sharing the tuning parameters
//! `Kc`, `tauI`, `tauD` with a master node. Products of parameters and states
//! are lifted into node-local variables so that all links stay affine.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ModelError, MASTER_LABEL};
use crate::expr::{Expr, NodeId};
use crate::graph::{ConstraintKind, OptiGraph, Partition};

/// How time nodes are grouped into subgraphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeOrdering {
    /// One subgraph per scenario holding its `N` time nodes.
    #[default]
    ScenarioMajor,
    /// One subgraph per time step holding that step of every scenario.
    TimeMajor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    pub ns: usize,
    pub n: usize,
    pub tf: f64,
    pub k: f64,
    pub x0: f64,
    pub kd: f64,
    pub tau: f64,
    pub d: Vec<f64>,
    pub xsp: Vec<f64>,
    pub ordering: NodeOrdering,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            ns: 5,
            n: 100,
            tf: 10.0,
            k: 1.0,
            x0: 0.0,
            kd: 0.5,
            tau: 1.0,
            d: vec![-1.0; 5],
            xsp: vec![-2.0, -1.5, -0.5, 0.5, 1.0],
            ordering: NodeOrdering::ScenarioMajor,
        }
    }
}

impl PidConfig {
    /// Defaults with `ns` scenarios and `n` steps; disturbances and set-points
    /// cycle through the default lists.
    pub fn with_size(ns: usize, n: usize) -> Self {
        let base = PidConfig::default();
        PidConfig {
            ns,
            n,
            d: (0..ns).map(|s| base.d[s % base.d.len()]).collect(),
            xsp: (0..ns).map(|s| base.xsp[s % base.xsp.len()]).collect(),
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.ns == 0 {
            return bad("at least one scenario is required".into());
        }
        if self.d.len() != self.ns || self.xsp.len() != self.ns {
            return bad(format!(
                "ns = {} but {} disturbances and {} set-points",
                self.ns,
                self.d.len(),
                self.xsp.len()
            ));
        }
        if self.n < 2 {
            return bad(format!("need at least 2 time steps, got {}", self.n));
        }
        if !(self.tf > 0.0) || !self.tf.is_finite() {
            return bad(format!("horizon must be positive, got {}", self.tf));
        }
        if self.tau == 0.0 || !self.tau.is_finite() {
            return bad(format!("time constant must be nonzero, got {}", self.tau));
        }
        let all = [self.k, self.x0, self.kd].into_iter().chain(self.d.iter().copied()).chain(self.xsp.iter().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.tf / self.n as f64
    }
}

const X: usize = 0;
const U: usize = 1;
const INT: usize = 2;
const KC: usize = 3;
const TAUI: usize = 4;
const TAUD: usize = 5;
const KCX: usize = 6;
const TAUIINT: usize = 7;
const TAUDX: usize = 8;

fn node_label(s: usize, t: usize) -> String {
    format!("s{s}.t{t}")
}

/// Builds the PID tuning graph: a master node followed by the time nodes,
/// grouped per [`PidConfig::ordering`]. Scenario and time indices are 1-based
/// in node labels (`s{s}.t{t}`).
pub fn build_pid(cfg: &PidConfig) -> Result<OptiGraph, ModelError> {
    cfg.validate()?;
    let (ns, n, h) = (cfg.ns, cfg.n, cfg.step());
    let mut g = OptiGraph::new("pid");
    let master = g.add_node(MASTER_LABEL);
    {
        let m = g.node_mut(master).unwrap();
        m.add_variable("Kc", -10.0, 10.0, 0.0)?;
        m.add_variable("tauI", -100.0, 100.0, 0.0)?;
        m.add_variable("tauD", -100.0, 100.0, 0.0)?;
    }

    // ids[s][t], both 0-based
    let mut ids = vec![vec![NodeId::FREE; n]; ns];
    let build_node = |g: &mut OptiGraph, s: usize, t: usize| -> Result<NodeId, ModelError> {
        let id = g.add_node(node_label(s + 1, t + 1));
        let node = g.node_mut(id).unwrap();
        node.add_variable("x", -2.5, 2.5, cfg.x0.clamp(-2.5, 2.5))?;
        node.add_variable("u", -2.0, 2.0, 0.0)?;
        for name in ["int", "Kc", "tauI", "tauD", "Kcx", "tauIint", "tauDx"] {
            node.add_variable(name, f64::NEG_INFINITY, f64::INFINITY, 0.0)?;
        }
        let v = |i: usize| Expr::var(node.var(i));
        let lifted = [v(KCX) - v(KC) * v(X), v(TAUIINT) - v(TAUI) * v(INT), v(TAUDX) - v(TAUD) * v(X)];
        let objective = (100.0 * (cfg.xsp[s] - v(X)).powi(2) + 0.01 * v(U).powi(2)) / ns as f64;
        let initial = (t == 0).then(|| [v(INT), v(X) - cfg.x0]);
        for e in lifted {
            node.add_constraint(e, ConstraintKind::Equality)?;
        }
        for e in initial.into_iter().flatten() {
            node.add_constraint(e, ConstraintKind::Equality)?;
        }
        node.set_objective(objective)?;
        Ok(id)
    };

    match cfg.ordering {
        NodeOrdering::ScenarioMajor => {
            for s in 0..ns {
                let mut sg = OptiGraph::new(format!("scenario{}", s + 1));
                for t in 0..n {
                    ids[s][t] = build_node(&mut sg, s, t)?;
                }
                scenario_links(&mut sg, cfg, s, &ids[s], h)?;
                g.add_subgraph(sg);
            }
        }
        NodeOrdering::TimeMajor => {
            for t in 0..n {
                let mut sg = OptiGraph::new(format!("time{}", t + 1));
                for (s, row) in ids.iter_mut().enumerate() {
                    row[t] = build_node(&mut sg, s, t)?;
                }
                g.add_subgraph(sg);
            }
            for s in 0..ns {
                scenario_links(&mut g, cfg, s, &ids[s], h)?;
            }
        }
    }

    for row in &ids {
        for p in [KC, TAUI, TAUD] {
            let e = Expr::var(node_var(&g, row[0], p)) - Expr::var(node_var(&g, master, p - KC));
            g.link_constraint(e, ConstraintKind::Equality)?;
        }
    }
    Ok(g)
}

fn node_var(g: &OptiGraph, id: NodeId, local: usize) -> crate::expr::VariableRef {
    g.node(id).expect("node built above").var(local)
}

/// Dynamics, controller, integral and parameter-chain links of scenario `s`.
fn scenario_links(g: &mut OptiGraph, cfg: &PidConfig, s: usize, ids: &[NodeId], h: f64) -> Result<(), ModelError> {
    let v = |g: &OptiGraph, t: usize, i: usize| Expr::var(node_var(g, ids[t], i));
    let n = ids.len();
    let xsp = cfg.xsp[s];
    let mut rows = Vec::with_capacity(6 * (n - 1));
    for t in 0..n - 1 {
        rows.push(
            (v(g, t + 1, X) - v(g, t, X)) / (cfg.tau * h) + v(g, t + 1, X) - cfg.k * v(g, t + 1, U) - cfg.kd * cfg.d[s],
        );
    }
    for t in 0..n - 1 {
        rows.push(
            v(g, t + 1, U)
                - (v(g, t, KC) * xsp - v(g, t, KCX) + v(g, t + 1, TAUIINT) + v(g, t + 1, TAUDX) / h
                    - v(g, t, TAUDX) / h),
        );
    }
    for t in 0..n - 1 {
        rows.push((v(g, t + 1, INT) - v(g, t, INT)) / h - (xsp - v(g, t + 1, X)));
    }
    for p in [KC, TAUI, TAUD] {
        for t in 0..n - 1 {
            rows.push(v(g, t, p) - v(g, t + 1, p));
        }
    }
    for e in rows {
        g.link_constraint(e, ConstraintKind::Equality)?;
    }
    Ok(())
}

/// Parses the 1-based time index out of an `s{s}.t{t}` label.
fn time_index(label: &str) -> Option<usize> {
    let (_, t) = label.rsplit_once(".t")?;
    t.parse().ok().filter(|&t| t >= 1)
}

/// Splits the time axis into `parts` contiguous windows across every
/// scenario; the master node joins the first window. Membership follows
/// `all_nodes` order.
pub fn pid_time_partition(graph: &OptiGraph, parts: usize) -> Result<Partition, ModelError> {
    let nodes = graph.all_nodes();
    let mut times: HashMap<NodeId, usize> = HashMap::new();
    for node in &nodes {
        if node.label == MASTER_LABEL {
            continue;
        }
        let t = time_index(&node.label).ok_or_else(|| ModelError::MissingTimeIndex(node.label.clone()))?;
        times.insert(node.id(), t);
    }
    let n = times.values().copied().max().unwrap_or(0);
    if parts == 0 || parts > n.max(1) {
        return Err(ModelError::Config(format!("cannot split {n} time steps into {parts} parts")));
    }
    let membership = nodes.iter().map(|node| times.get(&node.id()).map_or(0, |&t| (t - 1) * parts / n)).collect();
    Ok(Partition::new(membership))
}
