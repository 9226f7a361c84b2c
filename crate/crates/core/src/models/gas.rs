//! Two-stage stochastic gas network on a compressor/pipeline chain.
//!
//! Each scenario is a subgraph holding one subgraph per junction, compressor
//! and pipeline. Junctions and compressors have one node per time point;
//! pipelines have one node per time and space point. A master node carries
//! the first-stage compressor power `Pbar[l, t]`, tied to every scenario.
//!
//! The friction term `c3 f|f|/p` is lifted into a node-local variable
//! `fric` with `fric * p = c3 f |f|` (`|f|` smoothed), which keeps every
//! link affine.

use serde::{Deserialize, Serialize};

use super::demand::{demand_profile, DemandConfig};
use super::{ModelError, MASTER_LABEL};
use crate::expr::ops::sabs;
use crate::expr::{Expr, VariableRef};
use crate::graph::{ConstraintKind, OptiGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Element {
    Pipeline,
    Compressor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasConfig {
    pub n_compressors: usize,
    pub n_pipelines: usize,
    pub n_junctions: usize,
    /// Elements from the supply junction to the delivery junction.
    pub topology: Vec<Element>,
    pub nt: usize,
    pub nx: usize,
    pub scenarios: usize,
    pub demand: DemandConfig,
    pub dt: f64,
    /// Pipeline length; `dx = length / (nx - 1)`.
    pub length: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub cp: f64,
    pub temperature: f64,
    pub gamma: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub boost_min: f64,
    pub boost_max: f64,
    pub supply_max: f64,
    pub power_max: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Supply pressure of the steady initial point; compressors boost back up to it.
    pub theta_init: f64,
}

/// `[p, c] * n_compressors` followed by the remaining pipelines.
pub fn default_chain(n_compressors: usize, n_pipelines: usize) -> Vec<Element> {
    let mut chain = Vec::with_capacity(n_compressors + n_pipelines);
    for i in 0..n_pipelines.max(n_compressors) {
        if i < n_pipelines {
            chain.push(Element::Pipeline);
        }
        if i < n_compressors {
            chain.push(Element::Compressor);
        }
    }
    chain
}

impl Default for GasConfig {
    fn default() -> Self {
        GasConfig {
            n_compressors: 11,
            n_pipelines: 13,
            n_junctions: 25,
            topology: default_chain(11, 13),
            nt: 24,
            nx: 10,
            scenarios: 1,
            demand: DemandConfig::default(),
            dt: 1.0,
            length: 13.0,
            c1: 4.0,
            c2: 200.0,
            c3: 25.0,
            cp: 5.0,
            temperature: 1.0,
            gamma: 1.3,
            theta_min: 30.0,
            theta_max: 70.0,
            boost_min: 0.0,
            boost_max: 20.0,
            supply_max: 40.0,
            power_max: 20.0,
            alpha: 0.1,
            beta: 1.0,
            kappa: 1.0,
            theta_init: 60.0,
        }
    }
}

impl GasConfig {
    /// Default network with the given discretization and scenario count.
    pub fn with_size(scenarios: usize, nt: usize, nx: usize) -> Self {
        GasConfig { scenarios, nt, nx, ..Default::default() }
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.nx - 1) as f64
    }

    pub fn demands(&self) -> Vec<Vec<f64>> {
        (0..self.scenarios).map(|s| demand_profile(s, self.nt, &self.demand)).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let pipes = self.topology.iter().filter(|e| **e == Element::Pipeline).count();
        let comps = self.topology.len() - pipes;
        if pipes != self.n_pipelines || comps != self.n_compressors {
            return Err(ModelError::Topology(format!(
                "chain has {pipes} pipelines and {comps} compressors, expected {} and {}",
                self.n_pipelines, self.n_compressors
            )));
        }
        if self.topology.is_empty() || self.n_junctions != self.topology.len() + 1 {
            return Err(ModelError::Topology(format!(
                "a chain of {} elements needs {} junctions, got {}",
                self.topology.len(),
                self.topology.len() + 1,
                self.n_junctions
            )));
        }
        let bad = |m: String| Err(ModelError::Config(m));
        if self.nt < 2 || self.nx < 2 {
            return bad(format!("need nt >= 2 and nx >= 2, got nt = {}, nx = {}", self.nt, self.nx));
        }
        if self.scenarios == 0 {
            return bad("at least one scenario is required".into());
        }
        let positive = [
            ("dt", self.dt),
            ("length", self.length),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("cp", self.cp),
            ("temperature", self.temperature),
            ("gamma", self.gamma),
            ("theta_min", self.theta_min),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("kappa", self.kappa),
            ("demand base", self.demand.base),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let ranges = [
            ("theta", self.theta_min, self.theta_max),
            ("boost", self.boost_min, self.boost_max),
            ("supply", 0.0, self.supply_max),
            ("power", 0.0, self.power_max),
            ("demand step", self.demand.mag_min, self.demand.mag_max),
        ];
        for (name, lo, hi) in ranges {
            if !(lo <= hi) {
                return bad(format!("{name} bounds [{lo}, {hi}] are inverted"));
            }
        }
        Ok(())
    }
}

/// Variables every element exposes to its junctions, per time point.
#[derive(Clone, Default)]
struct Ports {
    pin: Vec<VariableRef>,
    pout: Vec<VariableRef>,
    fin: Vec<VariableRef>,
    fout: Vec<VariableRef>,
}

/// Steady values along the chain at the base demand.
struct SteadyState {
    flow: f64,
    /// Pressure profile per pipeline (length nx) or (pin, pout) per compressor.
    pressures: Vec<Vec<f64>>,
    junctions: Vec<f64>,
}

fn steady_state(cfg: &GasConfig) -> Result<SteadyState, ModelError> {
    let f = cfg.demand.base;
    let fric = |p: f64| cfg.c3 * f * sabs(f) / p;
    let dx = cfg.dx();
    let mut p = cfg.theta_init;
    let mut junctions = vec![p];
    let mut pressures = Vec::with_capacity(cfg.topology.len());
    for e in &cfg.topology {
        match e {
            Element::Pipeline => {
                let mut prof = vec![p];
                for _ in 1..cfg.nx {
                    p -= dx * fric(p) / cfg.c2;
                    prof.push(p);
                }
                pressures.push(prof);
            }
            Element::Compressor => {
                let boost = (cfg.theta_init - p).clamp(cfg.boost_min, cfg.boost_max);
                pressures.push(vec![p, p + boost]);
                p += boost;
            }
        }
        junctions.push(p);
    }
    let all = pressures.iter().flatten().chain(&junctions);
    if let Some(bad) = all.into_iter().find(|&&p| !(cfg.theta_min..=cfg.theta_max).contains(&p)) {
        return Err(ModelError::Config(format!(
            "steady state at base demand {f} reaches pressure {bad:.3}, outside [{}, {}]",
            cfg.theta_min, cfg.theta_max
        )));
    }
    if f > cfg.supply_max {
        return Err(ModelError::Config(format!("base demand {f} exceeds the supply limit {}", cfg.supply_max)));
    }
    let ex = (cfg.gamma - 1.0) / cfg.gamma;
    for pr in pressures.iter().zip(&cfg.topology).filter(|(_, e)| **e == Element::Compressor).map(|(p, _)| p) {
        let power = cfg.cp * cfg.temperature * f * ((pr[1] / pr[0]).powf(ex) - 1.0);
        if power > cfg.power_max {
            return Err(ModelError::Config(format!("steady compressor power {power:.3} exceeds {}", cfg.power_max)));
        }
    }
    Ok(SteadyState { flow: f, pressures, junctions })
}

fn eq() -> ConstraintKind {
    ConstraintKind::Equality
}

/// Adds `expr` as a node constraint when it touches one node, else as a link.
fn constrain(g: &mut OptiGraph, expr: Expr, kind: ConstraintKind) -> Result<(), ModelError> {
    match expr.nodes().as_slice() {
        [n] => g.add_constraint(*n, expr, kind)?,
        _ => {
            g.link_constraint(expr, kind)?;
        }
    }
    Ok(())
}

fn v(r: VariableRef) -> Expr {
    Expr::var(r)
}

/// Builds the gas network graph: a master node followed by one subgraph per
/// scenario.
pub fn build_gas(cfg: &GasConfig) -> Result<OptiGraph, ModelError> {
    cfg.validate()?;
    let ss = steady_state(cfg)?;
    let demands = cfg.demands();
    let ex = (cfg.gamma - 1.0) / cfg.gamma;
    let power0: Vec<f64> = ss
        .pressures
        .iter()
        .zip(&cfg.topology)
        .filter(|(_, e)| **e == Element::Compressor)
        .map(|(p, _)| cfg.cp * cfg.temperature * ss.flow * ((p[1] / p[0]).powf(ex) - 1.0))
        .collect();

    let mut g = OptiGraph::new("gas");
    let master = g.add_node(MASTER_LABEL);
    let mut pbar = vec![Vec::with_capacity(cfg.nt); cfg.n_compressors];
    {
        let m = g.node_mut(master).unwrap();
        for (c, row) in pbar.iter_mut().enumerate() {
            for t in 0..cfg.nt {
                row.push(m.add_variable(format!("Pbar_c{}_t{}", c + 1, t + 1), 0.0, cfg.power_max, power0[c])?);
            }
        }
    }
    for s in 0..cfg.scenarios {
        let (sg, power) = build_scenario(cfg, s, &ss, &demands[s])?;
        g.add_subgraph(sg);
        for (c, row) in power.iter().enumerate() {
            for t in 0..cfg.nt {
                g.link_constraint(v(pbar[c][t]) - v(row[t]), eq())?;
            }
        }
    }
    Ok(g)
}

/// One scenario subgraph; also returns the compressor power variables `[c][t]`.
fn build_scenario(
    cfg: &GasConfig,
    s: usize,
    ss: &SteadyState,
    demand: &[f64],
) -> Result<(OptiGraph, Vec<Vec<VariableRef>>), ModelError> {
    let tag = format!("s{}", s + 1);
    let mut sg = OptiGraph::new(format!("scenario{}", s + 1));
    let nt = cfg.nt;
    let nj = cfg.n_junctions;
    let mut theta = Vec::with_capacity(nj);
    let mut ports = Vec::with_capacity(cfg.topology.len());
    let mut powers = Vec::new();
    let mut supply = Vec::new();
    let mut delivered = Vec::new();
    let (mut ip, mut ic) = (0, 0);

    for j in 0..nj {
        let mut jg = OptiGraph::new(format!("j{}", j + 1));
        let mut th = Vec::with_capacity(nt);
        for t in 0..nt {
            let id = jg.add_node(format!("{tag}.j{}.t{}", j + 1, t + 1));
            let node = jg.node_mut(id).unwrap();
            th.push(node.add_variable("theta", cfg.theta_min, cfg.theta_max, ss.junctions[j])?);
            if j == 0 {
                supply.push(node.add_variable("supply", 0.0, cfg.supply_max, ss.flow)?);
            }
            if j == nj - 1 {
                let fdel = node.add_variable("delivered", 0.0, f64::INFINITY, ss.flow)?;
                let slack = node.add_variable("overdelivery", 0.0, f64::INFINITY, 0.0)?;
                node.add_constraint(v(fdel) - v(slack), ConstraintKind::le(demand[t]))?;
                node.set_objective(-cfg.beta * v(fdel) + cfg.kappa * v(slack))?;
                delivered.push(fdel);
            }
        }
        theta.push(th);
        sg.add_subgraph(jg);
        if j + 1 == nj {
            break;
        }
        let e = j;
        let (eg, p) = match cfg.topology[e] {
            Element::Pipeline => {
                ip += 1;
                build_pipeline(cfg, &format!("{tag}.p{ip}"), &format!("p{ip}"), ss.flow, &ss.pressures[e])?
            }
            Element::Compressor => {
                ic += 1;
                let (eg, p, pw) =
                    build_compressor(cfg, &format!("{tag}.c{ic}"), &format!("c{ic}"), ss.flow, &ss.pressures[e])?;
                powers.push(pw);
                (eg, p)
            }
        };
        sg.add_subgraph(eg);
        ports.push(p);
    }

    let last = ports.len() - 1;
    for t in 0..nt {
        constrain(&mut sg, v(supply[t]) - v(ports[0].fin[t]), eq())?;
        for j in 1..nj - 1 {
            constrain(&mut sg, v(ports[j - 1].fout[t]) - v(ports[j].fin[t]), eq())?;
        }
        constrain(&mut sg, v(ports[last].fout[t]) - v(delivered[t]), eq())?;
        for (e, p) in ports.iter().enumerate() {
            constrain(&mut sg, v(p.pin[t]) - v(theta[e][t]), eq())?;
            constrain(&mut sg, v(p.pout[t]) - v(theta[e + 1][t]), eq())?;
        }
    }
    Ok((sg, powers))
}

fn build_compressor(
    cfg: &GasConfig,
    tag: &str,
    label: &str,
    f0: f64,
    p0: &[f64],
) -> Result<(OptiGraph, Ports, Vec<VariableRef>), ModelError> {
    let mut g = OptiGraph::new(label);
    let mut ports = Ports::default();
    let mut power = Vec::with_capacity(cfg.nt);
    let ex = (cfg.gamma - 1.0) / cfg.gamma;
    let cpt = cfg.cp * cfg.temperature;
    let boost0 = p0[1] - p0[0];
    let power0 = cpt * f0 * ((p0[1] / p0[0]).powf(ex) - 1.0);
    for t in 0..cfg.nt {
        let id = g.add_node(format!("{tag}.t{}", t + 1));
        let n = g.node_mut(id).unwrap();
        let pin = n.add_variable("pin", cfg.theta_min, cfg.theta_max, p0[0])?;
        let pout = n.add_variable("pout", cfg.theta_min, cfg.theta_max, p0[1])?;
        let boost = n.add_variable("boost", cfg.boost_min, cfg.boost_max, boost0)?;
        let pw = n.add_variable("power", 0.0, cfg.power_max, power0)?;
        let f = n.add_variable("f", 0.0, f64::INFINITY, f0)?;
        let fin = n.add_variable("fin", f64::NEG_INFINITY, f64::INFINITY, f0)?;
        let fout = n.add_variable("fout", f64::NEG_INFINITY, f64::INFINITY, f0)?;
        n.add_constraint(v(pw) - cpt * v(f) * ((v(pout) / v(pin)).powf(ex) - 1.0), eq())?;
        n.add_constraint(v(pout) - v(pin) - v(boost), eq())?;
        n.add_constraint(v(f) - v(fin), eq())?;
        n.add_constraint(v(f) - v(fout), eq())?;
        n.set_objective(cfg.alpha * v(pw))?;
        ports.pin.push(pin);
        ports.pout.push(pout);
        ports.fin.push(fin);
        ports.fout.push(fout);
        power.push(pw);
    }
    Ok((g, ports, power))
}

fn build_pipeline(
    cfg: &GasConfig,
    tag: &str,
    label: &str,
    f0: f64,
    p0: &[f64],
) -> Result<(OptiGraph, Ports), ModelError> {
    let (nt, nx, dx, dt) = (cfg.nt, cfg.nx, cfg.dx(), cfg.dt);
    let mut g = OptiGraph::new(label);
    let mut ports = Ports::default();
    let mut p = vec![Vec::with_capacity(nx); nt];
    let mut f = vec![Vec::with_capacity(nx); nt];
    let mut fric = vec![Vec::with_capacity(nx - 1); nt];
    let mut m = Vec::with_capacity(nt);
    let m0 = p0[..nx - 1].iter().sum::<f64>() * dx / cfg.c1;
    for t in 0..nt {
        for k in 0..nx {
            let id = g.add_node(format!("{tag}.t{}.x{}", t + 1, k + 1));
            let n = g.node_mut(id).unwrap();
            let pk = n.add_variable("p", cfg.theta_min, cfg.theta_max, p0[k])?;
            let fk = n.add_variable("f", f64::NEG_INFINITY, f64::INFINITY, f0)?;
            if k + 1 < nx {
                let fr = n.add_variable("fric", f64::NEG_INFINITY, f64::INFINITY, cfg.c3 * f0 * sabs(f0) / p0[k])?;
                n.add_constraint(v(fr) * v(pk) - cfg.c3 * v(fk) * v(fk).smooth_abs(), eq())?;
                fric[t].push(fr);
            }
            if k == 0 {
                let pin = n.add_variable("pin", f64::NEG_INFINITY, f64::INFINITY, p0[k])?;
                let fin = n.add_variable("fin", f64::NEG_INFINITY, f64::INFINITY, f0)?;
                m.push(n.add_variable("linepack", f64::NEG_INFINITY, f64::INFINITY, m0)?);
                n.add_constraint(v(pin) - v(pk), eq())?;
                n.add_constraint(v(fin) - v(fk), eq())?;
                ports.pin.push(pin);
                ports.fin.push(fin);
            }
            if k + 1 == nx {
                let pout = n.add_variable("pout", f64::NEG_INFINITY, f64::INFINITY, p0[k])?;
                let fout = n.add_variable("fout", f64::NEG_INFINITY, f64::INFINITY, f0)?;
                n.add_constraint(v(pout) - v(pk), eq())?;
                n.add_constraint(v(fout) - v(fk), eq())?;
                ports.pout.push(pout);
                ports.fout.push(fout);
            }
            p[t].push(pk);
            f[t].push(fk);
        }
    }
    let pv = |t: usize, k: usize| v(p[t][k]);
    let fv = |t: usize, k: usize| v(f[t][k]);
    for k in 0..nx - 1 {
        constrain(&mut g, (fv(0, k + 1) - fv(0, k)) / dx, eq())?;
        constrain(&mut g, cfg.c2 * (pv(0, k + 1) - pv(0, k)) / dx + v(fric[0][k]), eq())?;
    }
    for t in 1..nt {
        for k in 0..nx - 1 {
            constrain(&mut g, (pv(t, k) - pv(t - 1, k)) / dt + cfg.c1 * (fv(t, k + 1) - fv(t, k)) / dx, eq())?;
            constrain(
                &mut g,
                (fv(t, k) - fv(t - 1, k)) / dt + cfg.c2 * (pv(t, k + 1) - pv(t, k)) / dx + v(fric[t][k]),
                eq(),
            )?;
        }
    }
    for t in 0..nt {
        let pack = Expr::sum((0..nx - 1).map(|k| pv(t, k))) * (dx / cfg.c1);
        constrain(&mut g, v(m[t]) - pack, eq())?;
    }
    constrain(&mut g, v(m[nt - 1]) - v(m[0]), ConstraintKind::ge(0.0))?;
    Ok((g, ports))
}
