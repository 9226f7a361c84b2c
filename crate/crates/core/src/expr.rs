//! Immutable expression DAGs over node-owned variables.
//!
//! An [`Expr`] is a cheap-to-clone handle (`Arc`) to a node of the graph, so
//! subexpressions built once and reused share storage. Operator overloads on
//! `Expr` and `f64` build new nodes; nothing is ever mutated in place.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

/// Smoothing constant of [`Expr::smooth_abs`].
pub const SMOOTH_ABS_EPS: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("variable {0} is not bound to an index of the point")]
    Unbound(VariableRef),
    #[error("malformed expression: {0}")]
    Parse(String),
}

/// Identifier of a graph node. Id 0 is reserved for free-standing variables
/// whose local index doubles as their position in a flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const FREE: NodeId = NodeId(0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Reference to a variable: owning node plus position within that node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariableRef {
    pub node: NodeId,
    pub local: u32,
}

impl VariableRef {
    pub fn new(node: NodeId, local: u32) -> Self {
        VariableRef { node, local }
    }

    /// A free-standing variable addressing `x[index]` directly.
    pub fn free(index: usize) -> Self {
        VariableRef { node: NodeId::FREE, local: index as u32 }
    }
}

impl fmt::Display for VariableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.node, self.local)
    }
}

#[derive(Debug)]
pub enum ExprKind {
    Constant(f64),
    Variable(VariableRef),
    Sum(Vec<Expr>),
    Product(Expr, Expr),
    Difference(Expr, Expr),
    Quotient(Expr, Expr),
    PowInt(Expr, i32),
    PowReal(Expr, f64),
    Exp(Expr),
    Log(Expr),
    SmoothAbs(Expr),
}

#[derive(Clone)]
pub struct Expr(Arc<ExprKind>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_sexpr())
    }
}

impl Default for Expr {
    fn default() -> Self {
        Expr::constant(0.0)
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::constant(c)
    }
}

impl From<VariableRef> for Expr {
    fn from(v: VariableRef) -> Self {
        Expr::var(v)
    }
}

impl Expr {
    fn new(kind: ExprKind) -> Self {
        Expr(Arc::new(kind))
    }

    pub fn kind(&self) -> &ExprKind {
        &self.0
    }

    /// Address used to detect shared subexpressions.
    pub(crate) fn ptr(&self) -> *const ExprKind {
        Arc::as_ptr(&self.0)
    }

    pub fn constant(c: f64) -> Self {
        Expr::new(ExprKind::Constant(c))
    }

    pub fn var(v: VariableRef) -> Self {
        Expr::new(ExprKind::Variable(v))
    }

    /// Shorthand for the free variable `x[i]`.
    pub fn x(i: usize) -> Self {
        Expr::var(VariableRef::free(i))
    }

    pub fn as_constant(&self) -> Option<f64> {
        match *self.0 {
            ExprKind::Constant(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Self {
        let mut out = Vec::new();
        for t in terms {
            match t.kind() {
                ExprKind::Sum(children) => out.extend(children.iter().cloned()),
                ExprKind::Constant(c) if *c == 0.0 => {}
                _ => out.push(t),
            }
        }
        match out.len() {
            0 => Expr::constant(0.0),
            1 => out.pop().unwrap(),
            _ => Expr::new(ExprKind::Sum(out)),
        }
    }

    pub fn product(a: Expr, b: Expr) -> Self {
        if let (Some(x), Some(y)) = (a.as_constant(), b.as_constant()) {
            return Expr::constant(x * y);
        }
        Expr::new(ExprKind::Product(a, b))
    }

    pub fn difference(a: Expr, b: Expr) -> Self {
        if let (Some(x), Some(y)) = (a.as_constant(), b.as_constant()) {
            return Expr::constant(x - y);
        }
        Expr::new(ExprKind::Difference(a, b))
    }

    pub fn quotient(a: Expr, b: Expr) -> Self {
        Expr::new(ExprKind::Quotient(a, b))
    }

    pub fn powi(&self, p: i32) -> Self {
        Expr::new(ExprKind::PowInt(self.clone(), p))
    }

    /// Real power, evaluated as `exp(e * log(base))`; the base must stay positive.
    pub fn powf(&self, e: f64) -> Self {
        Expr::new(ExprKind::PowReal(self.clone(), e))
    }

    pub fn exp(&self) -> Self {
        Expr::new(ExprKind::Exp(self.clone()))
    }

    pub fn ln(&self) -> Self {
        Expr::new(ExprKind::Log(self.clone()))
    }

    /// `sqrt(u^2 + SMOOTH_ABS_EPS)`.
    pub fn smooth_abs(&self) -> Self {
        Expr::new(ExprKind::SmoothAbs(self.clone()))
    }

    /// Visits every node once, children before parents.
    pub fn visit_postorder(&self, f: &mut dyn FnMut(&Expr)) {
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Expr, bool)> = vec![(self.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            if expanded {
                f(&e);
                continue;
            }
            if !seen.insert(e.ptr()) {
                continue;
            }
            stack.push((e.clone(), true));
            for c in e.children().into_iter().rev() {
                if !seen.contains(&c.ptr()) {
                    stack.push((c.clone(), false));
                }
            }
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.kind() {
            ExprKind::Constant(_) | ExprKind::Variable(_) => vec![],
            ExprKind::Sum(c) => c.iter().collect(),
            ExprKind::Product(a, b) | ExprKind::Difference(a, b) | ExprKind::Quotient(a, b) => {
                vec![a, b]
            }
            ExprKind::PowInt(a, _)
            | ExprKind::PowReal(a, _)
            | ExprKind::Exp(a)
            | ExprKind::Log(a)
            | ExprKind::SmoothAbs(a) => vec![a],
        }
    }

    /// Sorted, deduplicated variables referenced by the expression.
    pub fn variables(&self) -> Vec<VariableRef> {
        let mut out = Vec::new();
        self.visit_postorder(&mut |e| {
            if let ExprKind::Variable(v) = e.kind() {
                out.push(*v);
            }
        });
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Sorted node ids referenced by the expression.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.variables().into_iter().map(|v| v.node).collect();
        ids.dedup();
        ids
    }

    /// True when no second derivative can be structurally nonzero.
    pub fn is_affine(&self) -> bool {
        crate::ad::Tape::compile(self, |v| Some(v.local as usize + ((v.node.0 as usize) << 32)))
            .map(|t| t.hessian_pattern().is_empty())
            .unwrap_or(false)
    }

    /// Rebuilds the expression with every variable replaced by `f(var)`,
    /// keeping shared subexpressions shared.
    pub fn map_vars(&self, f: &dyn Fn(VariableRef) -> VariableRef) -> Expr {
        let mut memo: HashMap<*const ExprKind, Expr> = HashMap::new();
        self.visit_postorder(&mut |e| {
            let get = |c: &Expr, memo: &HashMap<*const ExprKind, Expr>| memo[&c.ptr()].clone();
            let new = match e.kind() {
                ExprKind::Constant(_) => e.clone(),
                ExprKind::Variable(v) => Expr::var(f(*v)),
                ExprKind::Sum(c) => Expr::new(ExprKind::Sum(c.iter().map(|x| get(x, &memo)).collect())),
                ExprKind::Product(a, b) => Expr::new(ExprKind::Product(get(a, &memo), get(b, &memo))),
                ExprKind::Difference(a, b) => Expr::new(ExprKind::Difference(get(a, &memo), get(b, &memo))),
                ExprKind::Quotient(a, b) => Expr::new(ExprKind::Quotient(get(a, &memo), get(b, &memo))),
                ExprKind::PowInt(a, p) => Expr::new(ExprKind::PowInt(get(a, &memo), *p)),
                ExprKind::PowReal(a, p) => Expr::new(ExprKind::PowReal(get(a, &memo), *p)),
                ExprKind::Exp(a) => Expr::new(ExprKind::Exp(get(a, &memo))),
                ExprKind::Log(a) => Expr::new(ExprKind::Log(get(a, &memo))),
                ExprKind::SmoothAbs(a) => Expr::new(ExprKind::SmoothAbs(get(a, &memo))),
            };
            memo.insert(e.ptr(), new);
        });
        memo[&self.ptr()].clone()
    }

    /// Evaluates with free variables read from `x`. Node-owned variables are unbound.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.evaluate_with(&|v| {
            if v.node == NodeId::FREE && (v.local as usize) < x.len() {
                Some(x[v.local as usize])
            } else {
                None
            }
        })
    }

    pub fn evaluate_with(&self, value: &dyn Fn(VariableRef) -> Option<f64>) -> Result<f64, ExprError> {
        let mut memo: HashMap<*const ExprKind, f64> = HashMap::new();
        let mut err = None;
        self.visit_postorder(&mut |e| {
            if err.is_some() {
                return;
            }
            let g = |c: &Expr| memo[&c.ptr()];
            let v = match e.kind() {
                ExprKind::Constant(c) => Ok(*c),
                ExprKind::Variable(v) => value(*v).ok_or(ExprError::Unbound(*v)),
                ExprKind::Sum(c) => Ok(c.iter().map(g).sum()),
                ExprKind::Product(a, b) => Ok(g(a) * g(b)),
                ExprKind::Difference(a, b) => Ok(g(a) - g(b)),
                ExprKind::Quotient(a, b) => ops::div(g(a), g(b)),
                ExprKind::PowInt(a, p) => ops::powi(g(a), *p),
                ExprKind::PowReal(a, p) => ops::powf(g(a), *p),
                ExprKind::Exp(a) => Ok(g(a).exp()),
                ExprKind::Log(a) => ops::log(g(a)),
                ExprKind::SmoothAbs(a) => Ok(ops::sabs(g(a))),
            };
            match v {
                Ok(v) => {
                    memo.insert(e.ptr(), v);
                }
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(memo[&self.ptr()]),
        }
    }

    /// Prefix s-expression; `index` maps each variable to the integer written
    /// in its `["var", i]` leaf.
    pub fn to_sexpr_with(&self, index: &dyn Fn(VariableRef) -> u64) -> Value {
        let mut memo: HashMap<*const ExprKind, Value> = HashMap::new();
        self.visit_postorder(&mut |e| {
            let g = |c: &Expr| memo[&c.ptr()].clone();
            let v = match e.kind() {
                ExprKind::Constant(c) => json!(c),
                ExprKind::Variable(v) => json!(["var", index(*v)]),
                ExprKind::Sum(c) => {
                    let mut items = vec![json!("+")];
                    items.extend(c.iter().map(g));
                    Value::Array(items)
                }
                ExprKind::Product(a, b) => json!(["*", g(a), g(b)]),
                ExprKind::Difference(a, b) => json!(["-", g(a), g(b)]),
                ExprKind::Quotient(a, b) => json!(["/", g(a), g(b)]),
                ExprKind::PowInt(a, p) => json!(["^", g(a), p]),
                ExprKind::PowReal(a, p) => json!(["^", g(a), p]),
                ExprKind::Exp(a) => json!(["exp", g(a)]),
                ExprKind::Log(a) => json!(["log", g(a)]),
                ExprKind::SmoothAbs(a) => json!(["sabs", g(a)]),
            };
            memo.insert(e.ptr(), v);
        });
        memo.remove(&self.ptr()).unwrap()
    }

    /// S-expression using the local index of each variable.
    pub fn to_sexpr(&self) -> Value {
        self.to_sexpr_with(&|v| v.local as u64)
    }

    /// Parses a prefix s-expression; `var` resolves the integer of a `["var", i]` leaf.
    pub fn from_sexpr_with(
        value: &Value,
        var: &dyn Fn(u64) -> Result<VariableRef, ExprError>,
    ) -> Result<Expr, ExprError> {
        let bad = |msg: &str| ExprError::Parse(format!("{msg}: {value}"));
        match value {
            Value::Number(n) => n.as_f64().map(Expr::constant).ok_or_else(|| bad("bad number")),
            Value::Array(items) => {
                let op = items.first().and_then(Value::as_str).ok_or_else(|| bad("missing operator"))?;
                let args = &items[1..];
                let arity = |n: usize| {
                    if args.len() == n {
                        Ok(())
                    } else {
                        Err(bad(&format!("operator {op:?} takes {n} argument(s)")))
                    }
                };
                let sub = |i: usize| Expr::from_sexpr_with(&args[i], var);
                match op {
                    "var" => {
                        arity(1)?;
                        let i = args[0].as_u64().ok_or_else(|| bad("variable index must be a nonnegative integer"))?;
                        Ok(Expr::var(var(i)?))
                    }
                    "+" => {
                        let terms = (0..args.len()).map(sub).collect::<Result<Vec<_>, _>>()?;
                        Ok(match terms.len() {
                            0 => Expr::constant(0.0),
                            1 => terms.into_iter().next().unwrap(),
                            _ => Expr::new(ExprKind::Sum(terms)),
                        })
                    }
                    "-" if args.len() == 1 => Ok(-sub(0)?),
                    "-" => {
                        arity(2)?;
                        Ok(Expr::new(ExprKind::Difference(sub(0)?, sub(1)?)))
                    }
                    "*" => {
                        arity(2)?;
                        Ok(Expr::new(ExprKind::Product(sub(0)?, sub(1)?)))
                    }
                    "/" => {
                        arity(2)?;
                        Ok(Expr::new(ExprKind::Quotient(sub(0)?, sub(1)?)))
                    }
                    "^" => {
                        arity(2)?;
                        let base = sub(0)?;
                        match &args[1] {
                            Value::Number(n) if n.is_i64() => {
                                let p = n.as_i64().unwrap();
                                let p = i32::try_from(p).map_err(|_| bad("integer exponent out of range"))?;
                                Ok(base.powi(p))
                            }
                            Value::Number(n) => Ok(base.powf(n.as_f64().unwrap())),
                            _ => Err(bad("exponent must be a number")),
                        }
                    }
                    "exp" => {
                        arity(1)?;
                        Ok(sub(0)?.exp())
                    }
                    "log" => {
                        arity(1)?;
                        Ok(sub(0)?.ln())
                    }
                    "sabs" => {
                        arity(1)?;
                        Ok(sub(0)?.smooth_abs())
                    }
                    _ => Err(bad(&format!("unknown operator {op:?}"))),
                }
            }
            _ => Err(bad("expected number or list")),
        }
    }

    /// Parses an s-expression whose `["var", i]` leaves are free variables.
    pub fn from_sexpr(value: &Value) -> Result<Expr, ExprError> {
        Expr::from_sexpr_with(value, &|i| Ok(VariableRef::free(i as usize)))
    }
}

/// Scalar kernels shared by the tree evaluator and the tape.
pub(crate) mod ops {
    use super::{ExprError, SMOOTH_ABS_EPS};

    pub fn div(a: f64, b: f64) -> Result<f64, ExprError> {
        if b == 0.0 {
            Err(ExprError::Domain("division by zero".into()))
        } else {
            Ok(a / b)
        }
    }

    pub fn log(a: f64) -> Result<f64, ExprError> {
        if a > 0.0 {
            Ok(a.ln())
        } else {
            Err(ExprError::Domain(format!("log of nonpositive value {a}")))
        }
    }

    pub fn powi(a: f64, p: i32) -> Result<f64, ExprError> {
        if p < 0 && a == 0.0 {
            Err(ExprError::Domain("negative power of zero".into()))
        } else {
            Ok(a.powi(p))
        }
    }

    pub fn powf(a: f64, e: f64) -> Result<f64, ExprError> {
        if a > 0.0 {
            Ok((e * a.ln()).exp())
        } else {
            Err(ExprError::Domain(format!("real power of nonpositive base {a}")))
        }
    }

    pub fn sabs(a: f64) -> f64 {
        (a * a + SMOOTH_ABS_EPS).sqrt()
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $ctor:expr) => {
        impl $tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                $ctor(self, rhs)
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                $ctor(self, rhs.clone())
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                $ctor(self.clone(), rhs)
            }
        }
        impl $tr<&Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                $ctor(self.clone(), rhs.clone())
            }
        }
        impl $tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                $ctor(self, Expr::constant(rhs))
            }
        }
        impl $tr<f64> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                $ctor(self.clone(), Expr::constant(rhs))
            }
        }
        impl $tr<Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                $ctor(Expr::constant(self), rhs)
            }
        }
        impl $tr<&Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                $ctor(Expr::constant(self), rhs.clone())
            }
        }
    };
}

binop!(Add, add, |a: Expr, b: Expr| Expr::sum([a, b]));
binop!(Sub, sub, Expr::difference);
binop!(Mul, mul, Expr::product);
binop!(Div, div, Expr::quotient);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::product(Expr::constant(-1.0), self)
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_examples() {
        let x0 = Expr::x(0);
        assert_eq!(x0.powi(2).evaluate(&[3.0]).unwrap(), 9.0);
        let obj = 100.0 * (-2.0 - Expr::x(0)).powi(2) + 0.01 * Expr::x(1).powi(2);
        assert_eq!(obj.evaluate(&[0.0, 0.0]).unwrap(), 400.0);
        assert!((Expr::x(0).smooth_abs().evaluate(&[0.0]).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn domain_and_index_errors() {
        assert!(matches!(Expr::x(0).ln().evaluate(&[0.0]), Err(ExprError::Domain(_))));
        assert!(matches!((1.0 / Expr::x(0)).evaluate(&[0.0]), Err(ExprError::Domain(_))));
        assert!(matches!(Expr::x(3).evaluate(&[0.0]), Err(ExprError::Unbound(_))));
    }

    #[test]
    fn sexpr_round_trip() {
        let e = 100.0 * (-2.0 - Expr::x(0)).powi(2);
        let v = e.to_sexpr();
        assert_eq!(v, json!(["*", 100.0, ["^", ["-", -2.0, ["var", 0]], 2]]));
        let back = Expr::from_sexpr(&v).unwrap();
        assert_eq!(back.evaluate(&[1.5]).unwrap(), e.evaluate(&[1.5]).unwrap());
        let r = Expr::x(1).powf(0.5).exp().ln().smooth_abs() / Expr::x(0);
        let back = Expr::from_sexpr(&r.to_sexpr()).unwrap();
        assert_eq!(back.evaluate(&[2.0, 3.0]).unwrap(), r.evaluate(&[2.0, 3.0]).unwrap());
    }

    #[test]
    fn map_vars_keeps_sharing() {
        let shared = Expr::x(0) * Expr::x(1);
        let e = &shared + &shared;
        let m = e.map_vars(&|v| VariableRef::new(NodeId(7), v.local));
        if let ExprKind::Sum(c) = m.kind() {
            assert_eq!(c[0].ptr(), c[1].ptr());
        } else {
            panic!("expected sum");
        }
        assert_eq!(m.nodes(), vec![NodeId(7)]);
    }

    #[test]
    fn affine_detection() {
        assert!((2.0 * Expr::x(0) - Expr::x(1) / 4.0 + 1.0).is_affine());
        assert!(!(Expr::x(0) * Expr::x(1)).is_affine());
        assert!((Expr::x(0) * 3.0).is_affine());
    }
}
