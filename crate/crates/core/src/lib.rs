//! Graph-structured nonlinear optimization.
//!
//! Models are [`graph::OptiGraph`]s: nodes own variables, constraints and
//! objective terms; link constraints couple nodes. A graph flattens to a
//! standard-form [`graph::FlatNlp`] that the interior-point solver in [`ipm`]
//! consumes, solving its KKT systems either monolithically or by Schur
//! complement decomposition over node blocks ([`kkt`]).

pub mod ad;
pub mod expr;
pub mod graph;
pub mod ipm;
pub mod kkt;
pub mod linsolve;
pub mod modelfile;
pub mod models;

pub use expr::{Expr, NodeId, VariableRef};
