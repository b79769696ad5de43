//! Plan-verify-execute retrieval over typed knowledge graphs.
//!
//! A question is answered in three separate stages:
//!
//! 1. a language model writes a complete traversal plan in one call
//!    ([`planner`]),
//! 2. the plan is checked against the graph schema and the action catalog
//!    before anything touches instance data ([`verifier`]); rejected plans
//!    are sent back with only the failing findings as feedback,
//! 3. the verified plan runs step by step over the graph ([`executor`]) and
//!    the last step's nodes become the context for one answer call.
//!
//! The crate is `no_std` with `alloc`. Everything that needs the operating
//! system (files, sockets, threads, clocks) is injected through the traits in
//! [`model`] and [`similarity`].

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod actions;
pub mod eval;
pub mod executor;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod plan;
pub mod planner;
pub mod similarity;
pub mod verifier;

pub use actions::{NodeFindingHint, NodeSet, TraversalParam};
pub use graph::{Edge, EdgeTypeRecord, GraphSchema, KnowledgeGraph, Node, NodeId};
pub use plan::{PlanStep, StepKind, StepRef, TraversalPlan};
pub use verifier::{VerificationReport, Verdict};

/// Names of the traversal actions the executor understands.
pub const ACTION_CATALOG: [&str; 3] = [
    actions::FIND_NODE,
    actions::FETCH_NEIGHBORS,
    actions::FIND_COMMON_NODES,
];
