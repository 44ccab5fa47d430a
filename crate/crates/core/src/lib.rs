//! Recursive Bayesian filtering over multi-hypergraph states.
//!
//! System states are labelled multi-hypergraphs ([`graph`]), dynamics are graph
//! rewriting rules ([`rewrite`]), and beliefs are weighted collections of lifted
//! multi-hypergraphs ([`lifted`]), each of which stands for a uniform
//! distribution over many ground states. [`filter`] runs prediction and update
//! directly on lifted states; [`oracle`] is the fully grounded reference filter.

pub mod canon;
pub mod domain;
pub mod filter;
pub mod graph;
pub mod lifted;
pub mod oracle;
pub mod rewrite;

pub use canon::{canonical_form, is_isomorphic, CanonicalForm};
pub use domain::{AnnotationTuple, Domain};
pub use filter::{filter_trace, Belief, FilterError, FilterOptions, StepStats};
pub use graph::{Conservation, GraphError, Hyperedge, Label, MultiHypergraph, Vertex, VertexId};
pub use lifted::{BoundedEdge, LiftedError, LiftedMultiHypergraph, TotalConstraint};
pub use rewrite::{Effect, LiftedEffect, Pattern, RewriteError, Rule};
