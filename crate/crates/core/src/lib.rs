//! Port-graph rewriting: graphs with named ports, rewrite rules with arrow
//! wiring, a strategy language steering rule application, and a derivation
//! tree recording every run.

pub mod akap;
pub mod derivation;
pub mod doc;
pub mod error;
pub mod graph;
pub mod matcher;
pub mod model;
pub mod position;
pub mod rule;
pub mod signature;
pub mod strategy;

pub use error::{FormatError, GraphError, MatchError, RewriteError};
pub use graph::{Connectivity, Edge, EdgeId, Node, NodeId, Port, PortGraph, PortRef, Violation};
pub use matcher::{count_matches, find_disjoint_tuples, find_matches, nth_match, MatchRequest, MatchSet, Morphism};
pub use position::{LocatedGraph, Position, SetOp};
pub use rule::{RewriteResult, RewriteRule, WireTarget, Wiring};
pub use signature::{NodeDecl, PSignature};
