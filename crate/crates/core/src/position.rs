//! Positions (subgraphs of a host) and located graphs.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::graph::{EdgeId, NodeId, PortGraph};

/// A subgraph of some host graph, given by node and edge ids. Every edge's
/// endpoints belong to `nodes`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub nodes: BTreeSet<NodeId>,
    #[serde(default)]
    pub edges: BTreeSet<EdgeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOp {
    Union,
    Intersection,
    Minus,
}

impl Position {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn whole(host: &PortGraph) -> Self {
        Position {
            nodes: host.node_ids().collect(),
            edges: host.edge_ids().collect(),
        }
    }

    /// The given nodes plus every host edge between two of them.
    pub fn induced(host: &PortGraph, nodes: BTreeSet<NodeId>) -> Self {
        let edges = host
            .edges()
            .filter(|(_, e)| e.ends().iter().all(|end| nodes.contains(&end.node)))
            .map(|(id, _)| id)
            .collect();
        Position { nodes, edges }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    pub fn check(&self, host: &PortGraph) -> Result<(), GraphError> {
        for n in &self.nodes {
            if !host.contains_node(*n) {
                return Err(GraphError::PositionOutsideHost(format!("node {n}")));
            }
        }
        for e in &self.edges {
            let edge = host
                .edge(*e)
                .ok_or_else(|| GraphError::PositionOutsideHost(format!("edge {e}")))?;
            if edge.ends().iter().any(|end| !self.nodes.contains(&end.node)) {
                return Err(GraphError::PositionOutsideHost(format!(
                    "edge {e} leaves the position's nodes"
                )));
            }
        }
        Ok(())
    }

    pub fn is_valid_in(&self, host: &PortGraph) -> bool {
        self.check(host).is_ok()
    }

    pub fn union(&self, other: &Position) -> Position {
        Position {
            nodes: self.nodes.union(&other.nodes).copied().collect(),
            edges: self.edges.union(&other.edges).copied().collect(),
        }
    }

    pub fn intersection(&self, other: &Position) -> Position {
        Position {
            nodes: self.nodes.intersection(&other.nodes).copied().collect(),
            edges: self.edges.intersection(&other.edges).copied().collect(),
        }
    }

    /// Nodes of `self` not in `other`, and the edges of `self` that are
    /// neither in `other` nor touch one of its nodes.
    pub fn minus(&self, other: &Position, host: &PortGraph) -> Position {
        let nodes: BTreeSet<NodeId> = self.nodes.difference(&other.nodes).copied().collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| !other.edges.contains(e))
            .filter(|e| {
                host.edge(**e)
                    .is_some_and(|edge| edge.ends().iter().all(|end| nodes.contains(&end.node)))
            })
            .copied()
            .collect();
        Position { nodes, edges }
    }

    /// Host nodes outside `self`, with the host edges among them that are not
    /// in `self`.
    pub fn complement(&self, host: &PortGraph) -> Position {
        Position::whole(host).minus(self, host)
    }
}

/// Applies a binary set operator to two positions of the same host.
pub fn position_op(a: &Position, b: &Position, op: SetOp, host: &PortGraph) -> Result<Position, GraphError> {
    a.check(host)?;
    b.check(host)?;
    Ok(match op {
        SetOp::Union => a.union(b),
        SetOp::Intersection => a.intersection(b),
        SetOp::Minus => a.minus(b, host),
    })
}

pub fn position_complement(a: &Position, host: &PortGraph) -> Result<Position, GraphError> {
    a.check(host)?;
    Ok(a.complement(host))
}

/// A graph together with the position where rewriting is focused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedGraph {
    pub graph: Arc<PortGraph>,
    pub position: Position,
}

impl LocatedGraph {
    /// Located graph focused on the whole graph.
    pub fn whole(graph: PortGraph) -> Self {
        let position = Position::whole(&graph);
        LocatedGraph {
            graph: Arc::new(graph),
            position,
        }
    }

    pub fn new(graph: PortGraph, position: Position) -> Result<Self, GraphError> {
        position.check(&graph)?;
        Ok(LocatedGraph {
            graph: Arc::new(graph),
            position,
        })
    }

    pub fn with_position(&self, position: Position) -> Self {
        LocatedGraph {
            graph: Arc::clone(&self.graph),
            position,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::{NodeDecl, PSignature};

    fn chain() -> (PortGraph, [NodeId; 3]) {
        let sig = PSignature::new().declare("v", NodeDecl::new(["l", "r"]));
        let mut g = PortGraph::new();
        let x = g.add_node(&sig, "v").unwrap();
        let y = g.add_node(&sig, "v").unwrap();
        let z = g.add_node(&sig, "v").unwrap();
        g.connect((x, "r"), (y, "l")).unwrap();
        g.connect((y, "r"), (z, "l")).unwrap();
        (g, [x, y, z])
    }

    #[test]
    fn identities() {
        let (g, [x, y, _]) = chain();
        let p = Position::induced(&g, [x, y].into());
        assert_eq!(position_op(&p, &Position::empty(), SetOp::Union, &g).unwrap(), p);
        assert!(Position::whole(&g).complement(&g).is_empty());
        assert!(position_op(&p, &p, SetOp::Minus, &g).unwrap().is_empty());
    }

    #[test]
    fn foreign_position_is_rejected() {
        let (g, _) = chain();
        let bogus = Position {
            nodes: [NodeId(99)].into(),
            edges: BTreeSet::new(),
        };
        assert!(position_op(&bogus, &Position::empty(), SetOp::Union, &g).is_err());
        assert!(position_complement(&bogus, &g).is_err());
    }

    #[test]
    fn complement_keeps_subgraph_shape() {
        let (g, [x, _, _]) = chain();
        let p = Position::induced(&g, [x].into());
        let c = p.complement(&g);
        assert_eq!(c.nodes.len(), 2);
        assert_eq!(c.edges.len(), 1);
        assert!(c.is_valid_in(&g));
    }
}
