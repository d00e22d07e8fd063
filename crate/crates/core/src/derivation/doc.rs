//! Tree documents. Node states are stored in full every few levels and as
//! deltas against the parent state in between.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::doc::{EndDoc, GraphDoc, NodeDoc};
use crate::error::FormatError;
use crate::graph::{Edge, EdgeId, NodeId, PortGraph, PortRef};
use crate::position::{LocatedGraph, Position};

use super::{DerivationTree, NodeStatus, TreeEdge, TreeNode, TreeNodeId};

pub const DEFAULT_SNAPSHOT_EVERY: usize = 16;

fn default_snapshot_every() -> usize {
    DEFAULT_SNAPSHOT_EVERY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDoc {
    pub root: TreeNodeId,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    pub nodes: Vec<TreeNodeDoc>,
    #[serde(default)]
    pub edges: Vec<TreeEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeNodeDoc {
    pub id: TreeNodeId,
    pub label: String,
    pub status: NodeStatus,
    /// Absent when the position is the whole graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    pub state: StateDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateDoc {
    Delta(DeltaDoc),
    Full(GraphDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaDoc {
    pub delta_of: TreeNodeId,
    pub ops: Vec<DeltaOp>,
}

/// Applied in order: removals first, then node writes, then new edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaOp {
    RemoveEdge { id: u64 },
    RemoveNode { id: u64 },
    PutNode { node: NodeDoc },
    AddEdge { id: u64, ends: [EndDoc; 2] },
    Counters { next_node: u64, next_edge: u64 },
}

fn delta(from: &PortGraph, to: &PortGraph) -> Vec<DeltaOp> {
    let mut ops = Vec::new();
    for (id, e) in from.edges() {
        if to.edge(id) != Some(e) {
            ops.push(DeltaOp::RemoveEdge { id: id.0 });
        }
    }
    for (id, _) in from.nodes() {
        if !to.contains_node(id) {
            ops.push(DeltaOp::RemoveNode { id: id.0 });
        }
    }
    for (id, n) in to.nodes() {
        if from.node(id) != Some(n) {
            ops.push(DeltaOp::PutNode {
                node: NodeDoc::from_node(id, n),
            });
        }
    }
    for (id, e) in to.edges() {
        if from.edge(id) != Some(e) {
            let [a, b] = e.ends();
            ops.push(DeltaOp::AddEdge {
                id: id.0,
                ends: [(a.node.0, a.port.clone()), (b.node.0, b.port.clone())],
            });
        }
    }
    ops.push(DeltaOp::Counters {
        next_node: to.next_node_id(),
        next_edge: to.next_edge_id(),
    });
    ops
}

fn apply_delta(base: &PortGraph, ops: &[DeltaOp], location: &str) -> Result<PortGraph, FormatError> {
    let mut g = base.clone();
    for (j, op) in ops.iter().enumerate() {
        let at = || format!("{location}.ops[{j}]");
        match op {
            DeltaOp::RemoveEdge { id } => {
                g.remove_edge(EdgeId(*id))
                    .ok_or_else(|| FormatError::invalid(at(), format!("no edge {id} to remove")))?;
            }
            DeltaOp::RemoveNode { id } => {
                g.remove_node(NodeId(*id))
                    .ok_or_else(|| FormatError::invalid(at(), format!("no node {id} to remove")))?;
            }
            DeltaOp::PutNode { node } => {
                let id = NodeId(node.id);
                let n = node.to_node(&at())?;
                match g.node_mut(id) {
                    Some(slot) => *slot = n,
                    None => g
                        .insert_node_with_id(id, n)
                        .map_err(|e| FormatError::invalid(at(), e.to_string()))?,
                }
            }
            DeltaOp::AddEdge { id, ends: [a, b] } => {
                let edge = Edge::new(PortRef::new(NodeId(a.0), &a.1), PortRef::new(NodeId(b.0), &b.1));
                g.insert_edge_with_id(EdgeId(*id), edge)
                    .map_err(|e| FormatError::invalid(at(), e.to_string()))?;
            }
            DeltaOp::Counters { next_node, next_edge } => g.set_counters(*next_node, *next_edge),
        }
    }
    Ok(g)
}

impl DerivationTree {
    pub fn export(&self) -> TreeDoc {
        let every = self.snapshot_every.max(1);
        let mut depth: BTreeMap<TreeNodeId, usize> = BTreeMap::new();
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for n in self.nodes.values() {
            let d = self.depth(n.id).unwrap_or(0);
            depth.insert(n.id, d);
            let graph = &n.state.graph;
            let state = match n.parent {
                Some(p) if !d.is_multiple_of(every) => StateDoc::Delta(DeltaDoc {
                    delta_of: p,
                    ops: delta(&self.nodes[&p].state.graph, graph),
                }),
                _ => StateDoc::Full(GraphDoc::from_graph(graph, true)),
            };
            let whole = Position::whole(graph);
            nodes.push(TreeNodeDoc {
                id: n.id,
                label: n.label.clone(),
                status: n.status,
                position: (n.state.position != whole).then(|| n.state.position.clone()),
                state,
            });
        }
        TreeDoc {
            root: self.root,
            snapshot_every: self.snapshot_every,
            nodes,
            edges: self.edges.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        crate::doc::to_json(&self.export())
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        Self::import(&crate::doc::from_json::<TreeDoc>(text)?)
    }

    pub fn import(doc: &TreeDoc) -> Result<Self, FormatError> {
        let mut index: BTreeMap<TreeNodeId, usize> = BTreeMap::new();
        for (i, n) in doc.nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(FormatError::invalid(format!("nodes[{i}].id"), format!("duplicate node id {}", n.id)));
            }
        }
        if !index.contains_key(&doc.root) {
            return Err(FormatError::invalid("root", format!("unknown node {}", doc.root)));
        }

        // States, following delta chains down to a full snapshot.
        let mut graphs: Vec<Option<Arc<PortGraph>>> = vec![None; doc.nodes.len()];
        for start in 0..doc.nodes.len() {
            let mut chain = Vec::new();
            let mut cur = start;
            let base = loop {
                if let Some(g) = &graphs[cur] {
                    break Arc::clone(g);
                }
                match &doc.nodes[cur].state {
                    StateDoc::Full(g) => {
                        let g = Arc::new(g.to_graph(&format!("nodes[{cur}].state"))?);
                        graphs[cur] = Some(Arc::clone(&g));
                        break g;
                    }
                    StateDoc::Delta(d) => {
                        if chain.contains(&cur) {
                            return Err(FormatError::invalid(
                                format!("nodes[{cur}].state.delta_of"),
                                "delta chain forms a cycle",
                            ));
                        }
                        chain.push(cur);
                        cur = *index.get(&d.delta_of).ok_or_else(|| {
                            FormatError::invalid(
                                format!("nodes[{cur}].state.delta_of"),
                                format!("unknown node {}", d.delta_of),
                            )
                        })?;
                    }
                }
            };
            let mut g = base;
            for &i in chain.iter().rev() {
                let StateDoc::Delta(d) = &doc.nodes[i].state else { unreachable!() };
                g = Arc::new(apply_delta(&g, &d.ops, &format!("nodes[{i}].state"))?);
                graphs[i] = Some(Arc::clone(&g));
            }
        }

        // Parents from rule edges.
        let mut parent: BTreeMap<TreeNodeId, TreeNodeId> = BTreeMap::new();
        let mut children: BTreeMap<TreeNodeId, Vec<TreeNodeId>> = BTreeMap::new();
        for (i, e) in doc.edges.iter().enumerate() {
            for end in [e.from(), e.to()] {
                if !index.contains_key(&end) {
                    return Err(FormatError::invalid(format!("edges[{i}]"), format!("unknown node {end}")));
                }
            }
            if let TreeEdge::Rule { from, to, .. } = e {
                if *to == doc.root || parent.insert(*to, *from).is_some() {
                    return Err(FormatError::invalid(
                        format!("edges[{i}]"),
                        format!("node {to} has more than one parent"),
                    ));
                }
                if doc.nodes[index[from]].status == NodeStatus::Failure {
                    return Err(FormatError::invalid(
                        format!("edges[{i}]"),
                        format!("failure node {from} has a child"),
                    ));
                }
                children.entry(*from).or_default().push(*to);
            }
        }
        for (i, n) in doc.nodes.iter().enumerate() {
            if n.id != doc.root && !parent.contains_key(&n.id) {
                return Err(FormatError::invalid(format!("nodes[{i}]"), format!("node {} has no parent", n.id)));
            }
            let mut seen = BTreeSet::new();
            let mut cur = n.id;
            while let Some(p) = parent.get(&cur) {
                if !seen.insert(cur) {
                    return Err(FormatError::invalid(format!("nodes[{i}]"), "rule edges form a cycle"));
                }
                cur = *p;
            }
        }
        let ancestors = |id: TreeNodeId| -> BTreeSet<TreeNodeId> {
            let mut out = BTreeSet::from([id]);
            let mut cur = id;
            while let Some(p) = parent.get(&cur) {
                out.insert(*p);
                cur = *p;
            }
            out
        };
        for (i, e) in doc.edges.iter().enumerate() {
            if let TreeEdge::Span { from, to, .. } = e {
                if !ancestors(*to).contains(from) {
                    return Err(FormatError::invalid(
                        format!("edges[{i}]"),
                        "span must run from an ancestor to a descendant",
                    ));
                }
            }
        }

        let mut nodes = BTreeMap::new();
        for (i, n) in doc.nodes.iter().enumerate() {
            let graph = graphs[i].clone().expect("every state resolved");
            let position = match &n.position {
                None => Position::whole(&graph),
                Some(p) => {
                    p.check(&graph)
                        .map_err(|e| FormatError::invalid(format!("nodes[{i}].position"), e.to_string()))?;
                    p.clone()
                }
            };
            nodes.insert(
                n.id,
                TreeNode {
                    id: n.id,
                    label: n.label.clone(),
                    status: n.status,
                    state: LocatedGraph { graph, position },
                    parent: parent.get(&n.id).copied(),
                },
            );
        }
        Ok(DerivationTree {
            next_id: nodes.keys().next_back().map_or(0, |id| id + 1),
            nodes,
            children,
            edges: doc.edges.clone(),
            root: doc.root,
            snapshot_every: doc.snapshot_every,
        })
    }
}
