//! Port graphs: nodes with named ports, and an undirected multiset of
//! port-to-port edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::GraphError;
use crate::signature::PSignature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// How a rule-side port constrains the host port it is matched against.
/// Host graphs ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// The host port must carry exactly the edges the pattern shows.
    #[default]
    Strict,
    /// The host port may carry additional edges.
    Wildcard,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Port {
    pub attrs: BTreeMap<String, String>,
    pub mode: Connectivity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub ports: BTreeMap<String, Port>,
}

impl Node {
    pub fn new(name: &str) -> Self {
        Node {
            name: name.to_string(),
            ports: BTreeMap::new(),
        }
    }

    pub fn with_port(mut self, port: &str) -> Self {
        self.ports.insert(port.to_string(), Port::default());
        self
    }

    pub fn attr(&self, port: &str, key: &str) -> Option<&str> {
        self.ports.get(port)?.attrs.get(key).map(String::as_str)
    }
}

/// One end of an edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub node: NodeId,
    pub port: String,
}

impl PortRef {
    pub fn new(node: NodeId, port: &str) -> Self {
        PortRef {
            node,
            port: port.to_string(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

/// Undirected edge; the ends are kept in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    ends: [PortRef; 2],
}

impl Edge {
    pub fn new(a: PortRef, b: PortRef) -> Self {
        if a <= b {
            Edge { ends: [a, b] }
        } else {
            Edge { ends: [b, a] }
        }
    }

    pub fn ends(&self) -> &[PortRef; 2] {
        &self.ends
    }

    /// The pair of port names, i.e. the edge label.
    pub fn label(&self) -> (&str, &str) {
        (&self.ends[0].port, &self.ends[1].port)
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.ends[0].node == node || self.ends[1].node == node
    }

    pub fn is_at(&self, node: NodeId, port: &str) -> bool {
        self.ends.iter().any(|e| e.node == node && e.port == port)
    }

    /// The end opposite `(node, port)`. For a loop on that port this is the
    /// port itself.
    pub fn other_end(&self, node: NodeId, port: &str) -> Option<&PortRef> {
        if self.ends[0].node == node && self.ends[0].port == port {
            Some(&self.ends[1])
        } else if self.ends[1].node == node && self.ends[1].port == port {
            Some(&self.ends[0])
        } else {
            None
        }
    }
}

/// A single well-formedness problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl Violation {
    pub fn new(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PortGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<EdgeId, Edge>,
    next_node: u64,
    next_edge: u64,
}

impl PortGraph {
    pub fn new() -> Self {
        PortGraph {
            next_node: 1,
            ..Default::default()
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().map(|(id, n)| (*id, n))
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().map(|(id, e)| (*id, e))
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.edges.keys().copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn contains_edge(&self, id: EdgeId) -> bool {
        self.edges.contains_key(&id)
    }

    pub fn next_node_id(&self) -> u64 {
        self.next_node
    }

    pub fn next_edge_id(&self) -> u64 {
        self.next_edge
    }

    /// Overrides the fresh-id counters. Values below the current maximum id
    /// are raised so that fresh ids never collide.
    pub fn set_counters(&mut self, next_node: u64, next_edge: u64) {
        let min_node = self.nodes.keys().next_back().map_or(1, |id| id.0 + 1);
        let min_edge = self.edges.keys().next_back().map_or(0, |id| id.0 + 1);
        self.next_node = next_node.max(min_node);
        self.next_edge = next_edge.max(min_edge);
    }

    /// Edges incident to one port, in edge-id order.
    pub fn incident(&self, node: NodeId, port: &str) -> impl Iterator<Item = (EdgeId, &Edge)> + '_ {
        let port = port.to_string();
        self.edges
            .iter()
            .filter(move |(_, e)| e.is_at(node, &port))
            .map(|(id, e)| (*id, e))
    }

    /// Edges incident to any port of `node`.
    pub fn incident_to_node(&self, node: NodeId) -> impl Iterator<Item = (EdgeId, &Edge)> + '_ {
        self.edges
            .iter()
            .filter(move |(_, e)| e.touches(node))
            .map(|(id, e)| (*id, e))
    }

    /// Number of edges at a port; a loop on the port counts once.
    pub fn port_degree(&self, node: NodeId, port: &str) -> usize {
        self.incident(node, port).count()
    }

    /// Number of edges touching the node.
    pub fn node_degree(&self, node: NodeId) -> usize {
        self.incident_to_node(node).count()
    }

    pub fn ids_by_name<'a>(&'a self, name: &'a str) -> impl Iterator<Item = NodeId> + 'a {
        self.nodes
            .iter()
            .filter(move |(_, n)| n.name == name)
            .map(|(id, _)| *id)
    }

    /// Adds a node with the ports its name declares.
    pub fn add_node(&mut self, sig: &PSignature, name: &str) -> Result<NodeId, GraphError> {
        let decl = sig
            .decl(name)
            .ok_or_else(|| GraphError::UndeclaredName(name.to_string()))?;
        let mut node = Node::new(name);
        for port in &decl.interface {
            node.ports.insert(port.clone(), Port::default());
        }
        Ok(self.push_node(node))
    }

    /// Inserts a node under a fresh id without consulting a signature.
    pub(crate) fn push_node(&mut self, node: Node) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(id, node);
        id
    }

    /// Inserts a node under a caller-chosen id. Used when reading documents.
    pub(crate) fn insert_node_with_id(&mut self, id: NodeId, node: Node) -> Result<(), GraphError> {
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.nodes.insert(id, node);
        self.next_node = self.next_node.max(id.0 + 1);
        Ok(())
    }

    pub(crate) fn insert_edge_with_id(&mut self, id: EdgeId, edge: Edge) -> Result<(), GraphError> {
        for end in edge.ends() {
            self.check_port(end)?;
        }
        if self.edges.contains_key(&id) {
            return Err(GraphError::DuplicateEdge(id));
        }
        self.edges.insert(id, edge);
        self.next_edge = self.next_edge.max(id.0 + 1);
        Ok(())
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(&id)
    }

    fn check_port(&self, end: &PortRef) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get(&end.node)
            .ok_or(GraphError::UnknownNode(end.node))?;
        if !node.ports.contains_key(&end.port) {
            return Err(GraphError::UnknownPort(end.clone()));
        }
        Ok(())
    }

    /// Connects two existing ports.
    pub fn connect(&mut self, a: (NodeId, &str), b: (NodeId, &str)) -> Result<EdgeId, GraphError> {
        let a = PortRef::new(a.0, a.1);
        let b = PortRef::new(b.0, b.1);
        self.check_port(&a)?;
        self.check_port(&b)?;
        let id = EdgeId(self.next_edge);
        self.next_edge += 1;
        self.edges.insert(id, Edge::new(a, b));
        Ok(id)
    }

    /// Sets a port attribute, checking the value against the signature.
    pub fn set_attr(
        &mut self,
        sig: &PSignature,
        node: NodeId,
        port: &str,
        key: &str,
        value: &str,
    ) -> Result<(), GraphError> {
        let n = self.nodes.get_mut(&node).ok_or(GraphError::UnknownNode(node))?;
        let allowed = sig
            .decl(&n.name)
            .and_then(|d| d.attr_schema.get(port))
            .ok_or_else(|| GraphError::AttrNotAllowed {
                port: PortRef::new(node, port),
                value: value.to_string(),
            })?;
        if !allowed.contains(value) {
            return Err(GraphError::AttrNotAllowed {
                port: PortRef::new(node, port),
                value: value.to_string(),
            });
        }
        let p = n
            .ports
            .get_mut(port)
            .ok_or_else(|| GraphError::UnknownPort(PortRef::new(node, port)))?;
        p.attrs.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set_mode(&mut self, node: NodeId, port: &str, mode: Connectivity) -> Result<(), GraphError> {
        let p = self
            .nodes
            .get_mut(&node)
            .and_then(|n| n.ports.get_mut(port))
            .ok_or_else(|| GraphError::UnknownPort(PortRef::new(node, port)))?;
        p.mode = mode;
        Ok(())
    }

    pub fn remove_edge(&mut self, id: EdgeId) -> Option<Edge> {
        self.edges.remove(&id)
    }

    /// Removes a node together with every edge touching it.
    pub fn remove_node(&mut self, id: NodeId) -> Option<Node> {
        let node = self.nodes.remove(&id)?;
        self.edges.retain(|_, e| !e.touches(id));
        Some(node)
    }

    pub fn count_by_name(&self, sig: &PSignature, name: &str) -> Result<usize, GraphError> {
        if !sig.is_declared(name) {
            return Err(GraphError::UndeclaredName(name.to_string()));
        }
        Ok(self.nodes.values().filter(|n| n.name == name).count())
    }

    /// Checks the graph against a signature. An empty result means the graph
    /// is well formed.
    pub fn validate(&self, sig: &PSignature) -> Vec<Violation> {
        let mut out = Vec::new();
        for (id, node) in &self.nodes {
            let subject = format!("node {id}");
            let Some(decl) = sig.decl(&node.name) else {
                out.push(Violation::new(subject, format!("undeclared node name {}", node.name)));
                continue;
            };
            for (pname, port) in &node.ports {
                if !decl.interface.contains(pname) {
                    out.push(Violation::new(
                        subject.clone(),
                        format!("port {pname} ∉ Interface({})", node.name),
                    ));
                    continue;
                }
                if port.attrs.is_empty() {
                    continue;
                }
                match decl.attr_schema.get(pname) {
                    None => out.push(Violation::new(
                        subject.clone(),
                        format!("port {pname} of {} carries no attributes", node.name),
                    )),
                    Some(allowed) => {
                        for (key, value) in &port.attrs {
                            if !allowed.contains(value) {
                                out.push(Violation::new(
                                    subject.clone(),
                                    format!("attribute {pname}.{key}={value} not allowed"),
                                ));
                            }
                        }
                    }
                }
            }
            for pname in &decl.interface {
                if !node.ports.contains_key(pname) {
                    out.push(Violation::new(
                        subject.clone(),
                        format!("missing port {pname} of Interface({})", node.name),
                    ));
                }
            }
        }
        for (id, edge) in &self.edges {
            for end in edge.ends() {
                if self.check_port(end).is_err() {
                    out.push(Violation::new(format!("edge {id}"), format!("dangling end {end}")));
                }
            }
        }
        out
    }

    /// Digest of the graph's ids, names, ports, attributes and edge multiset.
    /// Stable across runs; not invariant under renaming node ids.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let mut put = |s: &str| {
            hasher.update((s.len() as u64).to_le_bytes());
            hasher.update(s.as_bytes());
        };
        for (id, node) in &self.nodes {
            put(&format!("n{}", id.0));
            put(&node.name);
            for (pname, port) in &node.ports {
                put(&format!("p{}", port.attrs.len()));
                put(pname);
                for (k, v) in &port.attrs {
                    put(k);
                    put(v);
                }
            }
        }
        let mut edges: Vec<&Edge> = self.edges.values().collect();
        edges.sort();
        for e in edges {
            for end in e.ends() {
                put(&format!("e{}", end.node.0));
                put(&end.port);
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Copy with node ids renumbered 1..=n in ascending order of the old ids
    /// and edges renumbered in sorted-endpoint order.
    pub fn normalized(&self) -> PortGraph {
        let remap: BTreeMap<NodeId, NodeId> = self
            .nodes
            .keys()
            .enumerate()
            .map(|(i, id)| (*id, NodeId(i as u64 + 1)))
            .collect();
        let mut out = PortGraph::new();
        for (id, node) in &self.nodes {
            out.nodes.insert(remap[id], node.clone());
        }
        let mut edges: Vec<Edge> = self
            .edges
            .values()
            .map(|e| {
                let [a, b] = e.ends();
                Edge::new(
                    PortRef::new(remap[&a.node], &a.port),
                    PortRef::new(remap[&b.node], &b.port),
                )
            })
            .collect();
        edges.sort();
        for (i, e) in edges.into_iter().enumerate() {
            out.edges.insert(EdgeId(i as u64), e);
        }
        out.next_node = self.nodes.len() as u64 + 1;
        out.next_edge = self.edges.len() as u64;
        out
    }

    /// Nodes adjacent to `node` through any port.
    pub fn neighbours(&self, node: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        for e in self.edges.values() {
            let [a, b] = e.ends();
            if a.node == node {
                out.insert(b.node);
            }
            if b.node == node {
                out.insert(a.node);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::NodeDecl;

    fn fig1_sig() -> PSignature {
        PSignature::new()
            .declare("A", NodeDecl::new(["a", "b", "c"]))
            .declare("B", NodeDecl::new(["e"]))
            .declare("C", NodeDecl::new(["d"]))
    }

    #[test]
    fn conforming_graph_has_no_violations() {
        let sig = fig1_sig();
        let mut g = PortGraph::new();
        let a1 = g.add_node(&sig, "A").unwrap();
        let a2 = g.add_node(&sig, "A").unwrap();
        let b = g.add_node(&sig, "B").unwrap();
        let c = g.add_node(&sig, "C").unwrap();
        g.connect((a1, "a"), (a2, "b")).unwrap();
        g.connect((a1, "c"), (b, "e")).unwrap();
        g.connect((a2, "c"), (c, "d")).unwrap();
        assert!(g.validate(&sig).is_empty());
        assert!(PortGraph::new().validate(&sig).is_empty());
    }

    #[test]
    fn foreign_port_is_one_violation() {
        let sig = fig1_sig();
        let mut g = PortGraph::new();
        let a = g.add_node(&sig, "A").unwrap();
        g.node_mut(a).unwrap().ports.insert("e".into(), Port::default());
        let v = g.validate(&sig);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "port e ∉ Interface(A)");
        assert_eq!(v[0].subject, format!("node {a}"));
    }

    #[test]
    fn edge_label_is_port_pair() {
        let sig = fig1_sig();
        let mut g = PortGraph::new();
        let a = g.add_node(&sig, "A").unwrap();
        let b = g.add_node(&sig, "B").unwrap();
        let e = g.connect((b, "e"), (a, "a")).unwrap();
        assert_eq!(g.edge(e).unwrap().label(), ("a", "e"));
        assert!(g.connect((a, "zz"), (b, "e")).is_err());
    }

    #[test]
    fn count_by_name_rejects_unknown() {
        let sig = fig1_sig();
        let g = PortGraph::new();
        assert_eq!(g.count_by_name(&sig, "A").unwrap(), 0);
        assert!(matches!(g.count_by_name(&sig, "Q"), Err(GraphError::UndeclaredName(_))));
    }

    #[test]
    fn fingerprint_tracks_attributes() {
        let sig = PSignature::new().declare("P", NodeDecl::new(["s"]).with_attr("s", ["+", "-"]));
        let mut g = PortGraph::new();
        let p = g.add_node(&sig, "P").unwrap();
        g.set_attr(&sig, p, "s", "state", "+").unwrap();
        let copy = g.clone();
        assert_eq!(g.fingerprint(), copy.fingerprint());
        g.set_attr(&sig, p, "s", "state", "-").unwrap();
        assert_ne!(g.fingerprint(), copy.fingerprint());
        assert!(g.set_attr(&sig, p, "s", "state", "x").is_err());
    }

    #[test]
    fn remove_node_drops_incident_edges() {
        let sig = fig1_sig();
        let mut g = PortGraph::new();
        let a = g.add_node(&sig, "A").unwrap();
        let b = g.add_node(&sig, "B").unwrap();
        g.connect((a, "a"), (b, "e")).unwrap();
        g.remove_node(b);
        assert_eq!(g.edge_count(), 0);
        assert!(g.validate(&sig).is_empty());
    }
}
