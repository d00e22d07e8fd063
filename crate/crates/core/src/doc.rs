//! JSON documents: signatures, graphs, rules and model bundles.
//!
//! Graph edges are written either as a bare pair of ends,
//! `[[1,"s"],[2,"camp"]]`, or with an explicit id,
//! `{"id":4,"ends":[[1,"s"],[2,"camp"]]}`. Bare pairs receive fresh ids in
//! document order after all explicit ids are placed.

use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::graph::{Connectivity, Edge, EdgeId, Node, NodeId, Port, PortGraph, PortRef};
use crate::position::Position;
use crate::rule::{RewriteRule, WireTarget, Wiring};
use crate::signature::{NodeDecl, PSignature};

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    Ok(serde_json::from_str(text)?)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("documents serialise")
}

// ---------------------------------------------------------------------------
// signature

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureDoc {
    pub nodes: BTreeMap<String, NodeDeclDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub node_vars: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub port_vars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDeclDoc {
    pub ports: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_port: Option<String>,
}

impl SignatureDoc {
    pub fn from_signature(sig: &PSignature) -> Self {
        SignatureDoc {
            nodes: sig
                .nodes
                .iter()
                .map(|(name, d)| {
                    let doc = NodeDeclDoc {
                        ports: d.interface.iter().cloned().collect(),
                        attrs: d
                            .attr_schema
                            .iter()
                            .map(|(p, vs)| (p.clone(), vs.iter().cloned().collect()))
                            .collect(),
                        next_port: d.next_port.clone(),
                    };
                    (name.clone(), doc)
                })
                .collect(),
            node_vars: sig.node_vars.iter().cloned().collect(),
            port_vars: sig.port_vars.iter().cloned().collect(),
        }
    }

    pub fn to_signature(&self) -> Result<PSignature, FormatError> {
        let mut sig = PSignature::new();
        for (name, d) in &self.nodes {
            let mut interface = BTreeSet::new();
            for p in &d.ports {
                if !interface.insert(p.clone()) {
                    return Err(FormatError::invalid(
                        format!("signature.nodes.{name}"),
                        format!("port {p} declared twice"),
                    ));
                }
            }
            let decl = NodeDecl {
                interface,
                attr_schema: d
                    .attrs
                    .iter()
                    .map(|(p, vs)| (p.clone(), vs.iter().cloned().collect()))
                    .collect(),
                next_port: d.next_port.clone(),
            };
            sig.nodes.insert(name.clone(), decl);
        }
        sig.node_vars = self.node_vars.iter().cloned().collect();
        sig.port_vars = self.port_vars.iter().cloned().collect();
        if let Some(v) = sig.check().into_iter().next() {
            return Err(FormatError::invalid("signature", v.to_string()));
        }
        Ok(sig)
    }
}

// ---------------------------------------------------------------------------
// graph

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_node_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_edge_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: u64,
    pub name: String,
    #[serde(default)]
    pub ports: Vec<PortDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "is_strict")]
    pub mode: Connectivity,
}

impl NodeDoc {
    pub fn from_node(id: NodeId, n: &Node) -> Self {
        NodeDoc {
            id: id.0,
            name: n.name.clone(),
            ports: n
                .ports
                .iter()
                .map(|(name, p)| PortDoc {
                    name: name.clone(),
                    attrs: p.attrs.clone(),
                    mode: p.mode,
                })
                .collect(),
        }
    }

    pub fn to_node(&self, location: &str) -> Result<Node, FormatError> {
        let mut node = Node::new(&self.name);
        for p in &self.ports {
            let port = Port {
                attrs: p.attrs.clone(),
                mode: p.mode,
            };
            if node.ports.insert(p.name.clone(), port).is_some() {
                return Err(FormatError::invalid(location, format!("port {} listed twice", p.name)));
            }
        }
        Ok(node)
    }
}

fn is_strict(m: &Connectivity) -> bool {
    *m == Connectivity::Strict
}

pub type EndDoc = (u64, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeDoc {
    Pair([EndDoc; 2]),
    WithId { id: u64, ends: [EndDoc; 2] },
}

impl GraphDoc {
    /// With `ids`, edges carry their ids and the fresh-id counters are
    /// written, so that reading the document back restores the graph exactly.
    pub fn from_graph(g: &PortGraph, ids: bool) -> Self {
        let nodes = g.nodes().map(|(id, n)| NodeDoc::from_node(id, n)).collect();
        let edges = g
            .edges()
            .map(|(id, e)| {
                let [a, b] = e.ends();
                let ends = [(a.node.0, a.port.clone()), (b.node.0, b.port.clone())];
                if ids {
                    EdgeDoc::WithId { id: id.0, ends }
                } else {
                    EdgeDoc::Pair(ends)
                }
            })
            .collect();
        GraphDoc {
            nodes,
            edges,
            next_node_id: ids.then(|| g.next_node_id()),
            next_edge_id: ids.then(|| g.next_edge_id()),
        }
    }

    /// Builds the graph. Conformance to a signature is checked separately.
    pub fn to_graph(&self, location: &str) -> Result<PortGraph, FormatError> {
        let mut g = PortGraph::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let at = format!("{location}.nodes[{i}]");
            let node = n.to_node(&at)?;
            g.insert_node_with_id(NodeId(n.id), node)
                .map_err(|e| FormatError::invalid(at, e.to_string()))?;
        }
        let end = |(n, p): &EndDoc| PortRef::new(NodeId(*n), p);
        for (i, e) in self.edges.iter().enumerate() {
            if let EdgeDoc::WithId { id, ends: [a, b] } = e {
                g.insert_edge_with_id(EdgeId(*id), Edge::new(end(a), end(b)))
                    .map_err(|err| FormatError::invalid(format!("{location}.edges[{i}]"), err.to_string()))?;
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if let EdgeDoc::Pair([a, b]) = e {
                g.connect((NodeId(a.0), &a.1), (NodeId(b.0), &b.1))
                    .map_err(|err| FormatError::invalid(format!("{location}.edges[{i}]"), err.to_string()))?;
            }
        }
        g.set_counters(
            self.next_node_id.unwrap_or(0),
            self.next_edge_id.unwrap_or(0),
        );
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// rules

/// `["L", node, port]` or `["R", node, port]`.
pub type SideEndDoc = (String, u64, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireTargetDoc {
    Port(SideEndDoc),
    /// The literal `"bh"`.
    BlackHole(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub lhs: GraphDoc,
    pub rhs: GraphDoc,
    pub wiring: Vec<(SideEndDoc, WireTargetDoc)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_position: Option<Position>,
}

pub const BLACK_HOLE: &str = "bh";

impl RuleDoc {
    pub fn from_rule(rule: &RewriteRule) -> Self {
        let mut wiring = Vec::new();
        for (src, targets) in &rule.wiring {
            for t in targets {
                let s = ("L".to_string(), src.node.0, src.port.clone());
                let t = match t {
                    WireTarget::BlackHole => WireTargetDoc::BlackHole(BLACK_HOLE.to_string()),
                    WireTarget::Port(p) => WireTargetDoc::Port(("R".to_string(), p.node.0, p.port.clone())),
                };
                wiring.push((s, t));
            }
        }
        RuleDoc {
            name: rule.name.clone(),
            description: rule.description.clone(),
            lhs: GraphDoc::from_graph(&rule.lhs, false),
            rhs: GraphDoc::from_graph(&rule.rhs, false),
            wiring,
            result_position: rule.result_position.clone(),
        }
    }

    /// Builds the rule. Its invariants are checked separately by
    /// [`crate::rule::check_rule`].
    pub fn to_rule(&self, location: &str) -> Result<RewriteRule, FormatError> {
        let lhs = self.lhs.to_graph(&format!("{location}.lhs"))?;
        let rhs = self.rhs.to_graph(&format!("{location}.rhs"))?;
        let mut wiring = Wiring::new();
        for (i, (src, target)) in self.wiring.iter().enumerate() {
            let at = format!("{location}.wiring[{i}]");
            if src.0 != "L" {
                return Err(FormatError::invalid(at, "wiring source must be an \"L\" port"));
            }
            let t = match target {
                WireTargetDoc::BlackHole(s) if s == BLACK_HOLE => WireTarget::BlackHole,
                WireTargetDoc::BlackHole(s) => {
                    return Err(FormatError::invalid(at, format!("unknown wiring target {s:?}")))
                }
                WireTargetDoc::Port((side, n, p)) if side == "R" => WireTarget::Port(PortRef::new(NodeId(*n), p)),
                WireTargetDoc::Port(_) => {
                    return Err(FormatError::invalid(at, "wiring target must be an \"R\" port or \"bh\""))
                }
            };
            wiring.entry(PortRef::new(NodeId(src.1), &src.2)).or_default().insert(t);
        }
        let mut rule = RewriteRule::new(&self.name, lhs, rhs, wiring);
        rule.result_position = self.result_position.clone();
        rule.description = self.description.clone();
        Ok(rule)
    }
}

// ---------------------------------------------------------------------------
// bundle

/// A model: signature, initial graph and optionally its rules and initial
/// position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleDoc {
    pub signature: SignatureDoc,
    pub graph: GraphDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleDoc>,
}
