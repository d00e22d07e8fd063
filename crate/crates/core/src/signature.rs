//! Port signatures: which node names exist, which ports each one carries,
//! and which attribute values those ports may hold.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::Violation;

/// Declaration of one node name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeDecl {
    pub interface: BTreeSet<String>,
    /// Allowed attribute values per port. A port without an entry carries no
    /// attributes.
    pub attr_schema: BTreeMap<String, BTreeSet<String>>,
    /// Port followed by the `nextSuc` focusing construct.
    pub next_port: Option<String>,
}

impl NodeDecl {
    pub fn new<I, S>(ports: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        NodeDecl {
            interface: ports.into_iter().map(Into::into).collect(),
            ..NodeDecl::default()
        }
    }

    pub fn with_attr<I, S>(mut self, port: &str, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.attr_schema
            .insert(port.to_string(), values.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_next_port(mut self, port: &str) -> Self {
        self.next_port = Some(port.to_string());
        self
    }
}

/// A p-signature. Variable node and port names are declared like constants
/// and additionally flagged in `node_vars` / `port_vars`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PSignature {
    pub nodes: BTreeMap<String, NodeDecl>,
    pub node_vars: BTreeSet<String>,
    pub port_vars: BTreeSet<String>,
}

impl PSignature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(mut self, name: &str, decl: NodeDecl) -> Self {
        self.nodes.insert(name.to_string(), decl);
        self
    }

    pub fn decl(&self, name: &str) -> Option<&NodeDecl> {
        self.nodes.get(name)
    }

    pub fn is_declared(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }

    pub fn is_node_var(&self, name: &str) -> bool {
        self.node_vars.contains(name)
    }

    pub fn is_port_var(&self, name: &str) -> bool {
        self.port_vars.contains(name)
    }

    /// Checks the signature's own invariants. Duplicate interface entries are
    /// caught when a signature is read from a document.
    pub fn check(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, decl) in &self.nodes {
            for port in decl.attr_schema.keys() {
                if !decl.interface.contains(port) {
                    out.push(Violation::new(
                        format!("signature {name}"),
                        format!("attribute schema port {port} ∉ Interface({name})"),
                    ));
                }
            }
            if let Some(next) = &decl.next_port {
                if !decl.interface.contains(next) {
                    out.push(Violation::new(
                        format!("signature {name}"),
                        format!("next port {next} ∉ Interface({name})"),
                    ));
                }
            }
        }
        for var in &self.node_vars {
            if !self.nodes.contains_key(var) {
                out.push(Violation::new(
                    format!("signature {var}"),
                    "node variable has no interface declaration".to_string(),
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_outside_interface_is_reported() {
        let sig = PSignature::new().declare(
            "A",
            NodeDecl::new(["a"]).with_attr("b", ["+"]).with_next_port("c"),
        );
        let v = sig.check();
        assert_eq!(v.len(), 2);
        assert!(v[0].message.contains("b ∉ Interface(A)"));
        assert!(v[1].message.contains("c ∉ Interface(A)"));
    }

    #[test]
    fn undeclared_variable() {
        let mut sig = PSignature::new();
        sig.node_vars.insert("X".into());
        assert_eq!(sig.check().len(), 1);
    }
}
