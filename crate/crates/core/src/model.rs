//! A loaded model: signature, rule set and initial located graph.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::doc::{BundleDoc, GraphDoc, RuleDoc, SignatureDoc};
use crate::error::FormatError;
use crate::graph::PortGraph;
use crate::position::{LocatedGraph, Position};
use crate::rule::{check_rule, RewriteRule};
use crate::signature::PSignature;

/// Rules in declaration order, addressable by name.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<Arc<RewriteRule>>,
    by_name: BTreeMap<String, usize>,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a rule; a rule with the same name is an error.
    pub fn insert(&mut self, rule: RewriteRule) -> Result<(), String> {
        if self.by_name.contains_key(&rule.name) {
            return Err(format!("rule {} defined twice", rule.name));
        }
        self.by_name.insert(rule.name.clone(), self.rules.len());
        self.rules.push(Arc::new(rule));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<RewriteRule>> {
        self.by_name.get(name).map(|i| &self.rules[*i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<RewriteRule>> {
        self.rules.iter()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub signature: PSignature,
    pub rules: RuleSet,
    pub initial: LocatedGraph,
}

impl Model {
    /// Checks the initial graph against the signature and every rule for
    /// well-formedness.
    pub fn new(
        signature: PSignature,
        graph: PortGraph,
        position: Option<Position>,
        rules: Vec<RewriteRule>,
    ) -> Result<Self, FormatError> {
        if let Some(v) = signature.check().into_iter().next() {
            return Err(FormatError::invalid("signature", v.to_string()));
        }
        if let Some(v) = graph.validate(&signature).into_iter().next() {
            return Err(FormatError::invalid("graph", v.to_string()));
        }
        let initial = match position {
            None => LocatedGraph::whole(graph),
            Some(p) => LocatedGraph::new(graph, p).map_err(|e| FormatError::invalid("position", e.to_string()))?,
        };
        let mut set = RuleSet::new();
        for (i, rule) in rules.into_iter().enumerate() {
            if let Some(v) = check_rule(&rule, &signature).into_iter().next() {
                return Err(FormatError::invalid(format!("rules[{i}]"), v.to_string()));
            }
            set.insert(rule)
                .map_err(|e| FormatError::invalid(format!("rules[{i}]"), e))?;
        }
        Ok(Model {
            signature,
            rules: set,
            initial,
        })
    }

    /// Reads a bundle; `extra_rules` are appended after the bundled ones.
    pub fn from_docs(bundle: &BundleDoc, extra_rules: &[RuleDoc]) -> Result<Self, FormatError> {
        let signature = bundle.signature.to_signature()?;
        let graph = bundle.graph.to_graph("graph")?;
        let mut rules = Vec::new();
        for (i, r) in bundle.rules.iter().chain(extra_rules).enumerate() {
            rules.push(r.to_rule(&format!("rules[{i}]"))?);
        }
        Model::new(signature, graph, bundle.position.clone(), rules)
    }

    pub fn to_doc(&self) -> BundleDoc {
        let whole = Position::whole(&self.initial.graph);
        let focused = self.initial.position != whole;
        BundleDoc {
            signature: SignatureDoc::from_signature(&self.signature),
            graph: GraphDoc::from_graph(&self.initial.graph, focused),
            position: focused.then(|| self.initial.position.clone()),
            rules: self.rules.iter().map(|r| RuleDoc::from_rule(r)).collect(),
        }
    }
}
