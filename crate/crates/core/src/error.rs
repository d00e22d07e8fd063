use thiserror::Error;

use crate::graph::{EdgeId, NodeId, PortRef, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("undeclared node name {0}")]
    UndeclaredName(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown port {0}")]
    UnknownPort(PortRef),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(EdgeId),
    #[error("attribute value {value} not allowed on {port}")]
    AttrNotAllowed { port: PortRef, value: String },
    #[error("position is not a subgraph of the host: {0}")]
    PositionOutsideHost(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("rule LHS must be non-empty")]
    EmptyPattern,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewriteError {
    #[error("stale morphism: {0}")]
    StaleMorphism(String),
    #[error("morphism image does not meet the current position")]
    OutsidePosition,
    #[error("parallel steps {0} and {1} overlap or touch")]
    NotDisjoint(usize, usize),
    #[error("rule {rule} is ill-formed: {violations:?}")]
    IllFormedRule { rule: String, violations: Vec<Violation> },
    #[error("rewrite produced an ill-formed graph: {0:?}")]
    IllFormedResult(Vec<Violation>),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A document (model bundle, rule file, tree) could not be read.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
}

impl FormatError {
    pub fn invalid(location: impl Into<String>, message: impl Into<String>) -> Self {
        FormatError::Invalid {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        FormatError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// A strategy text could not be parsed or refers to an unknown rule.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("budget exhausted: more than {0} steps")]
    BudgetExhausted(u64),
    #[error("deep search budget exhausted: more than {0} reruns")]
    DeepBudgetExhausted(u64),
    #[error("unknown rule {0}")]
    UnknownRule(String),
    #[error("not running")]
    NotRunning,
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("unknown tree node {0}")]
    UnknownNode(u64),
    #[error("tree node {0} is a failure leaf")]
    FailureNode(u64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Running a strategy from a tree node failed before anything was recorded.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
