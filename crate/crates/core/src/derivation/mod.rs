//! Derivation trees: every state reached by running strategies, joined by
//! rule-step edges, with strategy-span edges marking where each run started
//! and ended and failure leaves where a run gave up.

mod doc;

pub use doc::{DeltaDoc, DeltaOp, StateDoc, TreeDoc, TreeNodeDoc, DEFAULT_SNAPSHOT_EVERY};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{BranchError, TreeError};
use crate::model::Model;
use crate::position::{LocatedGraph, Position};
use crate::rule::{apply, apply_parallel, RewriteRule};
use crate::signature::PSignature;
use crate::strategy::{parse_with_rules, run, AppliedRule, EvalConfig, Status, StepEvent};

pub type TreeNodeId = u64;

/// Label of the edge leading to a failure leaf.
pub const FAIL_LABEL: &str = "fail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Ok,
    Failure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: TreeNodeId,
    pub label: String,
    pub status: NodeStatus,
    pub state: LocatedGraph,
    pub parent: Option<TreeNodeId>,
}

/// What happened between a node and its child, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayStep {
    /// One rewriting step; several rules when applied in parallel.
    Apply(Vec<AppliedRule>),
    Focus(Position),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeEdge {
    Rule {
        rule: String,
        from: TreeNodeId,
        to: TreeNodeId,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        steps: Vec<ReplayStep>,
    },
    Span {
        strategy: String,
        from: TreeNodeId,
        to: TreeNodeId,
        result: Status,
    },
}

impl TreeEdge {
    pub fn from(&self) -> TreeNodeId {
        match self {
            TreeEdge::Rule { from, .. } | TreeEdge::Span { from, .. } => *from,
        }
    }

    pub fn to(&self) -> TreeNodeId {
        match self {
            TreeEdge::Rule { to, .. } | TreeEdge::Span { to, .. } => *to,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordOutcome {
    /// Last state reached; the parent itself when nothing was applied.
    pub frontier: TreeNodeId,
    pub status: Status,
    pub new_nodes: Vec<TreeNodeId>,
    pub new_edges: Vec<TreeEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub node: TreeNodeId,
    pub label: String,
    pub step: usize,
    pub value: usize,
}

/// Count of one node name along the path from the root to a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivationTree {
    nodes: BTreeMap<TreeNodeId, TreeNode>,
    children: BTreeMap<TreeNodeId, Vec<TreeNodeId>>,
    edges: Vec<TreeEdge>,
    root: TreeNodeId,
    next_id: TreeNodeId,
    /// Depth interval between full snapshots in exported documents.
    pub snapshot_every: usize,
}

impl DerivationTree {
    pub fn new(initial: LocatedGraph) -> Self {
        let mut t = DerivationTree {
            nodes: BTreeMap::new(),
            children: BTreeMap::new(),
            edges: Vec::new(),
            root: 0,
            next_id: 0,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        };
        t.insert(None, initial, NodeStatus::Ok);
        t
    }

    pub fn root(&self) -> TreeNodeId {
        self.root
    }

    pub fn node(&self, id: TreeNodeId) -> Result<&TreeNode, TreeError> {
        self.nodes.get(&id).ok_or(TreeError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn children(&self, id: TreeNodeId) -> &[TreeNodeId] {
        self.children.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Node ids from the root down to `id`.
    pub fn path(&self, id: TreeNodeId) -> Result<Vec<TreeNodeId>, TreeError> {
        let mut out = vec![id];
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            out.push(p);
            cur = self.node(p)?;
        }
        out.reverse();
        Ok(out)
    }

    pub fn depth(&self, id: TreeNodeId) -> Result<usize, TreeError> {
        Ok(self.path(id)?.len() - 1)
    }

    fn insert(&mut self, parent: Option<TreeNodeId>, state: LocatedGraph, status: NodeStatus) -> TreeNodeId {
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.insert(
            id,
            TreeNode {
                id,
                label: format!("G{id}"),
                status,
                state,
                parent,
            },
        );
        if let Some(p) = parent {
            self.children.entry(p).or_default().push(id);
        }
        id
    }

    /// The node, if it exists and may be extended.
    fn open(&self, id: TreeNodeId) -> Result<&TreeNode, TreeError> {
        let n = self.node(id)?;
        if n.status == NodeStatus::Failure {
            return Err(TreeError::FailureNode(id));
        }
        Ok(n)
    }

    /// Adds the events of one run started at `parent`. Each rewriting step
    /// becomes a child of the previous one, an atomic group becomes a single
    /// child, an outermost loop that ran out of applicable rules and a failed
    /// run each leave a failure leaf, and a span edge joins `parent` to the
    /// last state.
    pub fn record(
        &mut self,
        parent: TreeNodeId,
        strategy: &str,
        events: &[StepEvent],
        status: Status,
    ) -> Result<RecordOutcome, TreeError> {
        self.open(parent)?;
        let first_edge = self.edges.len();
        let mut new_nodes = Vec::new();
        let mut frontier = parent;
        let mut pending: Vec<ReplayStep> = Vec::new();
        let mut depth = 0usize;
        let mut group_names: Vec<String> = Vec::new();
        let mut group_state: Option<LocatedGraph> = None;
        let mut failed_at: Option<TreeNodeId> = None;

        for e in events {
            match e {
                StepEvent::Refocus { state } => pending.push(ReplayStep::Focus(state.position.clone())),
                StepEvent::AtomicBegin => depth += 1,
                StepEvent::Applied { rules, state } if depth == 0 => {
                    pending.push(ReplayStep::Apply(rules.clone()));
                    let label = parallel_label(rules);
                    frontier = self.push_step(frontier, state.clone(), label, std::mem::take(&mut pending));
                    new_nodes.push(frontier);
                }
                StepEvent::Applied { rules, state } => {
                    pending.push(ReplayStep::Apply(rules.clone()));
                    group_names.push(parallel_label(rules));
                    group_state = Some(state.clone());
                }
                StepEvent::AtomicEnd => {
                    depth = depth.saturating_sub(1);
                    if depth > 0 {
                        continue;
                    }
                    if let Some(state) = group_state.take() {
                        let label = format!("<{}>", group_names.join("; "));
                        group_names.clear();
                        frontier = self.push_step(frontier, state, label, std::mem::take(&mut pending));
                        new_nodes.push(frontier);
                    }
                }
                StepEvent::LoopExit { reason, .. } => {
                    if reason.is_failure() && failed_at != Some(frontier) {
                        new_nodes.push(self.push_failure(frontier));
                        failed_at = Some(frontier);
                    }
                }
            }
        }
        if status == Status::Fail && failed_at != Some(frontier) {
            new_nodes.push(self.push_failure(frontier));
        }
        self.edges.push(TreeEdge::Span {
            strategy: strategy.to_string(),
            from: parent,
            to: frontier,
            result: status,
        });
        Ok(RecordOutcome {
            frontier,
            status,
            new_nodes,
            new_edges: self.edges[first_edge..].to_vec(),
        })
    }

    fn push_step(&mut self, from: TreeNodeId, state: LocatedGraph, rule: String, steps: Vec<ReplayStep>) -> TreeNodeId {
        let to = self.insert(Some(from), state, NodeStatus::Ok);
        self.edges.push(TreeEdge::Rule { rule, from, to, steps });
        to
    }

    fn push_failure(&mut self, from: TreeNodeId) -> TreeNodeId {
        let state = self.nodes[&from].state.clone();
        let to = self.insert(Some(from), state, NodeStatus::Failure);
        self.edges.push(TreeEdge::Rule {
            rule: FAIL_LABEL.to_string(),
            from,
            to,
            steps: Vec::new(),
        });
        to
    }

    /// Parses `strategy`, runs it from the state at `node` and records the
    /// run under `node`. The span edge carries the strategy in canonical
    /// form.
    pub fn branch(
        &mut self,
        node: TreeNodeId,
        strategy: &str,
        model: &Model,
        cfg: &EvalConfig,
    ) -> Result<RecordOutcome, BranchError> {
        let start = self.open(node)?.state.clone();
        let s = parse_with_rules(strategy, &model.rules)?;
        let mut events: Vec<StepEvent> = Vec::new();
        let (status, _) = run(&s, &start, model, cfg, &mut events)?;
        Ok(self.record(node, &s.to_string(), &events, status)?)
    }

    pub fn series(&self, node: TreeNodeId, name: &str, sig: &PSignature) -> Result<MetricSeries, TreeError> {
        let mut points = Vec::new();
        for (step, id) in self.path(node)?.into_iter().enumerate() {
            let n = &self.nodes[&id];
            points.push(SeriesPoint {
                node: id,
                label: n.label.clone(),
                step,
                value: n.state.graph.count_by_name(sig, name)?,
            });
        }
        Ok(MetricSeries {
            name: name.to_string(),
            points,
        })
    }

    /// Replays every rule-step edge and checks the structural invariants.
    /// Returns one message per problem found.
    pub fn verify(&self, model: &Model) -> Vec<String> {
        let mut problems = Vec::new();
        let sig = &model.signature;
        let mut incoming: BTreeMap<TreeNodeId, usize> = BTreeMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            let (Some(from), Some(to)) = (self.nodes.get(&e.from()), self.nodes.get(&e.to())) else {
                problems.push(format!("edges[{i}]: endpoint missing"));
                continue;
            };
            match e {
                TreeEdge::Span { .. } => {
                    if !self.path(to.id).is_ok_and(|p| p.contains(&from.id)) {
                        problems.push(format!("edges[{i}]: span does not run from an ancestor"));
                    }
                }
                TreeEdge::Rule { rule, steps, .. } => {
                    *incoming.entry(to.id).or_default() += 1;
                    if to.parent != Some(from.id) {
                        problems.push(format!("edges[{i}]: rule step is not parent to child"));
                    }
                    if from.status == NodeStatus::Failure {
                        problems.push(format!("edges[{i}]: failure node {} has a child", from.label));
                    }
                    let expected = if to.status == NodeStatus::Failure {
                        Ok(from.state.clone())
                    } else {
                        replay(model, &from.state, steps)
                    };
                    match expected {
                        Err(msg) => problems.push(format!("edges[{i}] ({rule}): {msg}")),
                        Ok(st) => {
                            if st.graph.fingerprint() != to.state.graph.fingerprint() {
                                problems.push(format!("edges[{i}] ({rule}): replayed graph differs from {}", to.label));
                            } else if st.position != to.state.position {
                                problems.push(format!("edges[{i}] ({rule}): replayed position differs from {}", to.label));
                            }
                        }
                    }
                }
            }
        }
        for n in self.nodes.values() {
            let count = incoming.get(&n.id).copied().unwrap_or(0);
            let want = usize::from(n.id != self.root);
            if count != want {
                problems.push(format!("{}: {count} incoming rule steps", n.label));
            }
            if let Some(v) = n.state.graph.validate(sig).into_iter().next() {
                problems.push(format!("{}: {v}", n.label));
            }
            if !n.state.position.is_valid_in(&n.state.graph) {
                problems.push(format!("{}: position is not a subgraph", n.label));
            }
        }
        problems
    }
}

fn parallel_label(rules: &[AppliedRule]) -> String {
    rules.iter().map(|r| r.rule.as_str()).collect::<Vec<_>>().join(" || ")
}

fn replay(model: &Model, start: &LocatedGraph, steps: &[ReplayStep]) -> Result<LocatedGraph, String> {
    let sig = &model.signature;
    let mut cur = start.clone();
    for s in steps {
        cur = match s {
            ReplayStep::Focus(p) => {
                if !p.is_valid_in(&cur.graph) {
                    return Err("focus outside the graph".into());
                }
                cur.with_position(p.clone())
            }
            ReplayStep::Apply(applied) => {
                let mut pairs: Vec<(&RewriteRule, crate::matcher::Morphism)> = Vec::new();
                for a in applied {
                    let rule = model.rules.get(&a.rule).ok_or(format!("unknown rule {}", a.rule))?;
                    pairs.push((rule, a.morphism.clone()));
                }
                let result = match pairs.as_slice() {
                    [(rule, m)] => apply(rule, sig, &cur, m),
                    _ => apply_parallel(&pairs, sig, &cur),
                };
                result.map_err(|e| e.to_string())?.located()
            }
        };
    }
    Ok(cur)
}
