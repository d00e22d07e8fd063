//! Rewrite rules and one-step rewriting.
//!
//! A rule is a pair of port graphs joined by an arrow node. The arrow node is
//! stored as a wiring table: every left-hand port is wired to one or more
//! right-hand ports, or to the black hole. Edges that reach a matched node
//! from outside the match are moved along the wiring; edges reaching a port
//! wired to the black hole disappear.
//!
//! A left-hand node whose ports are wired one to one onto the same-named
//! ports of a same-named right-hand node is treated as preserved: it keeps its
//! host id and external edges, and only its attributes are rewritten.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::RewriteError;
use crate::graph::{EdgeId, Node, NodeId, Port, PortGraph, PortRef, Violation};
use crate::matcher::{check_morphism, Morphism};
use crate::position::{LocatedGraph, Position};
use crate::signature::PSignature;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WireTarget {
    BlackHole,
    Port(PortRef),
}

/// Left-hand port -> right-hand targets.
pub type Wiring = BTreeMap<PortRef, BTreeSet<WireTarget>>;

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteRule {
    pub name: String,
    pub lhs: PortGraph,
    pub rhs: PortGraph,
    pub wiring: Wiring,
    /// Part of the right-hand side that joins the position after rewriting.
    /// `None` stands for the whole right-hand side.
    pub result_position: Option<Position>,
    pub description: Option<String>,
    preserved: BTreeMap<NodeId, NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteResult {
    pub graph: PortGraph,
    pub position: Position,
    pub consumed: Vec<Morphism>,
    pub created_node_ids: BTreeSet<NodeId>,
}

impl RewriteResult {
    pub fn located(self) -> LocatedGraph {
        LocatedGraph {
            graph: std::sync::Arc::new(self.graph),
            position: self.position,
        }
    }
}

impl RewriteRule {
    pub fn new(name: &str, lhs: PortGraph, rhs: PortGraph, wiring: Wiring) -> Self {
        let mut rule = RewriteRule {
            name: name.to_string(),
            lhs,
            rhs,
            wiring,
            result_position: None,
            description: None,
            preserved: BTreeMap::new(),
        };
        rule.preserved = preserved_nodes(&rule.lhs, &rule.rhs, &rule.wiring);
        rule
    }

    pub fn with_result_position(mut self, q: Position) -> Self {
        self.result_position = Some(q);
        self
    }

    pub fn with_description(mut self, text: &str) -> Self {
        self.description = Some(text.to_string());
        self
    }

    /// Left-hand nodes kept across the rewrite, with their right-hand twin.
    pub fn preserved(&self) -> &BTreeMap<NodeId, NodeId> {
        &self.preserved
    }

    pub fn result_position_or_whole(&self) -> Position {
        self.result_position
            .clone()
            .unwrap_or_else(|| Position::whole(&self.rhs))
    }
}

fn preserved_nodes(lhs: &PortGraph, rhs: &PortGraph, wiring: &Wiring) -> BTreeMap<NodeId, NodeId> {
    // How many left-hand ports reach each right-hand port.
    let mut fan_in: BTreeMap<&PortRef, usize> = BTreeMap::new();
    for targets in wiring.values() {
        for t in targets {
            if let WireTarget::Port(p) = t {
                *fan_in.entry(p).or_default() += 1;
            }
        }
    }
    let mut out = BTreeMap::new();
    let mut taken = BTreeSet::new();
    for (lid, lnode) in lhs.nodes() {
        let mut twin: Option<NodeId> = None;
        let ok = lnode.ports.keys().all(|p| {
            let Some(targets) = wiring.get(&PortRef::new(lid, p)) else {
                return false;
            };
            let mut it = targets.iter();
            match (it.next(), it.next()) {
                (Some(WireTarget::Port(t)), None) if t.port == *p && fan_in[t] == 1 => {
                    match twin {
                        None => {
                            twin = Some(t.node);
                            true
                        }
                        Some(r) => r == t.node,
                    }
                }
                _ => false,
            }
        });
        if !ok {
            continue;
        }
        let Some(rid) = twin else { continue };
        let Some(rnode) = rhs.node(rid) else { continue };
        let same_ports = rnode.ports.keys().eq(lnode.ports.keys());
        if rnode.name == lnode.name && same_ports && taken.insert(rid) {
            out.insert(lid, rid);
        }
    }
    out
}

/// Checks a rule's own invariants and both sides against the signature.
pub fn check_rule(rule: &RewriteRule, sig: &PSignature) -> Vec<Violation> {
    let subject = format!("rule {}", rule.name);
    let mut out = Vec::new();
    if rule.lhs.is_empty() {
        out.push(Violation::new(&subject, "left-hand side is empty"));
    }
    for v in rule.lhs.validate(sig) {
        out.push(Violation::new(format!("{subject} lhs {}", v.subject), v.message));
    }
    for v in rule.rhs.validate(sig) {
        out.push(Violation::new(format!("{subject} rhs {}", v.subject), v.message));
    }
    for (lid, lnode) in rule.lhs.nodes() {
        for p in lnode.ports.keys() {
            if !rule.wiring.contains_key(&PortRef::new(lid, p)) {
                out.push(Violation::new(&subject, format!("lhs port {lid}.{p} is not wired")));
            }
        }
    }
    for (src, targets) in &rule.wiring {
        let exists = rule
            .lhs
            .node(src.node)
            .is_some_and(|n| n.ports.contains_key(&src.port));
        if !exists {
            out.push(Violation::new(&subject, format!("wiring source {src} is not an lhs port")));
        }
        if targets.is_empty() {
            out.push(Violation::new(&subject, format!("lhs port {src} has no wiring target")));
        }
        if targets.contains(&WireTarget::BlackHole) && targets.len() > 1 {
            out.push(Violation::new(
                &subject,
                format!("lhs port {src} is wired to the black hole and to other ports"),
            ));
        }
        for t in targets {
            if let WireTarget::Port(p) = t {
                let exists = rule
                    .rhs
                    .node(p.node)
                    .is_some_and(|n| n.ports.contains_key(&p.port));
                if !exists {
                    out.push(Violation::new(&subject, format!("wiring target {p} is not an rhs port")));
                }
            }
        }
    }
    if let Some(q) = &rule.result_position {
        if let Err(e) = q.check(&rule.rhs) {
            out.push(Violation::new(&subject, format!("result position is not inside the rhs: {e}")));
        }
    }
    let lhs_names: BTreeSet<&str> = rule.lhs.nodes().map(|(_, n)| n.name.as_str()).collect();
    let lhs_ports: BTreeSet<&str> = rule
        .lhs
        .nodes()
        .flat_map(|(_, n)| n.ports.keys().map(String::as_str))
        .collect();
    for (rid, rnode) in rule.rhs.nodes() {
        if sig.is_node_var(&rnode.name) && !lhs_names.contains(rnode.name.as_str()) {
            out.push(Violation::new(
                &subject,
                format!("rhs node {rid} uses variable {} not bound by the lhs", rnode.name),
            ));
        }
        for p in rnode.ports.keys() {
            if sig.is_port_var(p) && !lhs_ports.contains(p.as_str()) {
                out.push(Violation::new(
                    &subject,
                    format!("rhs port {rid}.{p} uses variable {p} not bound by the lhs"),
                ));
            }
        }
    }
    out
}

/// Rewrites `host` at the match `m`.
pub fn apply(
    rule: &RewriteRule,
    sig: &PSignature,
    host: &LocatedGraph,
    m: &Morphism,
) -> Result<RewriteResult, RewriteError> {
    check_morphism(&rule.lhs, &host.graph, sig, m).map_err(RewriteError::StaleMorphism)?;
    if !m.node_map.values().any(|n| host.position.nodes.contains(n)) {
        return Err(RewriteError::OutsidePosition);
    }
    let mut graph = (*host.graph).clone();
    let step = rewrite_in_place(rule, sig, &mut graph, m)?;
    let image_nodes = m.image_nodes();
    let image_edges = m.image_edges();
    let mut position = surviving_position(&host.position, &image_nodes, &image_edges, &graph);
    position.nodes.extend(step.q_nodes);
    position.edges.extend(step.q_edges);
    finish(graph, position, vec![m.clone()], step.created, sig)
}

/// Applies several rules at once on pairwise disjoint, non-adjacent matches.
pub fn apply_parallel(
    steps: &[(&RewriteRule, Morphism)],
    sig: &PSignature,
    host: &LocatedGraph,
) -> Result<RewriteResult, RewriteError> {
    let images: Vec<BTreeSet<NodeId>> = steps.iter().map(|(_, m)| m.image_nodes()).collect();
    for i in 0..images.len() {
        let touch: BTreeSet<NodeId> = images[i]
            .iter()
            .flat_map(|n| host.graph.neighbours(*n))
            .chain(images[i].iter().copied())
            .collect();
        for (j, other) in images.iter().enumerate().skip(i + 1) {
            if !other.is_disjoint(&touch) {
                return Err(RewriteError::NotDisjoint(i, j));
            }
        }
    }
    for (rule, m) in steps {
        check_morphism(&rule.lhs, &host.graph, sig, m).map_err(RewriteError::StaleMorphism)?;
        if !m.node_map.values().any(|n| host.position.nodes.contains(n)) {
            return Err(RewriteError::OutsidePosition);
        }
    }
    let mut graph = (*host.graph).clone();
    let mut created = BTreeSet::new();
    let mut q_nodes = BTreeSet::new();
    let mut q_edges = BTreeSet::new();
    let mut image_nodes = BTreeSet::new();
    let mut image_edges = BTreeSet::new();
    for (rule, m) in steps {
        let step = rewrite_in_place(rule, sig, &mut graph, m)?;
        created.extend(step.created);
        q_nodes.extend(step.q_nodes);
        q_edges.extend(step.q_edges);
        image_nodes.extend(m.image_nodes());
        image_edges.extend(m.image_edges());
    }
    let mut position = surviving_position(&host.position, &image_nodes, &image_edges, &graph);
    position.nodes.extend(q_nodes);
    position.edges.extend(q_edges);
    let consumed = steps.iter().map(|(_, m)| m.clone()).collect();
    finish(graph, position, consumed, created, sig)
}

fn finish(
    graph: PortGraph,
    position: Position,
    consumed: Vec<Morphism>,
    created: BTreeSet<NodeId>,
    sig: &PSignature,
) -> Result<RewriteResult, RewriteError> {
    let violations = graph.validate(sig);
    if !violations.is_empty() {
        return Err(RewriteError::IllFormedResult(violations));
    }
    debug_assert!(position.is_valid_in(&graph));
    Ok(RewriteResult {
        graph,
        position,
        consumed,
        created_node_ids: created,
    })
}

/// `P \ g(L)` restricted to what still exists.
fn surviving_position(
    p: &Position,
    image_nodes: &BTreeSet<NodeId>,
    image_edges: &BTreeSet<EdgeId>,
    graph: &PortGraph,
) -> Position {
    let nodes: BTreeSet<NodeId> = p.nodes.difference(image_nodes).copied().collect();
    let edges = p
        .edges
        .iter()
        .filter(|e| !image_edges.contains(e))
        .filter(|e| {
            graph
                .edge(**e)
                .is_some_and(|edge| edge.ends().iter().all(|end| nodes.contains(&end.node)))
        })
        .copied()
        .collect();
    Position { nodes, edges }
}

struct StepOutcome {
    created: BTreeSet<NodeId>,
    q_nodes: BTreeSet<NodeId>,
    q_edges: BTreeSet<EdgeId>,
}

fn rewrite_in_place(
    rule: &RewriteRule,
    sig: &PSignature,
    graph: &mut PortGraph,
    m: &Morphism,
) -> Result<StepOutcome, RewriteError> {
    let bind = |name: &str| -> String { m.var_bindings.get(name).cloned().unwrap_or_else(|| name.to_string()) };
    let twin_of: BTreeMap<NodeId, NodeId> = rule.preserved.iter().map(|(l, r)| (*r, *l)).collect();

    // Right-hand node -> host node; new nodes are created now.
    let mut placed: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut created = BTreeSet::new();
    for (rid, rnode) in rule.rhs.nodes() {
        if let Some(lid) = twin_of.get(&rid) {
            placed.insert(rid, m.node_map[lid]);
            continue;
        }
        let name = if sig.is_node_var(&rnode.name) { bind(&rnode.name) } else { rnode.name.clone() };
        let mut node = Node::new(&name);
        for (p, port) in &rnode.ports {
            let pname = if sig.is_port_var(p) { bind(p) } else { p.clone() };
            node.ports.insert(
                pname,
                Port {
                    attrs: port.attrs.clone(),
                    mode: Default::default(),
                },
            );
        }
        let hid = graph.push_node(node);
        created.insert(hid);
        placed.insert(rid, hid);
    }
    // Host port a right-hand port lands on.
    let host_port = |r: &PortRef| -> PortRef {
        let hid = placed[&r.node];
        let name = match twin_of.get(&r.node) {
            Some(lid) => m.port_map[lid][&r.port].clone(),
            None if sig.is_port_var(&r.port) => bind(&r.port),
            None => r.port.clone(),
        };
        PortRef::new(hid, &name)
    };

    // Attributes of preserved nodes.
    for (lid, rid) in &rule.preserved {
        let hid = m.node_map[lid];
        let lnode = rule.lhs.node(*lid).expect("lhs node");
        let rnode = rule.rhs.node(*rid).expect("rhs node");
        for (p, rport) in &rnode.ports {
            let hp = m.port_map[lid][p].clone();
            let lport = &lnode.ports[p];
            let hnode = graph.node_mut(hid).expect("preserved host node");
            let attrs = &mut hnode.ports.get_mut(&hp).expect("host port").attrs;
            for k in lport.attrs.keys() {
                attrs.remove(k);
            }
            attrs.extend(rport.attrs.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
    }

    // Host port -> left-hand port, for deleted nodes only.
    let mut deleted: BTreeMap<PortRef, PortRef> = BTreeMap::new();
    for (lid, hid) in &m.node_map {
        if rule.preserved.contains_key(lid) {
            continue;
        }
        for (lp, hp) in &m.port_map[lid] {
            deleted.insert(PortRef::new(*hid, hp), PortRef::new(*lid, lp));
        }
    }
    let image_edges = m.image_edges();
    let doomed_nodes: BTreeSet<NodeId> = deleted.keys().map(|p| p.node).collect();
    let external: Vec<(EdgeId, [PortRef; 2])> = graph
        .edges()
        .filter(|(id, e)| !image_edges.contains(id) && e.ends().iter().any(|x| doomed_nodes.contains(&x.node)))
        .map(|(id, e)| (id, e.ends().clone()))
        .collect();
    let moved = |end: &PortRef| -> Vec<PortRef> {
        match deleted.get(end) {
            None => vec![end.clone()],
            Some(lport) => rule.wiring[lport]
                .iter()
                .filter_map(|t| match t {
                    WireTarget::BlackHole => None,
                    WireTarget::Port(r) => Some(host_port(r)),
                })
                .collect(),
        }
    };
    let mut reconnect: Vec<(PortRef, PortRef)> = Vec::new();
    for (_, [a, b]) in &external {
        if a == b {
            for t in moved(a) {
                reconnect.push((t.clone(), t));
            }
            continue;
        }
        for x in moved(a) {
            for y in moved(b) {
                reconnect.push((x.clone(), y));
            }
        }
    }
    for e in &image_edges {
        graph.remove_edge(*e);
    }
    for (e, _) in &external {
        graph.remove_edge(*e);
    }
    for n in &doomed_nodes {
        graph.remove_node(*n);
    }
    for (a, b) in reconnect {
        graph.connect((a.node, &a.port), (b.node, &b.port))?;
    }

    let q = rule.result_position_or_whole();
    let mut q_edges = BTreeSet::new();
    for (rid, e) in rule.rhs.edges() {
        let [a, b] = e.ends();
        let (ha, hb) = (host_port(a), host_port(b));
        let hid = graph.connect((ha.node, &ha.port), (hb.node, &hb.port))?;
        if q.edges.contains(&rid) {
            q_edges.insert(hid);
        }
    }
    let q_nodes = q.nodes.iter().map(|r| placed[r]).collect();
    Ok(StepOutcome {
        created,
        q_nodes,
        q_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{find_matches, MatchRequest};
    use crate::signature::NodeDecl;

    fn sig() -> PSignature {
        PSignature::new()
            .declare("E", NodeDecl::new(["site"]).with_attr("site", ["+", "-"]))
            .declare("S", NodeDecl::new(["s"]))
    }

    type WirePair<'a> = ((u64, &'a str), Option<(u64, &'a str)>);

    fn wire(pairs: &[WirePair]) -> Wiring {
        let mut w = Wiring::new();
        for ((ln, lp), t) in pairs {
            let target = match t {
                Some((rn, rp)) => WireTarget::Port(PortRef::new(NodeId(*rn), rp)),
                None => WireTarget::BlackHole,
            };
            w.entry(PortRef::new(NodeId(*ln), lp)).or_default().insert(target);
        }
        w
    }

    /// E(site wildcard) + free S -> E; S is swallowed.
    fn degrade(s: &PSignature) -> RewriteRule {
        let mut lhs = PortGraph::new();
        let e = lhs.add_node(s, "E").unwrap();
        lhs.set_mode(e, "site", crate::graph::Connectivity::Wildcard).unwrap();
        lhs.add_node(s, "S").unwrap();
        let mut rhs = PortGraph::new();
        rhs.add_node(s, "E").unwrap();
        RewriteRule::new("deg", lhs, rhs, wire(&[((1, "site"), Some((1, "site"))), ((2, "s"), None)]))
    }

    #[test]
    fn degrade_removes_substrate_and_keeps_enzyme() {
        let s = sig();
        let rule = degrade(&s);
        assert!(check_rule(&rule, &s).is_empty(), "{:?}", check_rule(&rule, &s));
        assert_eq!(rule.preserved().len(), 1);
        let mut g = PortGraph::new();
        let e = g.add_node(&s, "E").unwrap();
        g.add_node(&s, "S").unwrap();
        let host = LocatedGraph::whole(g);
        let ms = find_matches(&MatchRequest::new(&rule.lhs, &host, &s)).unwrap();
        assert_eq!(ms.len(), 1);
        let out = apply(&rule, &s, &host, &ms[0]).unwrap();
        assert_eq!(out.graph.node_count(), 1);
        assert!(out.graph.contains_node(e));
        assert!(out.created_node_ids.is_empty());
        assert_eq!(out.position.nodes, [e].into());
    }

    #[test]
    fn missing_wiring_and_foreign_q_are_reported() {
        let s = sig();
        let mut rule = degrade(&s);
        rule.wiring.remove(&PortRef::new(NodeId(2), "s"));
        assert_eq!(check_rule(&rule, &s).len(), 1);
        let rule = degrade(&s).with_result_position(Position {
            nodes: [NodeId(9)].into(),
            edges: BTreeSet::new(),
        });
        assert_eq!(check_rule(&rule, &s).len(), 1);
    }

    #[test]
    fn stale_morphism_is_rejected() {
        let s = sig();
        let rule = degrade(&s);
        let mut g = PortGraph::new();
        g.add_node(&s, "E").unwrap();
        let sid = g.add_node(&s, "S").unwrap();
        let host = LocatedGraph::whole(g.clone());
        let m = find_matches(&MatchRequest::new(&rule.lhs, &host, &s)).unwrap().remove(0);
        g.remove_node(sid);
        let gone = LocatedGraph::whole(g);
        assert!(matches!(apply(&rule, &s, &gone, &m), Err(RewriteError::StaleMorphism(_))));
    }

    #[test]
    fn external_edges_follow_the_wiring() {
        // S(s) -> E(site): the substrate is replaced by an enzyme that takes
        // over its bond.
        let s = sig();
        let mut lhs = PortGraph::new();
        let ls = lhs.add_node(&s, "S").unwrap();
        lhs.set_mode(ls, "s", crate::graph::Connectivity::Wildcard).unwrap();
        let mut rhs = PortGraph::new();
        rhs.add_node(&s, "E").unwrap();
        let rule = RewriteRule::new("swap", lhs, rhs, wire(&[((1, "s"), Some((1, "site")))]));
        assert!(check_rule(&rule, &s).is_empty());
        assert!(rule.preserved().is_empty());

        let mut g = PortGraph::new();
        let sub = g.add_node(&s, "S").unwrap();
        let other = g.add_node(&s, "E").unwrap();
        g.connect((sub, "s"), (other, "site")).unwrap();
        let host = LocatedGraph::whole(g);
        let m = find_matches(&MatchRequest::new(&rule.lhs, &host, &s)).unwrap().remove(0);
        let out = apply(&rule, &s, &host, &m).unwrap();
        assert_eq!(out.graph.node_count(), 2);
        let new = *out.created_node_ids.iter().next().unwrap();
        assert_eq!(out.graph.port_degree(new, "site"), 1);
        assert_eq!(out.graph.port_degree(other, "site"), 1);
        assert!(out.position.nodes.contains(&new));
    }
}
