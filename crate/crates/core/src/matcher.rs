//! Enumeration of injective port-graph morphisms from a rule left-hand side
//! into a located graph.
//!
//! The search is a backtracking search in the Ullmann/VF2 family. Pattern
//! nodes are visited component by component; after the first node of a
//! component every node is reached through an already matched neighbour, so
//! its candidates come from the host edges at one port. Name, attribute and
//! port-degree checks are applied as soon as a node is placed, and edge
//! multiplicities are checked against every already placed neighbour.
//!
//! Strict ports must carry exactly the edges the pattern shows; wildcard ports
//! only need to carry at least those.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ops::ControlFlow;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::MatchError;
use crate::graph::{Connectivity, EdgeId, NodeId, PortGraph, PortRef};
use crate::position::{LocatedGraph, Position};
use crate::signature::PSignature;

/// An injective morphism from a pattern into a host. Maps keyed by ids are
/// written as lists of pairs so they survive tagged enclosing documents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Morphism {
    #[serde(with = "pairs")]
    pub node_map: BTreeMap<NodeId, NodeId>,
    /// Pattern node -> pattern port -> host port on the image node.
    #[serde(with = "pairs")]
    pub port_map: BTreeMap<NodeId, BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub var_bindings: BTreeMap<String, String>,
    #[serde(default, with = "pairs")]
    pub edge_map: BTreeMap<EdgeId, EdgeId>,
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(m: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Ord + Deserialize<'de>,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

impl Morphism {
    pub fn image_nodes(&self) -> BTreeSet<NodeId> {
        self.node_map.values().copied().collect()
    }

    pub fn image_edges(&self) -> BTreeSet<EdgeId> {
        self.edge_map.values().copied().collect()
    }

    pub fn image(&self) -> Position {
        Position {
            nodes: self.image_nodes(),
            edges: self.image_edges(),
        }
    }

    /// Host port that a pattern port is sent to.
    pub fn host_port(&self, node: NodeId, port: &str) -> Option<PortRef> {
        let host = *self.node_map.get(&node)?;
        let hp = self.port_map.get(&node)?.get(port)?;
        Some(PortRef::new(host, hp))
    }

    /// Node map and bindings only, the identity of a match up to the choice
    /// among parallel host edges.
    pub fn key(&self) -> (BTreeMap<NodeId, NodeId>, BTreeMap<NodeId, BTreeMap<String, String>>) {
        (self.node_map.clone(), self.port_map.clone())
    }
}

pub struct MatchRequest<'a> {
    pub pattern: &'a PortGraph,
    pub host: &'a LocatedGraph,
    pub signature: &'a PSignature,
    pub limit: Option<usize>,
}

impl<'a> MatchRequest<'a> {
    pub fn new(pattern: &'a PortGraph, host: &'a LocatedGraph, signature: &'a PSignature) -> Self {
        MatchRequest {
            pattern,
            host,
            signature,
            limit: None,
        }
    }

    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = Some(limit);
        self
    }
}

/// All matches, up to the request's limit, in deterministic order.
pub fn find_matches(req: &MatchRequest<'_>) -> Result<Vec<Morphism>, MatchError> {
    let mut out = Vec::new();
    let limit = req.limit.unwrap_or(usize::MAX);
    if limit == 0 {
        return Ok(out);
    }
    let mut push = |m: Morphism| {
        out.push(m);
        if out.len() >= limit {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    };
    let index = Rc::new(HostIndex::new(&req.host.graph));
    match Split::new(req, &index)? {
        Some(split) => split.each(req, &index, &mut push)?,
        None => Search::with_index(req, index)?.run(&mut |hit| push(hit.morphism())),
    }
    Ok(out)
}

pub fn count_matches(req: &MatchRequest<'_>) -> Result<usize, MatchError> {
    Ok(MatchSet::new(req)?.len())
}

/// The `k`-th match (0-based) in `find_matches` order.
pub fn nth_match(req: &MatchRequest<'_>, k: usize) -> Result<Option<Morphism>, MatchError> {
    MatchSet::new(req)?.get(k)
}

/// The matches of one request, counted once and then addressable by index
/// in `find_matches` order.
pub struct MatchSet<'r, 'a> {
    req: &'r MatchRequest<'a>,
    index: Rc<HostIndex<'a>>,
    split: Option<Split>,
    len: usize,
}

impl<'r, 'a> MatchSet<'r, 'a> {
    pub fn new(req: &'r MatchRequest<'a>) -> Result<Self, MatchError> {
        let index = Rc::new(HostIndex::new(&req.host.graph));
        let split = Split::new(req, &index)?;
        let len = match &split {
            Some(s) => s.count_from(0, false),
            None => {
                let mut n = 0usize;
                Search::with_index(req, index.clone())?.run(&mut |_| {
                    n += 1;
                    ControlFlow::Continue(())
                });
                n
            }
        };
        Ok(MatchSet { req, index, split, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, k: usize) -> Result<Option<Morphism>, MatchError> {
        if k >= self.len {
            return Ok(None);
        }
        if let Some(split) = &self.split {
            return split.nth(self.req, &self.index, k);
        }
        let mut seen = 0usize;
        let mut found = None;
        Search::with_index(self.req, self.index.clone())?.run(&mut |hit| {
            if seen == k {
                found = Some(hit.morphism());
                return ControlFlow::Break(());
            }
            seen += 1;
            ControlFlow::Continue(())
        });
        Ok(found)
    }
}

/// Matches of a pattern made of connected components that can never compete
/// for the same host node: no variables, and no node name shared between two
/// components. A full match is then any combination of component matches with
/// at least one of them meeting the position, so counting and indexing need
/// only the per-component lists. Combinations are ordered with the component
/// holding the smallest pattern node id outermost.
struct Split {
    parts: Vec<Part>,
}

struct Part {
    pattern: PortGraph,
    /// Whether each component match, in search order, meets the position.
    meets: Vec<bool>,
}

impl Split {
    fn new<'a>(req: &MatchRequest<'a>, index: &Rc<HostIndex<'a>>) -> Result<Option<Split>, MatchError> {
        let pattern = req.pattern;
        if pattern.is_empty() {
            return Err(MatchError::EmptyPattern);
        }
        let sig = req.signature;
        let has_vars = pattern
            .nodes()
            .any(|(_, n)| sig.is_node_var(&n.name) || n.ports.keys().any(|p| sig.is_port_var(p)));
        if has_vars {
            return Ok(None);
        }
        let comps = components(pattern);
        if comps.len() < 2 {
            return Ok(None);
        }
        let names: Vec<BTreeSet<&str>> = comps
            .iter()
            .map(|c| c.iter().filter_map(|n| pattern.node(*n)).map(|n| n.name.as_str()).collect())
            .collect();
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                if !names[i].is_disjoint(&names[j]) {
                    return Ok(None);
                }
            }
        }
        let mut parts = Vec::with_capacity(comps.len());
        for comp in &comps {
            let mut sub = pattern.clone();
            let others: Vec<NodeId> = sub.node_ids().filter(|n| !comp.contains(n)).collect();
            for n in others {
                sub.remove_node(n);
            }
            let mut meets = Vec::new();
            let sub_req = MatchRequest::new(&sub, req.host, sig);
            Search::with_index(&sub_req, index.clone())?.run_unfiltered(&mut |hit| {
                meets.push(hit.search.assign.iter().any(|n| req.host.position.nodes.contains(n)));
                ControlFlow::Continue(())
            });
            parts.push(Part { pattern: sub, meets });
        }
        Ok(Some(Split { parts }))
    }

    /// Number of ways to complete components `i..` so that the position is
    /// met, given whether an earlier component already meets it.
    fn count_from(&self, i: usize, met: bool) -> usize {
        let mut if_met = 1usize;
        let mut if_unmet = 0usize;
        for part in self.parts[i..].iter().rev() {
            let all = part.meets.len();
            let meeting = part.meets.iter().filter(|m| **m).count();
            let new_met = all.saturating_mul(if_met);
            let new_unmet = meeting
                .saturating_mul(if_met)
                .saturating_add((all - meeting).saturating_mul(if_unmet));
            if_met = new_met;
            if_unmet = new_unmet;
        }
        if met {
            if_met
        } else {
            if_unmet
        }
    }

    /// The `j`-th match of one component, ignoring the position.
    fn part_match<'a>(
        &self,
        req: &MatchRequest<'a>,
        index: &Rc<HostIndex<'a>>,
        i: usize,
        j: usize,
    ) -> Result<Option<Morphism>, MatchError> {
        let sub_req = MatchRequest::new(&self.parts[i].pattern, req.host, req.signature);
        let mut seen = 0usize;
        let mut found = None;
        Search::with_index(&sub_req, index.clone())?.run_unfiltered(&mut |hit| {
            if seen == j {
                found = Some(hit.morphism());
                return ControlFlow::Break(());
            }
            seen += 1;
            ControlFlow::Continue(())
        });
        Ok(found)
    }

    fn nth<'a>(&self, req: &MatchRequest<'a>, index: &Rc<HostIndex<'a>>, mut k: usize) -> Result<Option<Morphism>, MatchError> {
        let mut met = false;
        let mut chosen = Vec::with_capacity(self.parts.len());
        for (i, part) in self.parts.iter().enumerate() {
            let mut picked = None;
            for (j, meets) in part.meets.iter().enumerate() {
                let now = met || *meets;
                let c = self.count_from(i + 1, now);
                if k < c {
                    picked = Some((j, now));
                    break;
                }
                k -= c;
            }
            let Some((j, now)) = picked else { return Ok(None) };
            let Some(m) = self.part_match(req, index, i, j)? else { return Ok(None) };
            chosen.push(m);
            met = now;
        }
        Ok(Some(merge(&chosen.iter().collect::<Vec<_>>())))
    }

    fn each<'a>(
        &self,
        req: &MatchRequest<'a>,
        index: &Rc<HostIndex<'a>>,
        visit: &mut dyn FnMut(Morphism) -> ControlFlow<()>,
    ) -> Result<(), MatchError> {
        let mut lists = Vec::with_capacity(self.parts.len());
        for part in &self.parts {
            let sub_req = MatchRequest::new(&part.pattern, req.host, req.signature);
            let mut list = Vec::with_capacity(part.meets.len());
            Search::with_index(&sub_req, index.clone())?.run_unfiltered(&mut |hit| {
                list.push(hit.morphism());
                ControlFlow::Continue(())
            });
            lists.push(list);
        }
        let mut chosen = Vec::with_capacity(lists.len());
        let _ = self.each_from(&lists, 0, false, &mut chosen, visit);
        Ok(())
    }

    fn each_from<'l>(
        &self,
        lists: &'l [Vec<Morphism>],
        i: usize,
        met: bool,
        chosen: &mut Vec<&'l Morphism>,
        visit: &mut dyn FnMut(Morphism) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        if i == lists.len() {
            return if met { visit(merge(chosen)) } else { ControlFlow::Continue(()) };
        }
        for (m, meets) in lists[i].iter().zip(&self.parts[i].meets) {
            let now = met || *meets;
            if self.count_from(i + 1, now) == 0 {
                continue;
            }
            chosen.push(m);
            let flow = self.each_from(lists, i + 1, now, chosen, visit);
            chosen.pop();
            flow?;
        }
        ControlFlow::Continue(())
    }
}

fn merge(parts: &[&Morphism]) -> Morphism {
    let mut out = Morphism {
        node_map: BTreeMap::new(),
        port_map: BTreeMap::new(),
        var_bindings: BTreeMap::new(),
        edge_map: BTreeMap::new(),
    };
    for m in parts {
        out.node_map.extend(m.node_map.iter().map(|(a, b)| (*a, *b)));
        out.port_map.extend(m.port_map.iter().map(|(a, b)| (*a, b.clone())));
        out.edge_map.extend(m.edge_map.iter().map(|(a, b)| (*a, *b)));
    }
    out
}

/// Connected components of a pattern, each sorted, ordered by smallest id.
fn components(pattern: &PortGraph) -> Vec<BTreeSet<NodeId>> {
    let mut comp: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut out: Vec<BTreeSet<NodeId>> = Vec::new();
    for start in pattern.node_ids() {
        if comp.contains_key(&start) {
            continue;
        }
        let idx = out.len();
        let mut set = BTreeSet::new();
        let mut stack = vec![start];
        comp.insert(start, idx);
        while let Some(n) = stack.pop() {
            set.insert(n);
            for (_, e) in pattern.incident_to_node(n) {
                for end in e.ends() {
                    if let std::collections::btree_map::Entry::Vacant(slot) = comp.entry(end.node) {
                        slot.insert(idx);
                        stack.push(end.node);
                    }
                }
            }
        }
        out.push(set);
    }
    out
}

/// Up to `max` matches (unbounded when `None`), one per request, whose images
/// are pairwise node-disjoint and not joined by any host edge. The number of
/// matches is maximised; `None` is returned when fewer than `min` exist.
///
/// Requests sharing the same pattern and host are interchangeable copies.
/// When `rng` is given, candidates are shuffled before the search so that the
/// chosen tuple is a seeded random one rather than the first in id order.
pub fn find_disjoint_tuples(
    reqs: &[MatchRequest<'_>],
    min: usize,
    max: Option<usize>,
    rng: Option<&mut dyn RngCore>,
) -> Result<Option<Vec<(usize, Morphism)>>, MatchError> {
    // Group interchangeable requests.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, r) in reqs.iter().enumerate() {
        let same = groups.iter_mut().find(|g| {
            let first = &reqs[g[0]];
            std::ptr::eq(first.pattern, r.pattern) && std::ptr::eq(first.host, r.host)
        });
        match same {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    let mut cands: Vec<Vec<Candidate>> = Vec::with_capacity(groups.len());
    for g in &groups {
        let req = &reqs[g[0]];
        let list = find_matches(&MatchRequest {
            limit: None,
            ..MatchRequest::new(req.pattern, req.host, req.signature)
        })?;
        let graph = &req.host.graph;
        cands.push(
            list.into_iter()
                .map(|m| {
                    let nodes = m.image_nodes();
                    let mut touch = nodes.clone();
                    for n in &nodes {
                        touch.extend(graph.neighbours(*n));
                    }
                    Candidate { morphism: m, nodes, touch }
                })
                .collect(),
        );
    }
    if let Some(rng) = rng {
        for list in &mut cands {
            list.shuffle(rng);
        }
    }
    let slots: Vec<usize> = groups.iter().map(Vec::len).collect();
    let total_slots: usize = slots.iter().sum();
    let cap = max.unwrap_or(usize::MAX).min(total_slots);

    let mut packer = Packer {
        cands: &cands,
        slots: &slots,
        cap,
        chosen: Vec::new(),
        best: Vec::new(),
    };
    packer.dfs(0, 0, 0);
    if packer.best.len() < min {
        return Ok(None);
    }
    let mut next_slot = vec![0usize; groups.len()];
    let mut out: Vec<(usize, Morphism)> = packer
        .best
        .iter()
        .map(|&(g, c)| {
            let req = groups[g][next_slot[g]];
            next_slot[g] += 1;
            (req, cands[g][c].morphism.clone())
        })
        .collect();
    out.sort_by_key(|(i, _)| *i);
    Ok(Some(out))
}

struct Candidate {
    morphism: Morphism,
    nodes: BTreeSet<NodeId>,
    touch: BTreeSet<NodeId>,
}

struct Packer<'c> {
    cands: &'c [Vec<Candidate>],
    slots: &'c [usize],
    cap: usize,
    chosen: Vec<(usize, usize)>,
    best: Vec<(usize, usize)>,
}

impl Packer<'_> {
    fn bound(&self, group: usize, start: usize, taken: usize) -> usize {
        let here = (self.slots[group] - taken).min(self.cands[group].len() - start);
        let rest: usize = (group + 1..self.cands.len())
            .map(|h| self.slots[h].min(self.cands[h].len()))
            .sum();
        self.chosen.len() + here + rest
    }

    fn compatible(&self, group: usize, cand: usize) -> bool {
        let c = &self.cands[group][cand];
        self.chosen.iter().all(|&(g, i)| {
            let other = &self.cands[g][i];
            c.nodes.is_disjoint(&other.touch)
        })
    }

    /// Returns true once the cap is reached.
    fn dfs(&mut self, group: usize, start: usize, taken: usize) -> bool {
        if self.chosen.len() > self.best.len() {
            self.best = self.chosen.clone();
            if self.best.len() >= self.cap {
                return true;
            }
        }
        if group >= self.cands.len() {
            return false;
        }
        if self.bound(group, start, taken) <= self.best.len() {
            return false;
        }
        if taken < self.slots[group] {
            for c in start..self.cands[group].len() {
                if self.compatible(group, c) {
                    self.chosen.push((group, c));
                    let done = self.dfs(group, c + 1, taken + 1);
                    self.chosen.pop();
                    if done {
                        return true;
                    }
                    if self.bound(group, c + 1, taken) <= self.best.len() {
                        break;
                    }
                }
            }
        }
        self.dfs(group + 1, 0, 0)
    }
}

/// Re-checks every morphism invariant from scratch.
pub fn check_morphism(
    pattern: &PortGraph,
    host: &PortGraph,
    sig: &PSignature,
    m: &Morphism,
) -> Result<(), String> {
    let mut seen = HashSet::new();
    let mut bindings: BTreeMap<&str, &str> = BTreeMap::new();
    if m.node_map.len() != pattern.node_count() {
        return Err("node map does not cover the pattern".into());
    }
    for (pid, pnode) in pattern.nodes() {
        let hid = *m.node_map.get(&pid).ok_or(format!("pattern node {pid} unmapped"))?;
        if !seen.insert(hid) {
            return Err(format!("host node {hid} hit twice"));
        }
        let hnode = host.node(hid).ok_or(format!("host node {hid} missing"))?;
        bind(&mut bindings, sig.is_node_var(&pnode.name), &pnode.name, &hnode.name)?;
        let ports = m.port_map.get(&pid).ok_or(format!("ports of {pid} unmapped"))?;
        if ports.len() != pnode.ports.len() || hnode.ports.len() != pnode.ports.len() {
            return Err(format!("port sets of {pid} and {hid} differ"));
        }
        let targets: BTreeSet<&String> = ports.values().collect();
        if targets.len() != ports.len() {
            return Err(format!("port map of {pid} is not injective"));
        }
        for (pp, port) in &pnode.ports {
            let hp = ports.get(pp).ok_or(format!("port {pid}.{pp} unmapped"))?;
            let hport = hnode.ports.get(hp).ok_or(format!("host port {hid}.{hp} missing"))?;
            bind(&mut bindings, sig.is_port_var(pp), pp, hp)?;
            for (k, v) in &port.attrs {
                if hport.attrs.get(k) != Some(v) {
                    return Err(format!("attribute {pp}.{k} differs on {hid}"));
                }
            }
        }
    }
    for (k, v) in &m.var_bindings {
        if bindings.get(k.as_str()) != Some(&v.as_str()) {
            return Err(format!("binding {k}={v} is not induced by the map"));
        }
    }
    if bindings.len() != m.var_bindings.len() {
        return Err("variable bindings incomplete".into());
    }
    // Edges.
    let mut used = HashSet::new();
    for (pe, edge) in pattern.edges() {
        let he = *m.edge_map.get(&pe).ok_or(format!("pattern edge {pe} unmapped"))?;
        if !used.insert(he) {
            return Err(format!("host edge {he} hit twice"));
        }
        let hedge = host.edge(he).ok_or(format!("host edge {he} missing"))?;
        let [a, b] = edge.ends();
        let ha = m.host_port(a.node, &a.port).ok_or("edge end unmapped")?;
        let hb = m.host_port(b.node, &b.port).ok_or("edge end unmapped")?;
        let expect = crate::graph::Edge::new(ha, hb);
        if *hedge != expect {
            return Err(format!("edge {pe} is not sent to a parallel host edge"));
        }
    }
    // Strict ports see no host edges beyond the images of pattern edges.
    for (pid, pnode) in pattern.nodes() {
        for (pp, port) in &pnode.ports {
            if port.mode != Connectivity::Strict {
                continue;
            }
            let hp = m.host_port(pid, pp).ok_or("port unmapped")?;
            for (he, _) in host.incident(hp.node, &hp.port) {
                if !used.contains(&he) {
                    return Err(format!("strict port {pid}.{pp} sees extra host edge {he}"));
                }
            }
        }
    }
    Ok(())
}

fn bind<'a>(
    bindings: &mut BTreeMap<&'a str, &'a str>,
    is_var: bool,
    pattern: &'a str,
    host: &'a str,
) -> Result<(), String> {
    if !is_var {
        return if pattern == host {
            Ok(())
        } else {
            Err(format!("name {pattern} does not match {host}"))
        };
    }
    match bindings.get(pattern) {
        Some(b) if *b != host => Err(format!("variable {pattern} bound twice")),
        _ => {
            bindings.insert(pattern, host);
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// search internals

struct PPort<'p> {
    name: &'p str,
    is_var: bool,
    strict: bool,
    attrs: &'p BTreeMap<String, String>,
    degree: usize,
}

struct BackEdge {
    own_port: usize,
    other: usize,
    other_port: usize,
    count: usize,
}

struct PNode<'p> {
    id: NodeId,
    name: &'p str,
    is_var: bool,
    /// Constant ports first, then variable ones.
    ports: Vec<PPort<'p>>,
    anchor: Option<(usize, usize)>,
    back: Vec<BackEdge>,
}

type Incidence<'g> = Vec<(EdgeId, NodeId, &'g str)>;

struct HostIndex<'g> {
    by_name: HashMap<&'g str, Vec<NodeId>>,
    all: Vec<NodeId>,
    inc: HashMap<(NodeId, &'g str), Incidence<'g>>,
}

impl<'g> HostIndex<'g> {
    fn new(g: &'g PortGraph) -> Self {
        let mut by_name: HashMap<&str, Vec<NodeId>> = HashMap::new();
        let mut all = Vec::with_capacity(g.node_count());
        for (id, n) in g.nodes() {
            by_name.entry(n.name.as_str()).or_default().push(id);
            all.push(id);
        }
        let mut inc: HashMap<(NodeId, &str), Incidence<'g>> = HashMap::new();
        for (eid, e) in g.edges() {
            let [a, b] = e.ends();
            inc.entry((a.node, a.port.as_str()))
                .or_default()
                .push((eid, b.node, b.port.as_str()));
            if a != b {
                inc.entry((b.node, b.port.as_str()))
                    .or_default()
                    .push((eid, a.node, a.port.as_str()));
            }
        }
        HostIndex { by_name, all, inc }
    }

    fn incident(&self, node: NodeId, port: &'g str) -> &[(EdgeId, NodeId, &'g str)] {
        self.inc.get(&(node, port)).map_or(&[], Vec::as_slice)
    }

    fn count_between(&self, a: NodeId, ap: &'g str, b: NodeId, bp: &'g str) -> usize {
        self.incident(a, ap)
            .iter()
            .filter(|(_, n, p)| *n == b && *p == bp)
            .count()
    }
}

struct Search<'r, 'a> {
    req: &'r MatchRequest<'a>,
    plan: Vec<PNode<'a>>,
    index: Rc<HostIndex<'a>>,
    assign: Vec<NodeId>,
    ports: Vec<Vec<&'a str>>,
    used: HashSet<NodeId>,
    bindings: Vec<(&'a str, &'a str)>,
    unfiltered: bool,
}

struct Hit<'s, 'r, 'a> {
    search: &'s Search<'r, 'a>,
}

impl Hit<'_, '_, '_> {
    fn morphism(&self) -> Morphism {
        self.search.materialize()
    }
}

impl<'r, 'a> Search<'r, 'a> {
    fn with_index(req: &'r MatchRequest<'a>, index: Rc<HostIndex<'a>>) -> Result<Self, MatchError> {
        if req.pattern.is_empty() {
            return Err(MatchError::EmptyPattern);
        }
        let plan = build_plan(req.pattern, req.signature, &index);
        let n = plan.len();
        Ok(Search {
            req,
            plan,
            index,
            assign: Vec::with_capacity(n),
            ports: Vec::with_capacity(n),
            used: HashSet::new(),
            bindings: Vec::new(),
            unfiltered: false,
        })
    }

    fn run(&mut self, visit: &mut dyn FnMut(&Hit<'_, 'r, 'a>) -> ControlFlow<()>) {
        let _ = self.extend(0, visit);
    }

    /// Like `run` but without requiring the image to meet the position.
    fn run_unfiltered(&mut self, visit: &mut dyn FnMut(&Hit<'_, 'r, 'a>) -> ControlFlow<()>) {
        self.unfiltered = true;
        let _ = self.extend(0, visit);
    }

    fn binding(&self, var: &str) -> Option<&'a str> {
        self.bindings.iter().find(|(v, _)| *v == var).map(|(_, h)| *h)
    }

    fn extend(
        &mut self,
        depth: usize,
        visit: &mut dyn FnMut(&Hit<'_, 'r, 'a>) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        if depth == self.plan.len() {
            let pos = &self.req.host.position;
            if self.unfiltered || self.assign.iter().any(|n| pos.nodes.contains(n)) {
                return visit(&Hit { search: self });
            }
            return ControlFlow::Continue(());
        }
        let candidates: Vec<NodeId> = match self.plan[depth].anchor {
            Some((a, pi)) => {
                let hp = self.ports[a][pi];
                let mut c: Vec<NodeId> = self
                    .index
                    .incident(self.assign[a], hp)
                    .iter()
                    .map(|(_, n, _)| *n)
                    .collect();
                c.sort_unstable();
                c.dedup();
                c
            }
            None => {
                let pn = &self.plan[depth];
                if pn.is_var {
                    match self.binding(pn.name) {
                        Some(bound) => self.index.by_name.get(bound).cloned().unwrap_or_default(),
                        None => self.index.all.clone(),
                    }
                } else {
                    self.index.by_name.get(pn.name).cloned().unwrap_or_default()
                }
            }
        };
        let host: &'a PortGraph = &self.req.host.graph;
        for h in candidates {
            if self.used.contains(&h) {
                continue;
            }
            let Some(hnode) = host.node(h) else { continue };
            let pn = &self.plan[depth];
            if hnode.ports.len() != pn.ports.len() {
                continue;
            }
            let mark = self.bindings.len();
            if pn.is_var {
                match self.binding(pn.name) {
                    Some(b) if b != hnode.name => continue,
                    Some(_) => {}
                    None => self.bindings.push((pn.name, hnode.name.as_str())),
                }
            } else if pn.name != hnode.name {
                continue;
            }
            self.assign.push(h);
            self.ports.push(Vec::with_capacity(pn.ports.len()));
            self.used.insert(h);
            let flow = self.assign_ports(depth, 0, visit);
            self.used.remove(&h);
            self.ports.pop();
            self.assign.pop();
            self.bindings.truncate(mark);
            flow?;
        }
        ControlFlow::Continue(())
    }

    /// Assigns the host port for pattern port `pi` of the node at `depth`,
    /// then continues with the next port or the next node.
    fn assign_ports(
        &mut self,
        depth: usize,
        pi: usize,
        visit: &mut dyn FnMut(&Hit<'_, 'r, 'a>) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        let h = self.assign[depth];
        let host: &'a PortGraph = &self.req.host.graph;
        let hnode = host.node(h).expect("assigned node exists");
        if pi == self.plan[depth].ports.len() {
            if !self.back_edges_hold(depth) {
                return ControlFlow::Continue(());
            }
            return self.extend(depth + 1, visit);
        }
        let pp = &self.plan[depth].ports[pi];
        let options: Vec<&'a str> = if pp.is_var {
            match self.binding(pp.name) {
                Some(b) => hnode
                    .ports
                    .get_key_value(b)
                    .map(|(k, _)| vec![k.as_str()])
                    .unwrap_or_default(),
                None => hnode.ports.keys().map(String::as_str).collect(),
            }
        } else {
            hnode
                .ports
                .get_key_value(pp.name)
                .map(|(k, _)| vec![k.as_str()])
                .unwrap_or_default()
        };
        for hp in options {
            if self.ports[depth].contains(&hp) {
                continue;
            }
            let pp = &self.plan[depth].ports[pi];
            let hport = &hnode.ports[hp];
            if !pp.attrs.iter().all(|(k, v)| hport.attrs.get(k) == Some(v)) {
                continue;
            }
            if pp.strict && self.index.incident(h, hp).len() != pp.degree {
                continue;
            }
            let mark = self.bindings.len();
            if pp.is_var && self.binding(pp.name).is_none() {
                self.bindings.push((pp.name, hp));
            }
            self.ports[depth].push(hp);
            let flow = self.assign_ports(depth, pi + 1, visit);
            self.ports[depth].pop();
            self.bindings.truncate(mark);
            flow?;
        }
        ControlFlow::Continue(())
    }

    fn back_edges_hold(&self, depth: usize) -> bool {
        let pn = &self.plan[depth];
        let h = self.assign[depth];
        pn.back.iter().all(|b| {
            let own = self.ports[depth][b.own_port];
            let other = self.ports[b.other][b.other_port];
            self.index.count_between(h, own, self.assign[b.other], other) >= b.count
        })
    }

    fn materialize(&self) -> Morphism {
        let mut node_map = BTreeMap::new();
        let mut port_map = BTreeMap::new();
        for (i, pn) in self.plan.iter().enumerate() {
            node_map.insert(pn.id, self.assign[i]);
            let ports: BTreeMap<String, String> = pn
                .ports
                .iter()
                .zip(&self.ports[i])
                .map(|(pp, hp)| (pp.name.to_string(), hp.to_string()))
                .collect();
            port_map.insert(pn.id, ports);
        }
        let var_bindings = self
            .bindings
            .iter()
            .map(|(v, h)| (v.to_string(), h.to_string()))
            .collect();
        let mut m = Morphism {
            node_map,
            port_map,
            var_bindings,
            edge_map: BTreeMap::new(),
        };
        let mut used = HashSet::new();
        for (pe, edge) in self.req.pattern.edges() {
            let [a, b] = edge.ends();
            let ha = m.host_port(a.node, &a.port).expect("mapped");
            let hb = m.host_port(b.node, &b.port).expect("mapped");
            let target = self
                .index
                .incident(ha.node, port_ref_name(&self.req.host.graph, &ha))
                .iter()
                .filter(|(e, n, p)| *n == hb.node && *p == hb.port && !used.contains(e))
                .map(|(e, _, _)| *e)
                .min()
                .expect("edge multiplicities were checked");
            used.insert(target);
            m.edge_map.insert(pe, target);
        }
        m
    }
}

fn port_ref_name<'g>(g: &'g PortGraph, r: &PortRef) -> &'g str {
    g.node(r.node)
        .and_then(|n| n.ports.get_key_value(&r.port))
        .map(|(k, _)| k.as_str())
        .unwrap_or("")
}

fn build_plan<'p>(pattern: &'p PortGraph, sig: &PSignature, index: &HostIndex<'_>) -> Vec<PNode<'p>> {
    // Pattern adjacency: node -> (own port, other node, other port) per edge.
    let mut adj: BTreeMap<NodeId, Vec<(&'p str, NodeId, &'p str)>> = BTreeMap::new();
    let mut degree: HashMap<(NodeId, &'p str), usize> = HashMap::new();
    for (_, e) in pattern.edges() {
        let [a, b] = e.ends();
        adj.entry(a.node).or_default().push((&a.port, b.node, &b.port));
        *degree.entry((a.node, a.port.as_str())).or_default() += 1;
        if a != b {
            adj.entry(b.node).or_default().push((&b.port, a.node, &a.port));
            *degree.entry((b.node, b.port.as_str())).or_default() += 1;
        }
    }
    let selectivity = |id: NodeId| -> usize {
        let n = pattern.node(id).expect("pattern node");
        if sig.is_node_var(&n.name) {
            index.all.len()
        } else {
            index.by_name.get(n.name.as_str()).map_or(0, Vec::len)
        }
    };

    // Visit order with anchors.
    let mut order: Vec<(NodeId, Option<(NodeId, &'p str)>)> = Vec::new();
    let mut placed: HashSet<NodeId> = HashSet::new();
    while placed.len() < pattern.node_count() {
        let root = pattern
            .node_ids()
            .filter(|id| !placed.contains(id))
            .min_by_key(|id| (selectivity(*id), *id))
            .expect("unplaced node");
        placed.insert(root);
        order.push((root, None));
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(cur) = queue.pop_front() {
            for &(own_port, other, _) in adj.get(&cur).map_or(&[][..], Vec::as_slice) {
                if placed.insert(other) {
                    order.push((other, Some((cur, own_port))));
                    queue.push_back(other);
                }
            }
        }
    }
    let pos: HashMap<NodeId, usize> = order.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();

    let mut plan: Vec<PNode<'p>> = order
        .iter()
        .map(|(id, _)| {
            let node = pattern.node(*id).expect("pattern node");
            let mut ports: Vec<PPort<'p>> = node
                .ports
                .iter()
                .map(|(name, p)| PPort {
                    name: name.as_str(),
                    is_var: sig.is_port_var(name),
                    strict: p.mode == Connectivity::Strict,
                    attrs: &p.attrs,
                    degree: degree.get(&(*id, name.as_str())).copied().unwrap_or(0),
                })
                .collect();
            ports.sort_by_key(|p| p.is_var);
            PNode {
                id: *id,
                name: node.name.as_str(),
                is_var: sig.is_node_var(&node.name),
                ports,
                anchor: None,
                back: Vec::new(),
            }
        })
        .collect();
    let port_idx = |plan: &[PNode<'p>], i: usize, name: &str| -> usize {
        plan[i]
            .ports
            .iter()
            .position(|p| p.name == name)
            .expect("port of pattern node")
    };
    for (i, (_, anchor)) in order.iter().enumerate() {
        if let Some((from, port)) = anchor {
            let fi = pos[from];
            let pi = port_idx(&plan, fi, port);
            plan[i].anchor = Some((fi, pi));
        }
    }
    let mut groups: BTreeMap<(usize, usize, usize, usize), usize> = BTreeMap::new();
    for (_, e) in pattern.edges() {
        let [a, b] = e.ends();
        let (ia, ib) = (pos[&a.node], pos[&b.node]);
        let (owner, own, other, oth) = if ia >= ib {
            (ia, a.port.as_str(), ib, b.port.as_str())
        } else {
            (ib, b.port.as_str(), ia, a.port.as_str())
        };
        let key = (owner, port_idx(&plan, owner, own), other, port_idx(&plan, other, oth));
        *groups.entry(key).or_default() += 1;
    }
    for ((owner, own_port, other, other_port), count) in groups {
        plan[owner].back.push(BackEdge {
            own_port,
            other,
            other_port,
            count,
        });
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::NodeDecl;

    fn sig() -> PSignature {
        PSignature::new()
            .declare("a", NodeDecl::new(["x", "y"]))
            .declare("b", NodeDecl::new(["x"]))
    }

    #[test]
    fn empty_pattern_is_an_error() {
        let s = sig();
        let host = LocatedGraph::whole(PortGraph::new());
        let pat = PortGraph::new();
        assert_eq!(
            find_matches(&MatchRequest::new(&pat, &host, &s)).unwrap_err(),
            MatchError::EmptyPattern
        );
    }

    #[test]
    fn strict_port_needs_free_host_port() {
        let s = sig();
        let mut g = PortGraph::new();
        let a1 = g.add_node(&s, "a").unwrap();
        let _a2 = g.add_node(&s, "a").unwrap();
        let b = g.add_node(&s, "b").unwrap();
        g.connect((a1, "x"), (b, "x")).unwrap();
        let host = LocatedGraph::whole(g);

        let mut pat = PortGraph::new();
        let pa = pat.add_node(&s, "a").unwrap();
        let strict = find_matches(&MatchRequest::new(&pat, &host, &s)).unwrap();
        assert_eq!(strict.len(), 1);

        pat.set_mode(pa, "x", Connectivity::Wildcard).unwrap();
        let loose = find_matches(&MatchRequest::new(&pat, &host, &s)).unwrap();
        assert_eq!(loose.len(), 2);
        for m in &loose {
            check_morphism(&pat, &host.graph, &s, m).unwrap();
        }
    }

    #[test]
    fn edges_must_be_preserved() {
        let s = sig();
        let mut g = PortGraph::new();
        let a = g.add_node(&s, "a").unwrap();
        let b = g.add_node(&s, "b").unwrap();
        let b2 = g.add_node(&s, "b").unwrap();
        g.connect((a, "x"), (b, "x")).unwrap();
        let host = LocatedGraph::whole(g);
        let mut pat = PortGraph::new();
        let pa = pat.add_node(&s, "a").unwrap();
        let pb = pat.add_node(&s, "b").unwrap();
        pat.connect((pa, "x"), (pb, "x")).unwrap();
        let ms = find_matches(&MatchRequest::new(&pat, &host, &s)).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].node_map[&pb], b);
        assert_ne!(ms[0].node_map[&pb], b2);
        assert_eq!(ms[0].edge_map.len(), 1);
    }

    #[test]
    fn variables_bind_consistently() {
        let mut s = sig().declare("X", NodeDecl::new(["x"]));
        s.node_vars.insert("X".into());
        let mut g = PortGraph::new();
        g.add_node(&s, "b").unwrap();
        g.add_node(&s, "b").unwrap();
        g.add_node(&s, "a").unwrap();
        let host = LocatedGraph::whole(g);
        let mut pat = PortGraph::new();
        pat.add_node(&s, "X").unwrap();
        pat.add_node(&s, "X").unwrap();
        let ms = find_matches(&MatchRequest::new(&pat, &host, &s)).unwrap();
        // Only the two b nodes share a name and a one-port interface.
        assert_eq!(ms.len(), 2);
        assert!(ms.iter().all(|m| m.var_bindings["X"] == "b"));
    }

    #[test]
    fn position_filter_and_limit() {
        let s = sig();
        let mut g = PortGraph::new();
        let ids: Vec<NodeId> = (0..5).map(|_| g.add_node(&s, "b").unwrap()).collect();
        let graph = g.clone();
        let host = LocatedGraph::new(g, Position::induced(&graph, [ids[3]].into())).unwrap();
        let mut pat = PortGraph::new();
        pat.add_node(&s, "b").unwrap();
        let ms = find_matches(&MatchRequest::new(&pat, &host, &s)).unwrap();
        assert_eq!(ms.len(), 1);
        let whole = LocatedGraph::whole(graph);
        let req = MatchRequest::new(&pat, &whole, &s).with_limit(2);
        assert_eq!(find_matches(&req).unwrap().len(), 2);
        assert_eq!(count_matches(&MatchRequest::new(&pat, &whole, &s)).unwrap(), 5);
        let third = nth_match(&MatchRequest::new(&pat, &whole, &s), 2).unwrap().unwrap();
        assert_eq!(third.node_map.values().next(), Some(&ids[2]));
    }

    #[test]
    fn disjoint_tuples_respect_adjacency() {
        let s = sig();
        let mut g = PortGraph::new();
        let b1 = g.add_node(&s, "b").unwrap();
        let b2 = g.add_node(&s, "b").unwrap();
        let _b3 = g.add_node(&s, "b").unwrap();
        g.connect((b1, "x"), (b2, "x")).unwrap();
        let host = LocatedGraph::whole(g);
        let mut pat = PortGraph::new();
        let pb = pat.add_node(&s, "b").unwrap();
        pat.set_mode(pb, "x", Connectivity::Wildcard).unwrap();
        let reqs: Vec<_> = (0..3).map(|_| MatchRequest::new(&pat, &host, &s)).collect();
        let got = find_disjoint_tuples(&reqs, 0, None, None).unwrap().unwrap();
        // b1 and b2 are joined by an edge, so only two images fit.
        assert_eq!(got.len(), 2);
        assert!(find_disjoint_tuples(&reqs, 3, None, None).unwrap().is_none());
    }
}
