//! Brute-force matching oracle and random matching cases.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use portrule::{Connectivity, LocatedGraph, Morphism, NodeDecl, NodeId, PSignature, PortGraph, PortRef, Position};
use rand::Rng;

/// Node map and port map: what identifies a match.
pub type Key = (BTreeMap<NodeId, NodeId>, BTreeMap<NodeId, BTreeMap<String, String>>);

/// Three constant names, a node variable `X` whose second port is the port
/// variable `p`, and a one-port node variable `Y`.
pub fn signature() -> PSignature {
    let mut sig = PSignature::new()
        .declare("A", NodeDecl::new(["a", "b"]).with_attr("a", ["x", "y"]))
        .declare("B", NodeDecl::new(["a", "c"]))
        .declare("C", NodeDecl::new(["a"]))
        .declare("X", NodeDecl::new(["a", "p"]))
        .declare("Y", NodeDecl::new(["a"]));
    sig.node_vars.extend(["X".to_string(), "Y".to_string()]);
    sig.port_vars.insert("p".to_string());
    sig
}

pub struct Case {
    pub host: LocatedGraph,
    pub pattern: PortGraph,
}

fn random_graph(rng: &mut impl Rng, sig: &PSignature, names: &[&str], max_nodes: usize, max_edges: usize) -> PortGraph {
    let mut g = PortGraph::new();
    let n = rng.random_range(1..=max_nodes);
    let mut ids = Vec::new();
    for _ in 0..n {
        let name = names[rng.random_range(0..names.len())];
        let id = g.add_node(sig, name).unwrap();
        if name == "A" && rng.random_bool(0.6) {
            let v = if rng.random_bool(0.5) { "x" } else { "y" };
            g.set_attr(sig, id, "a", "state", v).unwrap();
        }
        ids.push(id);
    }
    for _ in 0..rng.random_range(0..=max_edges) {
        let a = ids[rng.random_range(0..ids.len())];
        let b = ids[rng.random_range(0..ids.len())];
        let pa = pick_port(rng, &g, a);
        let pb = pick_port(rng, &g, b);
        g.connect((a, &pa), (b, &pb)).unwrap();
    }
    g
}

fn pick_port(rng: &mut impl Rng, g: &PortGraph, id: NodeId) -> String {
    let ports: Vec<&String> = g.node(id).unwrap().ports.keys().collect();
    ports[rng.random_range(0..ports.len())].clone()
}

/// Host of at most 8 nodes with a random position; pattern of at most 3.
pub fn random_case(rng: &mut impl Rng, sig: &PSignature) -> Case {
    let host = random_graph(rng, sig, &["A", "B", "C"], 8, 10);
    let position = if rng.random_bool(0.5) {
        Position::whole(&host)
    } else {
        let nodes: BTreeSet<NodeId> = host.node_ids().filter(|_| rng.random_bool(0.5)).collect();
        Position::induced(&host, nodes)
    };
    let mut pattern = if rng.random_bool(0.5) {
        random_graph(rng, sig, &["A", "B", "C", "X", "Y"], 3, 3)
    } else {
        carve(rng, sig, &host)
    };
    let ports: Vec<(NodeId, String)> = pattern
        .nodes()
        .flat_map(|(id, n)| n.ports.keys().map(move |p| (id, p.clone())))
        .collect();
    for (id, p) in ports {
        if rng.random_bool(0.85) {
            pattern.set_mode(id, &p, Connectivity::Wildcard).unwrap();
        }
    }
    Case {
        host: LocatedGraph::new(host, position).unwrap(),
        pattern,
    }
}

/// Copies up to three host nodes and some of the edges among them, turning
/// names into variables at random.
fn carve(rng: &mut impl Rng, sig: &PSignature, host: &PortGraph) -> PortGraph {
    let mut picked: Vec<NodeId> = host.node_ids().collect();
    let start = picked[rng.random_range(0..picked.len())];
    let mut chosen = vec![start];
    picked.retain(|n| *n != start);
    while chosen.len() < 3 && rng.random_bool(0.7) {
        let near: Vec<NodeId> = chosen
            .iter()
            .flat_map(|c| host.neighbours(*c))
            .filter(|n| !chosen.contains(n))
            .collect();
        let pool = if near.is_empty() { &picked } else { &near };
        if pool.is_empty() {
            break;
        }
        let n = pool[rng.random_range(0..pool.len())];
        chosen.push(n);
        picked.retain(|x| *x != n);
    }
    let mut g = PortGraph::new();
    let mut map = BTreeMap::new();
    for &h in &chosen {
        let hn = host.node(h).unwrap();
        let name = match hn.name.as_str() {
            "C" if rng.random_bool(0.3) => "Y",
            "A" | "B" if rng.random_bool(0.3) => "X",
            other => other,
        };
        let id = g.add_node(sig, name).unwrap();
        if name == "A" && rng.random_bool(0.7) {
            if let Some(v) = hn.attr("a", "state") {
                g.set_attr(sig, id, "a", "state", v).unwrap();
            }
        }
        map.insert(h, id);
    }
    let port = |g: &PortGraph, id: NodeId, hp: &str| -> String {
        if g.node(id).unwrap().ports.contains_key(hp) { hp.to_string() } else { "p".to_string() }
    };
    for (_, e) in host.edges() {
        let [a, b] = e.ends();
        if let (Some(&x), Some(&y)) = (map.get(&a.node), map.get(&b.node)) {
            if rng.random_bool(0.8) {
                let (pa, pb) = (port(&g, x, &a.port), port(&g, y, &b.port));
                g.connect((x, &pa), (y, &pb)).unwrap();
            }
        }
    }
    g
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

fn end_key(r: &PortRef) -> (u64, String) {
    (r.node.0, r.port.clone())
}

type EndPair = ((u64, String), (u64, String));

fn edge_counts(g: &PortGraph, map: impl Fn(&PortRef) -> PortRef) -> BTreeMap<EndPair, usize> {
    let mut out = BTreeMap::new();
    for (_, e) in g.edges() {
        let [a, b] = e.ends();
        let (a, b) = (end_key(&map(a)), end_key(&map(b)));
        let k = if a <= b { (a, b) } else { (b, a) };
        *out.entry(k).or_default() += 1;
    }
    out
}

/// Every match of `pattern` in `host`, found by trying all injective node
/// maps and all port bijections.
pub fn brute_force(pattern: &PortGraph, host: &LocatedGraph, sig: &PSignature) -> BTreeSet<Key> {
    let pnodes: Vec<NodeId> = pattern.node_ids().collect();
    let hnodes: Vec<NodeId> = host.graph.node_ids().collect();
    let mut out = BTreeSet::new();
    let mut node_map = BTreeMap::new();
    let mut port_map = BTreeMap::new();
    assign(
        pattern, host, sig, &pnodes, &hnodes, 0, &mut node_map, &mut port_map, &mut BTreeMap::new(), &mut out,
    );
    out
}

#[allow(clippy::too_many_arguments)]
fn assign(
    pattern: &PortGraph,
    host: &LocatedGraph,
    sig: &PSignature,
    pnodes: &[NodeId],
    hnodes: &[NodeId],
    i: usize,
    node_map: &mut BTreeMap<NodeId, NodeId>,
    port_map: &mut BTreeMap<NodeId, BTreeMap<String, String>>,
    bindings: &mut BTreeMap<String, String>,
    out: &mut BTreeSet<Key>,
) {
    if i == pnodes.len() {
        if complete(pattern, host, node_map, port_map) {
            out.insert((node_map.clone(), port_map.clone()));
        }
        return;
    }
    let pid = pnodes[i];
    let pn = pattern.node(pid).unwrap();
    for &hid in hnodes {
        if node_map.values().any(|h| *h == hid) {
            continue;
        }
        let hn = host.graph.node(hid).unwrap();
        let node_var = sig.is_node_var(&pn.name);
        if !node_var && pn.name != hn.name {
            continue;
        }
        if node_var && bindings.get(&pn.name).is_some_and(|b| *b != hn.name) {
            continue;
        }
        if pn.ports.len() != hn.ports.len() {
            continue;
        }
        let pports: Vec<String> = pn.ports.keys().cloned().collect();
        let hports: Vec<String> = hn.ports.keys().cloned().collect();
        for perm in permutations(&hports) {
            let mut b = bindings.clone();
            if node_var {
                b.insert(pn.name.clone(), hn.name.clone());
            }
            let mut ok = true;
            for (pp, hp) in pports.iter().zip(&perm) {
                if sig.is_port_var(pp) {
                    let key = format!("port:{pp}");
                    if b.get(&key).is_some_and(|x| x != hp) {
                        ok = false;
                        break;
                    }
                    b.insert(key, hp.clone());
                } else if pp != hp {
                    ok = false;
                    break;
                }
                let want = &pn.ports[pp].attrs;
                let have = &hn.ports[hp].attrs;
                if want.iter().any(|(k, v)| have.get(k) != Some(v)) {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            node_map.insert(pid, hid);
            port_map.insert(pid, pports.iter().cloned().zip(perm.iter().cloned()).collect());
            assign(pattern, host, sig, pnodes, hnodes, i + 1, node_map, port_map, &mut b, out);
            node_map.remove(&pid);
            port_map.remove(&pid);
        }
    }
}

fn complete(
    pattern: &PortGraph,
    host: &LocatedGraph,
    node_map: &BTreeMap<NodeId, NodeId>,
    port_map: &BTreeMap<NodeId, BTreeMap<String, String>>,
) -> bool {
    if !node_map.values().any(|h| host.position.nodes.contains(h)) {
        return false;
    }
    let image = |r: &PortRef| PortRef::new(node_map[&r.node], &port_map[&r.node][&r.port]);
    let want = edge_counts(pattern, image);
    let have = edge_counts(&host.graph, |r| r.clone());
    if want.iter().any(|(k, n)| have.get(k).copied().unwrap_or(0) < *n) {
        return false;
    }
    for (pid, pn) in pattern.nodes() {
        for (pp, port) in &pn.ports {
            if port.mode != Connectivity::Strict {
                continue;
            }
            let h = image(&PortRef::new(pid, pp));
            if pattern.incident(pid, pp).count() != host.graph.incident(h.node, &h.port).count() {
                return false;
            }
        }
    }
    true
}

pub fn keys(ms: &[Morphism]) -> BTreeSet<Key> {
    ms.iter().map(Morphism::key).collect()
}
