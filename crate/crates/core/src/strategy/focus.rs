use std::collections::BTreeSet;

use crate::error::GraphError;
use crate::graph::{Node, NodeId, PortGraph};
use crate::position::{LocatedGraph, Position, SetOp};
use crate::signature::PSignature;

use super::ast::{Focus, Predicate};

impl Predicate {
    pub fn holds(&self, graph: &PortGraph, id: NodeId, node: &Node) -> bool {
        match self {
            Predicate::NameIs(n) => node.name == *n,
            Predicate::AttrIs { port, key, value } => node.attr(port, key) == Some(value.as_str()),
            Predicate::Degree(cmp, k) => cmp.holds(graph.node_degree(id), *k),
        }
    }
}

/// Evaluates a focus expression. `choose(n)` picks an index below `n`; it is
/// called once per `oneSuc` with a non-empty successor set.
pub fn eval_focus_with(
    focus: &Focus,
    state: &LocatedGraph,
    sig: &PSignature,
    choose: &mut dyn FnMut(usize) -> usize,
) -> Result<Position, GraphError> {
    let g = &*state.graph;
    Ok(match focus {
        Focus::CrtGraph => Position::whole(g),
        Focus::CrtPos => state.position.clone(),
        Focus::AllSuc => Position::induced(g, successors(g, &state.position, |_| None, false)),
        Focus::OneSuc => {
            let all: Vec<NodeId> = successors(g, &state.position, |_| None, false).into_iter().collect();
            if all.is_empty() {
                Position::empty()
            } else {
                let k = choose(all.len());
                Position::induced(g, [all[k]].into())
            }
        }
        Focus::NextSuc => {
            let next = |name: &str| sig.decl(name).and_then(|d| d.next_port.clone());
            Position::induced(g, successors(g, &state.position, next, true))
        }
        Focus::Property(pred, inner) => {
            let mut p = eval_focus_with(inner, state, sig, choose)?;
            p.nodes
                .retain(|id| g.node(*id).is_some_and(|n| pred.holds(g, *id, n)));
            p.edges.retain(|e| {
                g.edge(*e)
                    .is_some_and(|edge| edge.ends().iter().all(|end| p.nodes.contains(&end.node)))
            });
            p
        }
        Focus::Union(a, b) => binary(a, b, SetOp::Union, state, sig, choose)?,
        Focus::Intersection(a, b) => binary(a, b, SetOp::Intersection, state, sig, choose)?,
        Focus::Minus(a, b) => binary(a, b, SetOp::Minus, state, sig, choose)?,
        Focus::Complement(a) => {
            let p = eval_focus_with(a, state, sig, choose)?;
            crate::position::position_complement(&p, g)?
        }
    })
}

fn binary(
    a: &Focus,
    b: &Focus,
    op: SetOp,
    state: &LocatedGraph,
    sig: &PSignature,
    choose: &mut dyn FnMut(usize) -> usize,
) -> Result<Position, GraphError> {
    let pa = eval_focus_with(a, state, sig, choose)?;
    let pb = eval_focus_with(b, state, sig, choose)?;
    crate::position::position_op(&pa, &pb, op, &state.graph)
}

/// Nodes joined by an edge to a node of `p`. With `only_next`, an edge
/// counts only when it leaves the position node through that node's
/// designated port.
fn successors(
    g: &PortGraph,
    p: &Position,
    next_port: impl Fn(&str) -> Option<String>,
    only_next: bool,
) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    for (_, e) in g.edges() {
        let [a, b] = e.ends();
        for (from, to) in [(a, b), (b, a)] {
            if !p.nodes.contains(&from.node) {
                continue;
            }
            if only_next {
                let name = g.node(from.node).map(|n| n.name.as_str()).unwrap_or_default();
                if next_port(name).as_deref() != Some(from.port.as_str()) {
                    continue;
                }
            }
            out.insert(to.node);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::NodeDecl;

    fn chain() -> (PSignature, PortGraph, [NodeId; 3]) {
        let sig = PSignature::new().declare("v", NodeDecl::new(["l", "r"]).with_next_port("r"));
        let mut g = PortGraph::new();
        let x = g.add_node(&sig, "v").unwrap();
        let y = g.add_node(&sig, "v").unwrap();
        let z = g.add_node(&sig, "v").unwrap();
        g.connect((x, "r"), (y, "l")).unwrap();
        g.connect((y, "r"), (z, "l")).unwrap();
        (sig, g, [x, y, z])
    }

    fn at(g: &PortGraph, nodes: &[NodeId]) -> LocatedGraph {
        let p = Position::induced(g, nodes.iter().copied().collect());
        LocatedGraph::new(g.clone(), p).unwrap()
    }

    #[test]
    fn successors_of_chain_end() {
        let (sig, g, [x, y, z]) = chain();
        let st = at(&g, &[x]);
        let p = eval_focus_with(&Focus::AllSuc, &st, &sig, &mut |_| 0).unwrap();
        assert_eq!(p.nodes, [y].into());
        let st = at(&g, &[y]);
        let p = eval_focus_with(&Focus::AllSuc, &st, &sig, &mut |_| 0).unwrap();
        assert_eq!(p.nodes, [x, z].into());
        let p = eval_focus_with(&Focus::NextSuc, &st, &sig, &mut |_| 0).unwrap();
        assert_eq!(p.nodes, [z].into());
        let p = eval_focus_with(&Focus::OneSuc, &st, &sig, &mut |n| n - 1).unwrap();
        assert_eq!(p.nodes, [z].into());
    }

    #[test]
    fn property_filters_with_induced_edges() {
        let (sig, g, [x, y, _]) = chain();
        let st = at(&g, &[]);
        let f = Focus::Property(
            Predicate::Degree(super::super::ast::Cmp::Le, 1),
            Box::new(Focus::CrtGraph),
        );
        let p = eval_focus_with(&f, &st, &sig, &mut |_| 0).unwrap();
        assert_eq!(p.nodes.len(), 2);
        assert!(p.edges.is_empty());
        let f = Focus::Complement(Box::new(Focus::CrtPos));
        let st = at(&g, &[x, y]);
        let p = eval_focus_with(&f, &st, &sig, &mut |_| 0).unwrap();
        assert_eq!(p.nodes.len(), 1);
    }
}
