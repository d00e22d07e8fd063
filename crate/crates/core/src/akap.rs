//! The scaffold-protein model: cAMP, PKA, PDE8 and Raf-1 gathered on AKAP
//! scaffolds, with four reactions and the strategy that runs them to a normal
//! form.
//!
//! The signature and rules live in `fixtures/akap/` so they can be edited
//! without touching code; the initial graph is generated here.

use crate::doc::{from_json, RuleDoc, SignatureDoc};
use crate::graph::{NodeId, PortGraph};
use crate::model::Model;
use crate::rule::RewriteRule;
use crate::signature::PSignature;

pub const SIGNATURE_JSON: &str = include_str!("../fixtures/akap/signature.json");
pub const RULES_JSON: &str = include_str!("../fixtures/akap/rules.json");
/// Rule groups as alternatives: each iteration applies whichever group fires.
pub const STRATEGY: &str = include_str!("../fixtures/akap/akap.strat");
/// The same groups in sequence. An iteration fails as soon as one group has
/// nothing to apply, so this form can stop before a normal form is reached.
pub const SEQUENTIAL_STRATEGY: &str =
    "repeat*(ppick(r1/0.5, r4/0.5); ppick(r2/0.5, r4/0.5); ppick(r3/0.75, r4/0.25))";

pub const FREE_CAMP: usize = 200;
pub const SCAFFOLDS: usize = 10;
pub const FREE_PDE8: usize = 3;

/// Attribute key carrying the phosphorylation state.
pub const STATE: &str = "state";

pub fn signature() -> PSignature {
    from_json::<SignatureDoc>(SIGNATURE_JSON)
        .and_then(|d| d.to_signature())
        .expect("bundled signature is valid")
}

pub fn rules() -> Vec<RewriteRule> {
    let docs: Vec<RuleDoc> = from_json(RULES_JSON).expect("bundled rules parse");
    docs.iter()
        .enumerate()
        .map(|(i, d)| d.to_rule(&format!("rules[{i}]")).expect("bundled rules build"))
        .collect()
}

/// Free cAMP molecules, complete scaffolds (AKAP holding an inactive PKA and
/// unphosphorylated PDE8 and Raf-1), and unphosphorylated PDE8 off-scaffold.
pub fn initial_graph(sig: &PSignature, free_camp: usize, scaffolds: usize, free_pde8: usize) -> PortGraph {
    let mut g = PortGraph::new();
    let unphosphorylated = |g: &mut PortGraph, name: &str| -> NodeId {
        let id = g.add_node(sig, name).expect("declared");
        g.set_attr(sig, id, "phos", STATE, "-").expect("allowed");
        id
    };
    for _ in 0..free_camp {
        g.add_node(sig, "cAMP").expect("declared");
    }
    for _ in 0..scaffolds {
        let akap = g.add_node(sig, "AKAP").expect("declared");
        let pka = g.add_node(sig, "PKA").expect("declared");
        let pde8 = unphosphorylated(&mut g, "PDE8");
        let raf = unphosphorylated(&mut g, "Raf-1");
        g.connect((akap, "pka"), (pka, "akap")).expect("ports exist");
        g.connect((akap, "pde8"), (pde8, "akap")).expect("ports exist");
        g.connect((akap, "raf"), (raf, "akap")).expect("ports exist");
    }
    for _ in 0..free_pde8 {
        unphosphorylated(&mut g, "PDE8");
    }
    g
}

pub fn model_with(free_camp: usize, scaffolds: usize, free_pde8: usize) -> Model {
    let sig = signature();
    let g = initial_graph(&sig, free_camp, scaffolds, free_pde8);
    Model::new(sig, g, None, rules()).expect("bundled model is valid")
}

/// The model with the standard initial graph.
pub fn model() -> Model {
    model_with(FREE_CAMP, SCAFFOLDS, FREE_PDE8)
}

/// Number of cAMP molecules whose site is unbound.
pub fn free_camp(g: &PortGraph) -> usize {
    g.nodes()
        .filter(|(id, n)| n.name == "cAMP" && g.port_degree(*id, "s") == 0)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::check_rule;

    #[test]
    fn fixture_is_well_formed() {
        let sig = signature();
        for r in rules() {
            assert!(check_rule(&r, &sig).is_empty(), "{}: {:?}", r.name, check_rule(&r, &sig));
        }
        let m = model();
        let g = &m.initial.graph;
        assert_eq!(g.count_by_name(&sig, "cAMP").unwrap(), 200);
        assert_eq!(g.count_by_name(&sig, "PDE8").unwrap(), 13);
        assert_eq!(g.count_by_name(&sig, "SA").unwrap(), 0);
        assert_eq!(free_camp(g), 200);
    }

    #[test]
    fn every_rule_node_but_the_consumed_camp_is_preserved() {
        for r in rules() {
            let consumed = r.lhs.node_count() - r.preserved().len();
            let expect = if r.name == "r1" { 0 } else { 1 };
            assert_eq!(consumed, expect, "{}", r.name);
        }
    }
}
