//! Acceptance run: one PASS or FAIL line per primary criterion. Exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};

use axum::body::{to_bytes, Body};
use axum::http::Request;
use portrule::akap;
use portrule::derivation::{DerivationTree, NodeStatus, TreeEdge};
use portrule::model::Model;
use portrule::strategy::{parse_with_rules, run, EvalConfig, Status, StepEvent};
use portrule::{count_matches, find_matches, LocatedGraph, MatchRequest, Position};
use portrule_server::{router, ServiceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

const ORACLE_CASES: u64 = 1000;
const SEEDS: u64 = 20;
const PPICK_TRIALS: u64 = 10_000;
const P75_RANGE: (f64, f64) = (0.73, 0.77);
const P50_RANGE: (f64, f64) = (0.48, 0.52);

type Verdict = Result<String, String>;

fn matching_oracle() -> Verdict {
    let sig = support::signature();
    let mut with_matches = 0;
    for seed in 0..ORACLE_CASES {
        let case = support::random_case(&mut ChaCha8Rng::seed_from_u64(seed), &sig);
        let req = MatchRequest::new(&case.pattern, &case.host, &sig);
        let found = find_matches(&req).map_err(|e| format!("seed {seed}: {e}"))?;
        let expect = support::brute_force(&case.pattern, &case.host, &sig);
        if support::keys(&found) != expect || found.len() != expect.len() {
            return Err(format!("seed {seed}: engine {} matches, brute force {}", found.len(), expect.len()));
        }
        with_matches += usize::from(!expect.is_empty());
    }
    Ok(format!("{ORACLE_CASES} cases agree exactly, {with_matches} with at least one match"))
}

fn is_normal_form(m: &Model, g: &LocatedGraph) -> bool {
    let whole = g.with_position(Position::whole(&g.graph));
    m.rules
        .iter()
        .all(|r| count_matches(&MatchRequest::new(&r.lhs, &whole, &m.signature)).unwrap_or(1) == 0)
}

struct AkapRun {
    seed: u64,
    tree: DerivationTree,
    frontier: u64,
    status: Status,
}

fn akap_runs(m: &Model) -> Result<Vec<AkapRun>, String> {
    (0..SEEDS)
        .map(|seed| {
            let mut tree = DerivationTree::new(m.initial.clone());
            let out = tree
                .branch(0, akap::STRATEGY, m, &EvalConfig::with_seed(seed))
                .map_err(|e| format!("seed {seed}: {e}"))?;
            Ok(AkapRun {
                seed,
                tree,
                frontier: out.frontier,
                status: out.status,
            })
        })
        .collect()
}

fn conservation(m: &Model, runs: &[AkapRun]) -> Verdict {
    let count = |g: &LocatedGraph, name: &str| g.graph.count_by_name(&m.signature, name).unwrap();
    let mut states = 0;
    for r in runs {
        let path = r.tree.path(r.frontier).map_err(|e| e.to_string())?;
        let (mut camp, mut sa) = (usize::MAX, 0);
        for id in &path {
            let g = &r.tree.node(*id).unwrap().state;
            for (name, n) in [("AKAP", 10), ("PKA", 10), ("Raf-1", 10), ("PDE8", 13)] {
                if count(g, name) != n {
                    return Err(format!("seed {}: {name} = {} at G{id}", r.seed, count(g, name)));
                }
            }
            let (c, s) = (count(g, "cAMP"), count(g, "SA"));
            if c > camp || s < sa {
                return Err(format!("seed {}: cAMP or SA moved the wrong way at G{id}", r.seed));
            }
            (camp, sa) = (c, s);
            states += 1;
        }
        let r3 = r
            .tree
            .edges()
            .iter()
            .filter(|e| matches!(e, TreeEdge::Rule { rule, .. } if rule == "r3"))
            .count();
        if sa != r3 {
            return Err(format!("seed {}: SA = {sa} but r3 applied {r3} times", r.seed));
        }
    }
    Ok(format!("{} seeds, {states} states checked", runs.len()))
}

fn termination(m: &Model, runs: &[AkapRun]) -> Verdict {
    for r in runs {
        if r.status != Status::Id {
            return Err(format!("seed {}: strategy ended with {:?}", r.seed, r.status));
        }
        let leaf = r
            .tree
            .children(r.frontier)
            .iter()
            .any(|c| r.tree.node(*c).unwrap().status == NodeStatus::Failure);
        if !leaf {
            return Err(format!("seed {}: no failure leaf under the last state", r.seed));
        }
        let end = &r.tree.node(r.frontier).unwrap().state;
        if akap::free_camp(&end.graph) != 0 {
            return Err(format!("seed {}: {} free cAMP left", r.seed, akap::free_camp(&end.graph)));
        }
        if !is_normal_form(m, end) {
            return Err(format!("seed {}: a rule still applies", r.seed));
        }
    }
    let steps: Vec<usize> = runs.iter().map(|r| r.tree.depth(r.frontier).unwrap()).collect();
    Ok(format!(
        "{} runs end in a failure leaf at a normal form, {}..{} steps",
        runs.len(),
        steps.iter().min().unwrap(),
        steps.iter().max().unwrap()
    ))
}

fn first_rule(m: &Model, text: &str, seed: u64) -> Option<String> {
    let s = parse_with_rules(text, &m.rules).ok()?;
    let mut events = Vec::new();
    run(&s, &m.initial, m, &EvalConfig::with_seed(seed), &mut events).ok()?;
    events.into_iter().find_map(|e| match e {
        StepEvent::Applied { rules, .. } => Some(rules[0].rule.clone()),
        _ => None,
    })
}

fn ppick_statistics() -> Verdict {
    let m = akap::model_with(4, 1, 1);
    let freq = |text: &str| {
        let hits = (0..PPICK_TRIALS).filter(|s| first_rule(&m, text, *s).as_deref() == Some("r1")).count();
        hits as f64 / PPICK_TRIALS as f64
    };
    let f75 = freq("ppick(r1/0.75, r4/0.25)");
    let f50 = freq("ppick(r1/0.5, r4/0.5)");
    let ok75 = (P75_RANGE.0..=P75_RANGE.1).contains(&f75);
    let ok50 = (P50_RANGE.0..=P50_RANGE.1).contains(&f50);
    let msg = format!(
        "0.75-branch {f75:.4} in [{}, {}], 0.5-branch {f50:.4} in [{}, {}] over {PPICK_TRIALS} trials",
        P75_RANGE.0, P75_RANGE.1, P50_RANGE.0, P50_RANGE.1
    );
    if ok75 && ok50 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism() -> Verdict {
    let models = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/akap");
    let bundle = models.join("akap.bundle.json");
    let strat = models.join("akap.strat");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cli = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("tree{k}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_portrule"))
            .args(["run", "--model"])
            .arg(&bundle)
            .arg("--strategy")
            .arg(&strat)
            .args(["--seed", "42", "--out"])
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        if status.code() != Some(0) {
            return Err(format!("CLI exited with {status}"));
        }
        cli.push(fs::read(&out).map_err(|e| e.to_string())?);
    }
    if cli[0] != cli[1] {
        return Err("two CLI runs differ".into());
    }

    let bundle_text = fs::read_to_string(&bundle).map_err(|e| e.to_string())?;
    let strategy = fs::read_to_string(&strat).map_err(|e| e.to_string())?;
    let served = tokio::runtime::Runtime::new()
        .map_err(|e| e.to_string())?
        .block_on(async move {
            let app = router(ServiceConfig::default());
            let send = |method: &str, uri: String, body: Option<String>| {
                let app = app.clone();
                let req = Request::builder()
                    .method(method)
                    .uri(uri)
                    .header("content-type", "application/json")
                    .body(body.map_or_else(Body::empty, Body::from))
                    .unwrap();
                async move {
                    let resp = app.oneshot(req).await.unwrap();
                    to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec()
                }
            };
            let created = send("POST", "/sessions".into(), Some(format!("{{\"model\": {bundle_text}}}"))).await;
            let created: serde_json::Value = serde_json::from_slice(&created).unwrap();
            let id = created["id"].as_str().unwrap().to_string();
            let body = serde_json::json!({"node": 0, "strategy": strategy, "seed": 42}).to_string();
            send("POST", format!("/sessions/{id}/branch"), Some(body)).await;
            send("GET", format!("/sessions/{id}/tree"), None).await
        });
    if served != cli[0] {
        return Err("service tree differs from the CLI tree".into());
    }
    Ok(format!("CLI twice and service agree byte for byte ({} bytes)", cli[0].len()))
}

struct Check {
    production: &'static str,
    strategy: &'static str,
    expect: Status,
    /// Free cAMP left afterwards.
    free_camp: Option<usize>,
}

fn combinators() -> Verdict {
    // Small scaffold model: 8 free cAMP, 2 scaffolds, 1 free PDE8.
    let m = akap::model_with(8, 2, 1);
    let checks = [
        Check { production: "id", strategy: "id", expect: Status::Id, free_camp: Some(8) },
        Check { production: "fail", strategy: "fail", expect: Status::Fail, free_camp: Some(8) },
        Check { production: "rule", strategy: "r4", expect: Status::Id, free_camp: Some(7) },
        Check { production: "rule without match", strategy: "r2", expect: Status::Fail, free_camp: Some(8) },
        Check { production: "sequence", strategy: "r4; r4", expect: Status::Id, free_camp: Some(6) },
        Check { production: "sequence rollback", strategy: "r4; fail", expect: Status::Fail, free_camp: Some(8) },
        Check { production: "or", strategy: "r2 + r4", expect: Status::Id, free_camp: Some(7) },
        Check { production: "ppick fallback", strategy: "ppick(r2/0.9, r4/0.1)", expect: Status::Id, free_camp: Some(7) },
        Check { production: "while max", strategy: "while(r4) do(r4) min(0) max(2)", expect: Status::Id, free_camp: Some(6) },
        Check { production: "while min", strategy: "while(r4) do(r4) min(9) max(-1)", expect: Status::Fail, free_camp: Some(8) },
        Check { production: "if purity", strategy: "if(r4) then(id) else(fail)", expect: Status::Id, free_camp: Some(8) },
        Check { production: "empty", strategy: "empty(property(name=SA, crtGraph))", expect: Status::Id, free_camp: None },
        Check { production: "empty non-empty", strategy: "empty(property(name=cAMP, crtGraph))", expect: Status::Fail, free_camp: None },
        Check { production: "setpos", strategy: "setpos(property(name=AKAP, crtGraph)); r4", expect: Status::Fail, free_camp: Some(8) },
        Check { production: "par", strategy: "par(r4, r4)", expect: Status::Id, free_camp: Some(6) },
        Check { production: "par with fail", strategy: "par(r4, fail)", expect: Status::Fail, free_camp: Some(8) },
        Check { production: "ior", strategy: "ior(r2, r4)", expect: Status::Id, free_camp: Some(7) },
        Check { production: "multi", strategy: "multi(r4, 2, 3)", expect: Status::Id, free_camp: Some(5) },
        Check { production: "multi below min", strategy: "multi(r4, 4, 5)", expect: Status::Fail, free_camp: Some(8) },
    ];
    for c in &checks {
        let s = parse_with_rules(c.strategy, &m.rules).map_err(|e| format!("{}: {e}", c.production))?;
        let (status, end) = run(&s, &m.initial, &m, &EvalConfig::with_seed(1), &mut ())
            .map_err(|e| format!("{}: {e}", c.production))?;
        let free = akap::free_camp(&end.graph);
        if status != c.expect || c.free_camp.is_some_and(|f| f != free) {
            return Err(format!("{}: got {status:?} with {free} free cAMP", c.production));
        }
    }

    // Atomic groups collapse to one tree node.
    let mut tree = DerivationTree::new(m.initial.clone());
    let out = tree.branch(0, "atomic(r4; r4)", &m, &EvalConfig::default()).map_err(|e| e.to_string())?;
    if out.new_nodes.len() != 1 || tree.node(out.frontier).unwrap().state.graph.count_by_name(&m.signature, "cAMP").unwrap() != 6 {
        return Err("atomic: group did not collapse to one step".into());
    }

    // Parallel images are disjoint.
    let s = parse_with_rules("par(r4, r4)", &m.rules).unwrap();
    let mut events = Vec::new();
    run(&s, &m.initial, &m, &EvalConfig::default(), &mut events).map_err(|e| e.to_string())?;
    let Some(StepEvent::Applied { rules, .. }) = events.first() else {
        return Err("par: no step".into());
    };
    let a: BTreeSet<_> = rules[0].morphism.image_nodes();
    if rules.len() != 2 || !a.is_disjoint(&rules[1].morphism.image_nodes()) {
        return Err("par: images overlap".into());
    }

    // Focusing forms, from the first scaffold protein.
    let size = |text: &str| -> Result<usize, String> {
        let s = parse_with_rules(&format!("setpos(property(name=AKAP, crtGraph)); setpos({text})"), &m.rules)
            .map_err(|e| e.to_string())?;
        let (_, end) = run(&s, &m.initial, &m, &EvalConfig::default(), &mut ()).map_err(|e| e.to_string())?;
        Ok(end.position.nodes.len())
    };
    let total = m.initial.graph.node_count();
    let focus = [
        ("crtGraph", total),
        ("crtPos", 2),
        ("allSuc", 6),
        ("oneSuc", 1),
        ("nextSuc", 0),
        ("union(crtPos, allSuc)", 8),
        ("inter(allSuc, property(name=PKA, crtGraph))", 2),
        ("minus(crtGraph, crtPos)", total - 2),
        ("complement(union(crtPos, allSuc))", total - 8),
        ("property(degree>=3, crtGraph)", 2),
        ("property(attr(phos, state)=-, crtGraph)", 5),
    ];
    for (text, want) in focus {
        let got = size(text)?;
        if got != want {
            return Err(format!("focus {text}: {got} nodes, expected {want}"));
        }
    }
    Ok(format!(
        "{} strategy checks, atomic collapse, par disjointness, {} focus forms",
        checks.len(),
        focus.len()
    ))
}

fn sa_curve(m: &Model, runs: &[AkapRun]) -> Verdict {
    let r = &runs[0];
    let series = r.tree.series(r.frontier, "SA", &m.signature).map_err(|e| e.to_string())?;
    let v: Vec<usize> = series.points.iter().map(|p| p.value).collect();
    let rises = v.windows(2).filter(|w| w[1] > w[0]).count();
    let plateaus = v.windows(2).filter(|w| w[1] == w[0]).count();
    if v.windows(2).any(|w| w[1] < w[0]) {
        return Err(format!("seed {}: SA decreases", r.seed));
    }
    if rises == 0 || plateaus == 0 {
        return Err(format!("seed {}: {rises} rises, {plateaus} flat steps", r.seed));
    }
    Ok(format!(
        "seed {}: non-decreasing over {} steps, {rises} rises, {plateaus} flat steps, final SA {}",
        r.seed,
        v.len() - 1,
        v.last().unwrap()
    ))
}

fn main() -> ExitCode {
    let m = akap::model();
    let runs = akap_runs(&m);
    let with_runs = |f: fn(&Model, &[AkapRun]) -> Verdict| match &runs {
        Ok(r) => f(&m, r),
        Err(e) => Err(e.clone()),
    };
    let results = [
        ("matching oracle", matching_oracle()),
        ("AKAP conservation", with_runs(conservation)),
        ("termination and normal form", with_runs(termination)),
        ("ppick statistics", ppick_statistics()),
        ("determinism", determinism()),
        ("combinator semantics", combinators()),
        ("SA curve shape", with_runs(sa_curve)),
    ];
    let mut failed = false;
    for (name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed = true;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
