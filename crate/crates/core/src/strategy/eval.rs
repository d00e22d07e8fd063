//! Evaluation of graph programs.
//!
//! A failing strategy hands back the located graph it was given, so every
//! construct is transactional. Sub-strategies whose outcome decides what
//! happens next (the operands of `+`, `ppick` branches, loop conditions and
//! bodies, `if` conditions) run as trials: their events are buffered and only
//! forwarded when the trial is kept.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, GraphError, MatchError, RewriteError};
use crate::matcher::{count_matches, find_disjoint_tuples, MatchRequest, MatchSet, Morphism};
use crate::model::Model;
use crate::position::LocatedGraph;
use crate::rule::{apply, apply_parallel, RewriteRule};

use super::ast::{Focus, Strategy};
use super::focus::eval_focus_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Choices are drawn once and never revisited.
    #[default]
    Committed,
    /// On failure, earlier match and `+` choices are revisited depth-first.
    Deep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Rule applications plus loop iterations allowed in one run.
    pub step_budget: u64,
    pub search: SearchMode,
    /// Reruns allowed in deep search.
    pub deep_budget: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            step_budget: 100_000,
            search: SearchMode::Committed,
            deep_budget: 10_000,
        }
    }
}

impl EvalConfig {
    pub fn with_seed(seed: u64) -> Self {
        EvalConfig {
            seed,
            ..EvalConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Id,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedRule {
    pub rule: String,
    pub morphism: Morphism,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopExitReason {
    ConditionFailed,
    BodyFailed,
    MaxReached,
}

impl LoopExitReason {
    /// The loop stopped because nothing more could be applied.
    pub fn is_failure(self) -> bool {
        self != LoopExitReason::MaxReached
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    /// One rewriting step; several rules when applied in parallel.
    Applied { rules: Vec<AppliedRule>, state: LocatedGraph },
    Refocus { state: LocatedGraph },
    AtomicBegin,
    AtomicEnd,
    /// An outermost loop finished.
    LoopExit { reason: LoopExitReason, state: LocatedGraph },
}

pub trait StepSink {
    fn event(&mut self, e: StepEvent);
}

impl StepSink for Vec<StepEvent> {
    fn event(&mut self, e: StepEvent) {
        self.push(e);
    }
}

impl StepSink for () {
    fn event(&mut self, _: StepEvent) {}
}

impl<F: FnMut(StepEvent)> StepSink for F {
    fn event(&mut self, e: StepEvent) {
        self(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphProgram {
    pub strategy: Strategy,
    pub initial: LocatedGraph,
    pub state: LocatedGraph,
    pub status: Status,
    /// Steps already reported by `step`.
    pub revealed: usize,
}

impl GraphProgram {
    pub fn new(strategy: Strategy, state: LocatedGraph) -> Self {
        GraphProgram {
            strategy,
            initial: state.clone(),
            state,
            status: Status::Running,
            revealed: 0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.status != Status::Running
    }
}

/// Runs the program to a terminal status. Events of steps already revealed
/// by `step` are not reported again.
pub fn eval(
    program: &GraphProgram,
    model: &Model,
    cfg: &EvalConfig,
    sink: &mut dyn StepSink,
) -> Result<GraphProgram, EvalError> {
    drive(program, model, cfg, sink, None)
}

/// Advances past one rewriting step, or to a terminal status. An atomic
/// group counts as one step.
pub fn step(
    program: &GraphProgram,
    model: &Model,
    cfg: &EvalConfig,
    sink: &mut dyn StepSink,
) -> Result<GraphProgram, EvalError> {
    drive(program, model, cfg, sink, Some(program.revealed + 1))
}

/// Evaluates `strategy` on `state` and returns the terminal status and graph.
pub fn run(
    strategy: &Strategy,
    state: &LocatedGraph,
    model: &Model,
    cfg: &EvalConfig,
    sink: &mut dyn StepSink,
) -> Result<(Status, LocatedGraph), EvalError> {
    let p = eval(&GraphProgram::new(strategy.clone(), state.clone()), model, cfg, sink)?;
    Ok((p.status, p.state))
}

fn drive(
    program: &GraphProgram,
    model: &Model,
    cfg: &EvalConfig,
    sink: &mut dyn StepSink,
    target: Option<usize>,
) -> Result<GraphProgram, EvalError> {
    if program.is_terminal() {
        return Err(EvalError::NotRunning);
    }
    let mut root = Root {
        skip: program.revealed,
        target,
        steps: 0,
        depth: 0,
        group: None,
        sink,
    };
    let outcome = match cfg.search {
        SearchMode::Committed => {
            let mut r = Run::new(model, cfg, Output::Feed(&mut root), None);
            r.run(&program.strategy, &program.initial)
        }
        SearchMode::Deep => {
            let (out, events) = deep_search(program, model, cfg)?;
            let mut replay = Ok(out);
            for e in events {
                if let Err(s) = root.feed(e) {
                    replay = Err(Halt::Suspend(s));
                    break;
                }
            }
            replay
        }
    };
    let mut next = program.clone();
    match outcome {
        Ok(out) => {
            next.status = if out.ok { Status::Id } else { Status::Fail };
            next.state = out.state;
            next.revealed = root.steps;
        }
        Err(Halt::Suspend(state)) => {
            next.state = state;
            next.revealed = root.steps;
        }
        Err(Halt::Error(e)) => return Err(e),
    }
    Ok(next)
}

fn deep_search(
    program: &GraphProgram,
    model: &Model,
    cfg: &EvalConfig,
) -> Result<(Out, Vec<StepEvent>), EvalError> {
    let mut forced: Vec<usize> = Vec::new();
    let mut first: Option<(Out, Vec<StepEvent>)> = None;
    let mut reruns = 0u64;
    loop {
        let mut events = Vec::new();
        let (out, trace) = {
            let mut r = Run::new(model, cfg, Output::Collect(&mut events), Some(forced));
            let out = r.run(&program.strategy, &program.initial);
            (out, r.trace.take().unwrap_or_default())
        };
        let out = match out {
            Ok(out) => out,
            Err(Halt::Error(e)) => return Err(e),
            Err(Halt::Suspend(_)) => unreachable!("collecting runs never suspend"),
        };
        if out.ok {
            return Ok((out, events));
        }
        let first = first.get_or_insert((out, events));
        let Some(i) = trace.iter().rposition(|c| c.offset + 1 < c.n) else {
            return Ok(first.clone());
        };
        forced = trace[..i].iter().map(|c| c.offset).collect();
        forced.push(trace[i].offset + 1);
        reruns += 1;
        if reruns > cfg.deep_budget {
            return Err(EvalError::DeepBudgetExhausted(cfg.deep_budget));
        }
    }
}

/// Counts committed steps, forwards events past the revealed prefix and
/// stops the run when the target step completes.
struct Root<'s> {
    skip: usize,
    target: Option<usize>,
    steps: usize,
    depth: usize,
    group: Option<LocatedGraph>,
    sink: &'s mut dyn StepSink,
}

impl Root<'_> {
    fn feed(&mut self, e: StepEvent) -> Result<(), LocatedGraph> {
        let completed = match &e {
            StepEvent::Applied { state, .. } if self.depth == 0 => Some(state.clone()),
            StepEvent::Applied { state, .. } => {
                self.group = Some(state.clone());
                None
            }
            StepEvent::AtomicBegin => {
                self.depth += 1;
                None
            }
            StepEvent::AtomicEnd => {
                self.depth = self.depth.saturating_sub(1);
                if self.depth == 0 {
                    self.group.take()
                } else {
                    None
                }
            }
            _ => None,
        };
        if self.steps >= self.skip {
            self.sink.event(e);
        }
        if let Some(state) = completed {
            self.steps += 1;
            if self.target == Some(self.steps) {
                return Err(state);
            }
        }
        Ok(())
    }
}

enum Output<'a, 's> {
    Feed(&'a mut Root<'s>),
    Collect(&'a mut Vec<StepEvent>),
}

enum Halt {
    Suspend(LocatedGraph),
    Error(EvalError),
}

impl From<EvalError> for Halt {
    fn from(e: EvalError) -> Self {
        Halt::Error(e)
    }
}

impl From<MatchError> for Halt {
    fn from(e: MatchError) -> Self {
        Halt::Error(e.into())
    }
}

impl From<RewriteError> for Halt {
    fn from(e: RewriteError) -> Self {
        Halt::Error(e.into())
    }
}

impl From<GraphError> for Halt {
    fn from(e: GraphError) -> Self {
        Halt::Error(e.into())
    }
}

#[derive(Debug, Clone)]
struct Out {
    ok: bool,
    state: LocatedGraph,
}

impl Out {
    fn ok(state: LocatedGraph) -> Self {
        Out { ok: true, state }
    }

    fn fail(state: &LocatedGraph) -> Self {
        Out {
            ok: false,
            state: state.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    n: usize,
    offset: usize,
}

struct Run<'a, 's> {
    model: &'a Model,
    budget: u64,
    rng: ChaCha8Rng,
    ticks: u64,
    buffers: Vec<Vec<StepEvent>>,
    output: Output<'a, 's>,
    loop_depth: usize,
    forced: Vec<usize>,
    trace: Option<Vec<Choice>>,
}

impl<'a, 's> Run<'a, 's> {
    fn new(model: &'a Model, cfg: &EvalConfig, output: Output<'a, 's>, forced: Option<Vec<usize>>) -> Self {
        Run {
            model,
            budget: cfg.step_budget,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            ticks: 0,
            buffers: Vec::new(),
            output,
            loop_depth: 0,
            trace: forced.as_ref().map(|_| Vec::new()),
            forced: forced.unwrap_or_default(),
        }
    }

    fn tick(&mut self) -> Result<(), Halt> {
        self.ticks += 1;
        if self.ticks > self.budget {
            return Err(EvalError::BudgetExhausted(self.budget).into());
        }
        Ok(())
    }

    fn choose(&mut self, n: usize) -> usize {
        let drawn = self.rng.random_range(0..n);
        self.steer(drawn, n)
    }

    /// In deep search, shifts a drawn index by the forced offset for this
    /// choice point and records the point.
    fn steer(&mut self, drawn: usize, n: usize) -> usize {
        match &mut self.trace {
            Some(trace) if n > 1 => {
                let offset = self.forced.get(trace.len()).copied().unwrap_or(0);
                trace.push(Choice { n, offset });
                (drawn + offset) % n
            }
            _ => drawn,
        }
    }

    fn emit(&mut self, e: StepEvent) -> Result<(), Halt> {
        if let Some(buf) = self.buffers.last_mut() {
            buf.push(e);
            return Ok(());
        }
        match &mut self.output {
            Output::Feed(root) => root.feed(e).map_err(Halt::Suspend),
            Output::Collect(events) => {
                events.push(e);
                Ok(())
            }
        }
    }

    fn trial(&mut self, s: &Strategy, st: &LocatedGraph) -> Result<(Out, Vec<StepEvent>), Halt> {
        self.buffers.push(Vec::new());
        let out = self.run(s, st);
        let events = self.buffers.pop().unwrap_or_default();
        Ok((out?, events))
    }

    fn commit(&mut self, events: Vec<StepEvent>) -> Result<(), Halt> {
        events.into_iter().try_for_each(|e| self.emit(e))
    }

    fn rule(&self, name: &str) -> Result<Arc<RewriteRule>, Halt> {
        self.model
            .rules
            .get(name)
            .cloned()
            .ok_or_else(|| EvalError::UnknownRule(name.to_string()).into())
    }

    fn focus(&mut self, f: &Focus, st: &LocatedGraph) -> Result<crate::position::Position, Halt> {
        let sig = &self.model.signature;
        let mut pick = |n: usize| self.choose(n);
        Ok(eval_focus_with(f, st, sig, &mut pick)?)
    }

    fn run(&mut self, s: &Strategy, st: &LocatedGraph) -> Result<Out, Halt> {
        match s {
            Strategy::Id => Ok(Out::ok(st.clone())),
            Strategy::Fail => Ok(Out::fail(st)),
            Strategy::Rule(name) => self.apply_rule(name, st),
            Strategy::Par(a, b) => {
                if [a, b].iter().any(|x| matches!(***x, Strategy::Fail)) {
                    return Ok(Out::fail(st));
                }
                let slots = self.slots(&[a.as_ref(), b.as_ref()])?;
                let n = slots.len();
                self.parallel(slots, n, st)
            }
            Strategy::Ior(a, b) => {
                if [a, b].iter().all(|x| matches!(***x, Strategy::Fail)) {
                    return Ok(Out::fail(st));
                }
                let has_id = [a, b].iter().any(|x| matches!(***x, Strategy::Id));
                let slots = self.slots(&[a.as_ref(), b.as_ref()])?;
                self.parallel(slots, usize::from(!has_id), st)
            }
            Strategy::Multi(a, min, max) => {
                let min = usize::try_from(*min).unwrap_or(usize::MAX);
                match &**a {
                    Strategy::Id => Ok(Out::ok(st.clone())),
                    Strategy::Fail if min == 0 => Ok(Out::ok(st.clone())),
                    Strategy::Rule(name) => {
                        let rule = self.rule(name)?;
                        let req = MatchRequest::new(&rule.lhs, st, &self.model.signature);
                        let available = count_matches(&req)?;
                        let copies = max.map_or(available, |m| available.min(m as usize));
                        if copies < min {
                            return Ok(Out::fail(st));
                        }
                        self.parallel(vec![rule; copies], min, st)
                    }
                    _ => Ok(Out::fail(st)),
                }
            }
            Strategy::Seq(a, b) => {
                let first = self.run(a, st)?;
                if !first.ok {
                    return Ok(Out::fail(st));
                }
                let second = self.run(b, &first.state)?;
                if !second.ok {
                    return Ok(Out::fail(st));
                }
                Ok(second)
            }
            Strategy::Or(a, b) => {
                let (oa, ea) = self.trial(a, st)?;
                let (ob, eb) = self.trial(b, st)?;
                let keep = match (oa.ok, ob.ok) {
                    (false, false) => return Ok(Out::fail(st)),
                    (true, false) => 0,
                    (false, true) => 1,
                    (true, true) => self.choose(2),
                };
                let (out, events) = if keep == 0 { (oa, ea) } else { (ob, eb) };
                self.commit(events)?;
                Ok(out)
            }
            Strategy::PPick(branches) => {
                let mut live: Vec<usize> = (0..branches.len()).filter(|i| branches[*i].1 > 0.0).collect();
                while !live.is_empty() {
                    let total: f64 = live.iter().map(|i| branches[*i].1).sum();
                    let mut x = self.rng.random::<f64>() * total;
                    let mut at = live.len() - 1;
                    for (k, &i) in live.iter().enumerate() {
                        if x < branches[i].1 {
                            at = k;
                            break;
                        }
                        x -= branches[i].1;
                    }
                    let pick = live[self.steer(at, live.len())];
                    let (out, events) = self.trial(&branches[pick].0, st)?;
                    if out.ok {
                        self.commit(events)?;
                        return Ok(out);
                    }
                    live.retain(|i| *i != pick);
                }
                Ok(Out::fail(st))
            }
            Strategy::While { cond, body, min, max } => {
                let mut cur = st.clone();
                let mut done = 0u64;
                self.loop_depth += 1;
                let reason = loop {
                    if max.is_some_and(|m| done >= m) {
                        break LoopExitReason::MaxReached;
                    }
                    self.tick()?;
                    let (c, _) = self.trial(cond, &cur)?;
                    if !c.ok {
                        break LoopExitReason::ConditionFailed;
                    }
                    let (b, events) = self.trial(body, &cur)?;
                    if !b.ok {
                        break LoopExitReason::BodyFailed;
                    }
                    self.commit(events)?;
                    cur = b.state;
                    done += 1;
                };
                self.loop_depth -= 1;
                if self.loop_depth == 0 {
                    self.emit(StepEvent::LoopExit {
                        reason,
                        state: cur.clone(),
                    })?;
                }
                if done < *min {
                    return Ok(Out::fail(st));
                }
                Ok(Out::ok(cur))
            }
            Strategy::If(c, t, e) => {
                let (test, _) = self.trial(c, st)?;
                self.run(if test.ok { t } else { e }, st)
            }
            Strategy::Empty(f) => {
                let p = self.focus(f, st)?;
                Ok(if p.is_empty() { Out::ok(st.clone()) } else { Out::fail(st) })
            }
            Strategy::Atomic(s) => {
                self.emit(StepEvent::AtomicBegin)?;
                let out = self.run(s, st)?;
                self.emit(StepEvent::AtomicEnd)?;
                Ok(out)
            }
            Strategy::SetPos(f) => {
                let p = self.focus(f, st)?;
                let state = st.with_position(p);
                self.emit(StepEvent::Refocus { state: state.clone() })?;
                Ok(Out::ok(state))
            }
        }
    }

    fn apply_rule(&mut self, name: &str, st: &LocatedGraph) -> Result<Out, Halt> {
        self.tick()?;
        let rule = self.rule(name)?;
        let sig = &self.model.signature;
        let req = MatchRequest::new(&rule.lhs, st, sig);
        let matches = MatchSet::new(&req)?;
        let n = matches.len();
        if n == 0 {
            return Ok(Out::fail(st));
        }
        let k = self.choose(n);
        let morphism = matches.get(k)?.ok_or_else(|| {
            EvalError::Rewrite(RewriteError::StaleMorphism(format!("match {k} of {n} vanished")))
        })?;
        let state = apply(&rule, sig, st, &morphism)?.located();
        self.emit(StepEvent::Applied {
            rules: vec![AppliedRule {
                rule: name.to_string(),
                morphism,
            }],
            state: state.clone(),
        })?;
        Ok(Out::ok(state))
    }

    /// Rules named by parallel operands; `id` and `fail` contribute none.
    fn slots(&self, ops: &[&Strategy]) -> Result<Vec<Arc<RewriteRule>>, Halt> {
        let mut out = Vec::new();
        for op in ops {
            if let Strategy::Rule(name) = op {
                out.push(self.rule(name)?);
            }
        }
        Ok(out)
    }

    /// Applies as many of `rules` as possible at once on disjoint matches,
    /// failing when fewer than `min` can be placed.
    fn parallel(&mut self, rules: Vec<Arc<RewriteRule>>, min: usize, st: &LocatedGraph) -> Result<Out, Halt> {
        self.tick()?;
        if rules.is_empty() {
            return Ok(Out::ok(st.clone()));
        }
        let sig = &self.model.signature;
        let reqs: Vec<MatchRequest<'_>> = rules.iter().map(|r| MatchRequest::new(&r.lhs, st, sig)).collect();
        let max = reqs.len();
        let found = find_disjoint_tuples(&reqs, min, Some(max), Some(&mut self.rng))?;
        drop(reqs);
        let Some(tuple) = found else {
            return Ok(Out::fail(st));
        };
        if tuple.is_empty() {
            return Ok(Out::ok(st.clone()));
        }
        let steps: Vec<(&RewriteRule, Morphism)> = tuple.iter().map(|(i, m)| (&*rules[*i], m.clone())).collect();
        let state = apply_parallel(&steps, sig, st)?.located();
        let applied = tuple
            .into_iter()
            .map(|(i, morphism)| AppliedRule {
                rule: rules[i].name.clone(),
                morphism,
            })
            .collect();
        self.emit(StepEvent::Applied {
            rules: applied,
            state: state.clone(),
        })?;
        Ok(Out::ok(state))
    }
}
