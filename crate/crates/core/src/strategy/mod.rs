//! The strategy language: syntax tree, parser, focusing and evaluation.

mod ast;
mod eval;
mod focus;
mod parse;

pub use ast::{Cmp, Focus, Predicate, Strategy};
pub use eval::{
    eval, run, step, AppliedRule, EvalConfig, GraphProgram, LoopExitReason, SearchMode, Status, StepEvent,
    StepSink,
};
pub use focus::eval_focus_with;
pub use parse::{parse, parse_with_rules, PROBABILITY_TOLERANCE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::GraphError;
use crate::position::{LocatedGraph, Position};
use crate::signature::PSignature;

/// Evaluates a focus expression, drawing `oneSuc` picks from a generator
/// seeded with `seed`.
pub fn eval_focus(f: &Focus, state: &LocatedGraph, sig: &PSignature, seed: u64) -> Result<Position, GraphError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eval_focus_with(f, state, sig, &mut |n| rng.random_range(0..n))
}
