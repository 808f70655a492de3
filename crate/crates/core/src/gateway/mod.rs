//! The two external-process contracts: generators that produce raw text and
//! isolated evaluator workers.

mod evaluator;
mod generator;
mod synthetic;

pub use evaluator::*;
pub use generator::*;
pub use synthetic::SyntheticGenerator;
