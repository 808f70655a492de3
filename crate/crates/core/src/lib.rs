pub mod admission;
pub mod baselines;
pub mod diff;
pub mod exec;
pub mod gateway;
pub mod hashing;
pub mod novelty;
pub mod output;
pub mod pipeline;
pub mod protocol;
pub mod record;
pub mod stats;
pub mod worker;
