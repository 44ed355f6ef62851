//! Knowledge-guided hierarchical reinforcement learning.
//!
//! A meta-level policy reasons over type-space knowledge graphs and proposes
//! `(object, interaction)` goals; per-interaction PPO policies execute them in
//! a partially observable gridworld.

pub mod config;
pub mod env;
pub mod exec;
pub mod knowledge;
pub mod nets;
pub mod numeric;
pub mod ppo;
pub mod rng;
pub mod eval;
pub mod trainer;
