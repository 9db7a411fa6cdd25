//! Exact-arithmetic laboratory for n-agent tabular stochastic games:
//! closed-form policy evaluation, simultaneous projected gradient ascent
//! (gradient play), and equilibrium location and certification.
//!
//! All solves are dense LU factorizations; nothing is sampled or estimated.
//! Games, policies, and evaluation results are immutable values, so every
//! operation is reentrant.

#![allow(clippy::needless_range_loop)]

pub mod checks;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod game;
pub mod nash;
pub mod policy;
pub mod projection;
pub mod tol;

pub use error::{Error, Result};
pub use eval::{EvalBundle, PotentialSpec};
pub use game::{
    build_coordination_game, build_game, build_prisoners_dilemma, random_game, Game, GameSpec,
    RandomGameConfig,
};
pub use policy::Policy;
