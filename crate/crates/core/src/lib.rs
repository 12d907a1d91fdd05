//! Complete verification of feed-forward ReLU networks with proof reuse
//! across compression.
//!
//! A problem `(f, P, Q)` is decided by a case-splitting search over neuron
//! phases with an LP theory solver. Infeasible branches are summarised as
//! minimal unsat cores over activation literals; together with the SAT core
//! and any unexplored prefixes they form a proof that can be replayed against
//! a quantized or pruned network `f'`.

pub mod bench;
pub mod bounds;
pub mod check;
pub mod encoder;
pub mod error;
pub mod incremental;
pub mod lp;
pub mod muc;
pub mod network;
pub mod proof;
pub mod property;
pub mod search;

pub use bounds::{interval_propagate, refresh_under_assumptions, BoundsMap, NeuronBounds, Stability};
pub use check::{Budget, PathChecker};
pub use encoder::{ActivationLiteral, Phase};
pub use error::{Error, Result};
pub use incremental::{reverify, ReuseReport, ReverifyOutcome};
pub use muc::Core;
pub use network::{forward_eval, CompressionSpec, DiffClass, Layer, Network, NeuronId};
pub use proof::{ProofArtifact, SatCore, SearchPath, Verdict};
pub use property::{Comparison, Fingerprint, Inequality, InputBox, OutputProperty, VerificationProblem};
pub use search::{solve, SearchConfig};
