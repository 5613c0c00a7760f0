//! Tabular simulator and algorithm suite for MDPs whose state is a vector of
//! factors, only a small hidden subset of which (the endogenous factors)
//! responds to actions or carries reward. The remaining exogenous factors
//! evolve on their own, possibly correlated with each other, and act as
//! structured noise.
//!
//! The crate provides three layers:
//!
//! * exact finite-horizon dynamic programming oracles over the joint state
//!   ([`exact`]), usable at desk scale for ground truth and verification;
//! * the sampled learning pipeline ([`ossr`], [`psdp`], [`driver`]) that
//!   discovers the endogenous factors and a near-optimal endogenous policy
//!   from rollouts alone, with sample complexity logarithmic in the number
//!   of exogenous factors;
//! * instance generators and structural diagnostics ([`gen`], [`diag`])
//!   that exercise the identities the pipeline relies on.
//!
//! Conventions used throughout: factors are 0-indexed, timesteps are
//! 1-indexed (an episode visits layers `1..=H`), and restrictions `s[I]`
//! pack into mixed-radix integers with the smallest factor index most
//! significant. See the `examples/` directory for runnable tours of each
//! capability.

pub mod config;
pub mod diag;
pub mod driver;
pub mod error;
pub mod estimator;
pub mod exact;
pub mod factor;
pub mod files;
pub mod gen;
pub mod model;
pub mod ossr;
pub mod policy;
pub mod psdp;
pub mod sampler;
pub mod search;
pub mod state;
pub mod trajectory;

pub use error::ExoError;
pub use factor::FactorSet;
pub use model::{ExoMdpModel, ModelParts, OracleView};
pub use policy::{
    MixturePolicy, NonstationaryPolicy, OneStepPolicy, PolicyCover, PolicyRef, StepPolicyFamily,
};
pub use state::{FactoredState, StateIndex};
pub use trajectory::Trajectory;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, ExoError>;
