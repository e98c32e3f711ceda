//! Surprise-based learning of sPOMDP models in alpha-epsilon environments.
//!
//! An sPOMDP extends a POMDP with a set of stochastic distinguishing
//! experiments (SDEs): observation-action sequences whose successful
//! execution identifies the model state the agent started from. This crate
//! implements the full learning loop for unknown alpha-epsilon environments
//! — transition counting with Dirichlet soft counts, belief tracking,
//! latent-state detection, and model splitting — together with two ways of
//! choosing actions: a baseline policy of SDEs and random actions, and a
//! confidence-driven navigation policy that plans routes to the transitions
//! that still need evidence.
//!
//! The accompanying guide in `book/` walks through each concept; its code
//! snippets compile and run as doc-tests from [`guide`].

pub mod env;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod sde;
pub mod split;
pub mod trainer;
pub mod trajectory;

mod guide;

pub use env::{
    env_from_tables, make_alpha_epsilon_distribution, ActId, AlphaEpsilonEnv, EnvConfig,
    EnvStepRecord, ObsId, StateId,
};
pub use metrics::{ground_truth_transitions, model_error, state_bijection, ErrorReport};
pub use model::{
    belief_update, update_posterior_argmax, update_posterior_baseline, Belief, ModelState,
    SpomdpModel,
};
pub use policy::{
    baseline_policy_extend, get_path_to_experiment, navigation_policy, node_reward, AgentContext,
    NavBatch, NavConfig, PolicyMode,
};
pub use sde::Sde;
pub use split::{compute_gains, make_split_spec, raw_gain, split_model, GainReport, SplitSpec};
pub use trainer::{
    compare_policies, learn_environment, ComparisonTable, PhaseOutcome, PolicyKind, RunOutcome,
    Session, TrainerConfig, TrainingTrace, TrialResult,
};
pub use trajectory::PosteriorRule;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("degenerate distribution: weight {weight} over {size} entries")]
    Degenerate { weight: f64, size: usize },
    #[error("could not parse environment config: {0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("a model needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("a model needs at least 1 action")]
    NoActions,
    #[error("model epsilon {0} must lie in (1/|O|, 1]")]
    BadEpsilon(f64),
    #[error("learning rate {0} must be nonnegative")]
    BadLearningRate(f64),
    #[error("belief entries must be nonnegative and sum to 1 (sum {0})")]
    BadBelief(f64),
    #[error("belief update produced an all-zero posterior")]
    DegeneratePosterior,
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("split would duplicate an existing SDE")]
    DuplicateSde,
}
