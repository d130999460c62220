//! Retrospective-agent training framework: featurized softmax planner and
//! reflector policies trained by imitation learning and off-policy clipped
//! policy gradient over deterministic toy environments, with reflections from
//! failed trials prepended to subsequent attempts.

pub mod env;
pub mod error;
pub mod expert;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod training;
pub mod types;

pub use env::{
    ActionEntry, ActionTable, EnvConfig, EnvKind, Environment, ReplayInfo, StepOutcome,
    TaskInstance, TrialState,
};
pub use error::{Error, Result};
pub use policy::{ActionDistribution, FeatureSpace, FeatureVector, ParamVector, PolicyRole, Slots};
pub use training::{PolicySet, ReplayBuffer, TrainingConfig};
pub use types::{
    ActionKind, AgentAction, Reflection, StateText, Step, Termination, TokenId, Trajectory,
    TrialSequence, Vocab,
};
