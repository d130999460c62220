//! Shared fixtures for the criterion benches.

use rand_chacha::ChaCha8Rng;
use reflectrl_core::rng::derive_rng;
use reflectrl_core::{EnvConfig, EnvKind, Environment, TaskInstance};

pub fn fixture_env(kind: EnvKind) -> Environment {
    Environment::new(&EnvConfig::new(kind)).expect("default config is valid")
}

pub fn fixture_tasks(env: &Environment, count: usize) -> Vec<TaskInstance> {
    let mut rng: ChaCha8Rng = derive_rng(17, &["bench", "tasks"]);
    env.generate_tasks(count, &mut rng)
        .expect("task generation")
}
