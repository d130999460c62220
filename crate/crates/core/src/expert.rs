//! Imitation-learning data pipeline: roll out the scripted experts over
//! training tasks, filter trajectories with the strict evaluators, and build
//! the planner and reflector datasets.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::env::{termination_of, Environment, TaskInstance};
use crate::error::{Error, Result};
use crate::policy::FeatureVector;
use crate::rng::derive_rng;
use crate::types::{Reflection, Step, Trajectory, TrialSequence};

/// One (state, action) supervision pair from an evaluator-passing expert
/// trajectory, with the legal slot table needed to rescore it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerExample {
    pub features: FeatureVector,
    pub slots: Vec<usize>,
    /// position of the expert action within `slots`
    pub action_pos: usize,
}

/// One (trajectory, reflection) supervision pair whose following trial
/// strictly improved the reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectorExample {
    pub traj_features: FeatureVector,
    pub reflection_index: usize,
    pub alphabet_size: usize,
    pub observed_improvement: f64,
}

/// Rolls the scripted expert planner and reflector over each task for up to
/// `k_trials` trials, stopping early once the evaluator passes.
pub fn collect_expert_trials(
    env: &Environment,
    tasks: &[TaskInstance],
    k_trials: usize,
    error_rate: f64,
    seed: u64,
) -> Result<Vec<TrialSequence>> {
    if k_trials < 1 {
        return Err(Error::Config("k_trials must be >= 1".into()));
    }
    let mut sequences = Vec::with_capacity(tasks.len());
    for (task_index, task) in tasks.iter().enumerate() {
        let mut rng: ChaCha8Rng = derive_rng(seed, &["expert", &task_index.to_string()]);
        let mut trials = Vec::new();
        let mut reflections: Vec<Reflection> = Vec::new();
        let mut solved_at = None;
        for k in 0..k_trials {
            let mut state = env.reset(task, &reflections)?;
            let mut steps = Vec::new();
            let mut submitted = false;
            let mut reward = 0.0;
            loop {
                let (action, logprob) = env.expert_action(task, &state, error_rate, &mut rng);
                let outcome = env.step(task, &state, &action)?;
                steps.push(Step {
                    state: state.text.clone(),
                    action,
                    behavior_logprob: logprob,
                    observation: outcome.observation.clone(),
                });
                let done = outcome.done;
                if done {
                    submitted = outcome.submitted;
                }
                if let Some(r) = outcome.reward_if_done {
                    reward = r;
                }
                state = outcome.next;
                if done {
                    break;
                }
            }
            let traj = Trajectory {
                task_id: task.task_id.clone(),
                trial_index: k,
                steps,
                terminal_reward: reward,
                terminated_by: termination_of(submitted),
            };
            let passed = env.evaluator_pass(task, &traj)?;
            trials.push(traj);
            if passed {
                solved_at = Some(k);
                break;
            }
            if k + 1 < k_trials {
                reflections.push(env.expert_reflection(task, trials.last().unwrap())?);
            }
        }
        sequences.push(TrialSequence::new(
            task.task_id.clone(),
            trials,
            reflections,
            solved_at,
        )?);
    }
    Ok(sequences)
}

/// Filters collected sequences into the two IL datasets: every step of every
/// evaluator-passing trajectory for the planner, and every reflection whose
/// next trial strictly improved the reward for the reflector.
pub fn build_il_datasets(
    env: &Environment,
    tasks: &[TaskInstance],
    sequences: &[TrialSequence],
    shared_mode: bool,
) -> Result<(Vec<PlannerExample>, Vec<ReflectorExample>)> {
    let space = env.feature_space();
    let alphabet_size = env.reflection_alphabet().len();
    let task_by_id = |id: &str| {
        tasks
            .iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| Error::Data(format!("unknown task id {id:?}")))
    };
    let mut planner = Vec::new();
    let mut reflector = Vec::new();
    for seq in sequences {
        let task = task_by_id(&seq.task_id)?;
        let rewards = seq.trial_rewards();
        for traj in &seq.trials {
            if !env.evaluator_pass(task, traj)? {
                continue;
            }
            let info = env.replay(task, traj)?;
            for (i, step) in traj.steps.iter().enumerate() {
                let slots = info.step_tables[i].clone();
                let action_pos = step.action.action_id;
                planner.push(PlannerExample {
                    features: space.featurize_state(&step.state),
                    slots,
                    action_pos,
                });
            }
        }
        for (k, reflection) in seq.reflections.iter().enumerate() {
            let improvement = rewards[k + 1] - rewards[k];
            if improvement <= 0.0 {
                continue;
            }
            let info = env.replay(task, &seq.trials[k])?;
            reflector.push(ReflectorExample {
                traj_features: space.featurize_trajectory(
                    &seq.trials[k],
                    &info.chosen_slots,
                    shared_mode,
                ),
                reflection_index: env.reflection_index_of(reflection)?,
                alphabet_size,
                observed_improvement: improvement,
            });
        }
    }
    Ok((planner, reflector))
}

/// Dataset summary in the shape of a per-environment count table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub env_kind: String,
    pub planner_examples: usize,
    pub reflector_examples: usize,
    pub sequences: usize,
}

pub fn dataset_stats(
    env: &Environment,
    sequences: &[TrialSequence],
    planner: &[PlannerExample],
    reflector: &[ReflectorExample],
) -> DatasetStats {
    DatasetStats {
        env_kind: env.config().kind.as_str().to_string(),
        planner_examples: planner.len(),
        reflector_examples: reflector.len(),
        sequences: sequences.len(),
    }
}

fn join_usize(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad index {p:?}")))
        })
        .collect()
}

/// Persists both datasets as line-delimited records. The first line is a
/// manifest recording the env config, seed, error rate, and trial budget.
pub fn write_datasets(
    path: &Path,
    env: &Environment,
    seed: u64,
    k_trials: usize,
    planner: &[PlannerExample],
    reflector: &[ReflectorExample],
) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(&format!(
        "manifest {} collect_seed={seed} k_trials={k_trials}\n",
        env.config().manifest()
    ));
    for p in planner {
        buf.push_str(&format!(
            "planner\t{}\t{}\t{}\n",
            join_usize(&p.features.indices),
            join_usize(&p.slots),
            p.action_pos
        ));
    }
    for r in reflector {
        buf.push_str(&format!(
            "reflector\t{}\t{}\t{}\t{}\n",
            join_usize(&r.traj_features.indices),
            r.reflection_index,
            r.alphabet_size,
            r.observed_improvement
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_datasets(path: &Path) -> Result<(Vec<PlannerExample>, Vec<ReflectorExample>)> {
    let text = std::fs::read_to_string(path)?;
    let mut planner = Vec::new();
    let mut reflector = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("manifest ") {
                return Err(Error::Parse("dataset file missing manifest line".into()));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.first() {
            Some(&"planner") if fields.len() == 4 => planner.push(PlannerExample {
                features: FeatureVector {
                    indices: parse_usize_list(fields[1])?,
                },
                slots: parse_usize_list(fields[2])?,
                action_pos: fields[3]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad action_pos {:?}", fields[3])))?,
            }),
            Some(&"reflector") if fields.len() == 5 => reflector.push(ReflectorExample {
                traj_features: FeatureVector {
                    indices: parse_usize_list(fields[1])?,
                },
                reflection_index: fields[2]
                    .parse()
                    .map_err(|_| Error::Parse("bad reflection_index".into()))?,
                alphabet_size: fields[3]
                    .parse()
                    .map_err(|_| Error::Parse("bad alphabet_size".into()))?,
                observed_improvement: fields[4]
                    .parse()
                    .map_err(|_| Error::Parse("bad improvement".into()))?,
            }),
            _ => return Err(Error::Parse(format!("bad dataset record: {line:?}"))),
        }
    }
    Ok((planner, reflector))
}
