//! Both optimization phases: imitation-learning cross-entropy and the
//! off-policy joint policy gradient with clipped importance weights, reward
//! shaping, and the imitation-learning regularizer, plus the end-to-end
//! driver that strings collection, IL, exploration, and RL updates together.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{termination_of, Environment, TaskInstance};
use crate::error::{Error, Result};
use crate::expert::{build_il_datasets, collect_expert_trials, PlannerExample, ReflectorExample};
use crate::metrics::aggregate_metrics;
use crate::policy::{
    accumulate_grad_logprob, logprob_of, sample, FeatureVector, ParamVector, PolicyRole, Slots,
};
use crate::rng::derive_rng;
use crate::types::{Reflection, Step, Trajectory, TrialSequence};

/// All training knobs with their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Trials (and interleaved reflections) per task.
    pub k_trials: usize,
    pub lambda_planner: f64,
    pub lambda_reflector: f64,
    /// Reflector reward coefficient.
    pub alpha: f64,
    /// Importance-weight clip radius.
    pub epsilon: f64,
    pub learning_rate: f64,
    pub il_epochs: usize,
    pub rl_iterations: usize,
    pub rl_epochs_per_iteration: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub explore_temperature: f64,
    pub eval_temperature: f64,
    pub shared_params: bool,
    pub freeze_planner: bool,
    pub freeze_reflector: bool,
    pub disable_reflection: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            k_trials: 10,
            lambda_planner: 1.0,
            lambda_reflector: 1.0,
            alpha: 1.0,
            epsilon: 0.2,
            learning_rate: 0.1,
            il_epochs: 3,
            rl_iterations: 10,
            rl_epochs_per_iteration: 3,
            buffer_capacity: 10_000,
            batch_size: 32,
            explore_temperature: 1.0,
            eval_temperature: 0.0,
            shared_params: false,
            freeze_planner: false,
            freeze_reflector: false,
            disable_reflection: false,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_trials < 1 {
            return Err(Error::Config("k_trials must be >= 1".into()));
        }
        if self.lambda_planner < 0.0 || self.lambda_reflector < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) || self.epsilon == 0.0 {
            return Err(Error::Config(format!(
                "epsilon {} outside (0,1)",
                self.epsilon
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size < 1 || self.buffer_capacity < 1 {
            return Err(Error::Config(
                "batch_size and buffer_capacity must be >= 1".into(),
            ));
        }
        if self.explore_temperature < 0.0 || self.eval_temperature < 0.0 {
            return Err(Error::Config("temperatures must be >= 0".into()));
        }
        if self.freeze_planner && self.freeze_reflector && self.rl_iterations > 0 {
            return Err(Error::Config(
                "freeze_planner and freeze_reflector together leave nothing to train".into(),
            ));
        }
        Ok(())
    }
}

/// One stored planner step with its behavior log-prob and trial return.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerRecord {
    pub features: FeatureVector,
    pub slots: Vec<usize>,
    pub action_pos: usize,
    pub behavior_logprob: f64,
    pub reward: f64,
}

/// One stored reflection with its behavior log-prob and shaped reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectorRecord {
    pub traj_features: FeatureVector,
    pub reflection_index: usize,
    pub alphabet_size: usize,
    pub behavior_logprob: f64,
    pub shaped_reward: f64,
}

/// Bounded FIFO store for off-policy reuse.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

/// The planner/reflector parameter pair, or a single shared vector serving
/// both roles through disjoint action-slot ranges.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySet {
    Separate {
        planner: ParamVector,
        reflector: ParamVector,
    },
    Shared(ParamVector),
}

impl PolicySet {
    pub fn init(env: &Environment, config: &TrainingConfig) -> Self {
        let space = env.feature_space();
        let dim = space.feature_dim();
        let catalog = env.catalog_len();
        let alphabet = env.reflection_alphabet().len();
        let scale = 0.01;
        if config.shared_params {
            let mut rng = derive_rng(config.seed, &["init", "shared"]);
            PolicySet::Shared(ParamVector::random(
                PolicyRole::Shared,
                dim,
                catalog + alphabet,
                scale,
                config.seed,
                &mut rng,
            ))
        } else {
            let mut prng = derive_rng(config.seed, &["init", "planner"]);
            let mut rrng = derive_rng(config.seed, &["init", "reflector"]);
            PolicySet::Separate {
                planner: ParamVector::random(
                    PolicyRole::Planner,
                    dim,
                    catalog,
                    scale,
                    config.seed,
                    &mut prng,
                ),
                reflector: ParamVector::random(
                    PolicyRole::Reflector,
                    dim,
                    alphabet,
                    scale,
                    config.seed,
                    &mut rrng,
                ),
            }
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, PolicySet::Shared(_))
    }

    pub fn planner(&self) -> &ParamVector {
        match self {
            PolicySet::Separate { planner, .. } => planner,
            PolicySet::Shared(p) => p,
        }
    }

    pub fn reflector(&self) -> &ParamVector {
        match self {
            PolicySet::Separate { reflector, .. } => reflector,
            PolicySet::Shared(p) => p,
        }
    }

    pub fn planner_mut(&mut self) -> &mut ParamVector {
        match self {
            PolicySet::Separate { planner, .. } => planner,
            PolicySet::Shared(p) => p,
        }
    }

    pub fn reflector_mut(&mut self) -> &mut ParamVector {
        match self {
            PolicySet::Separate { reflector, .. } => reflector,
            PolicySet::Shared(p) => p,
        }
    }

    /// Base catalog slot of the reflection alphabet within the reflector's
    /// parameter columns.
    pub fn reflector_slot_base(&self, env: &Environment) -> usize {
        if self.is_shared() {
            env.catalog_len()
        } else {
            0
        }
    }
}

fn reflector_slots(base: usize, len: usize) -> Slots<'static> {
    Slots::Range { base, len }
}

// ---------------------------------------------------------------------------
// Imitation learning
// ---------------------------------------------------------------------------

/// Accumulates `scale` times the gradient of the mean cross-entropy loss over
/// the batch into `grad`, returning the mean loss.
fn ce_accumulate_planner(
    params: &ParamVector,
    batch: &[&PlannerExample],
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let slots = Slots::List(&ex.slots);
        loss -= logprob_of(params, &ex.features, slots, ex.action_pos);
        // d(-logprob)/dtheta = -grad_logprob
        accumulate_grad_logprob(params, &ex.features, slots, ex.action_pos, -scale / n, grad);
    }
    loss / n
}

fn ce_accumulate_reflector(
    params: &ParamVector,
    batch: &[&ReflectorExample],
    slot_base: usize,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let slots = reflector_slots(slot_base, ex.alphabet_size);
        loss -= logprob_of(params, &ex.traj_features, slots, ex.reflection_index);
        accumulate_grad_logprob(
            params,
            &ex.traj_features,
            slots,
            ex.reflection_index,
            -scale / n,
            grad,
        );
    }
    loss / n
}

fn apply_gradient(params: &mut ParamVector, grad: &[f64], lr: f64) {
    for (v, g) in params.values.iter_mut().zip(grad) {
        *v -= lr * g;
    }
}

/// One cross-entropy SGD step on a planner batch; returns the pre-update loss.
pub fn il_step_planner(
    params: &mut ParamVector,
    batch: &[&PlannerExample],
    learning_rate: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("empty IL batch".into()));
    }
    let mut grad = vec![0.0; params.values.len()];
    let loss = ce_accumulate_planner(params, batch, 1.0, &mut grad);
    apply_gradient(params, &grad, learning_rate);
    Ok(loss)
}

/// One cross-entropy SGD step on a reflector batch; returns the pre-update
/// loss.
pub fn il_step_reflector(
    params: &mut ParamVector,
    batch: &[&ReflectorExample],
    slot_base: usize,
    learning_rate: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("empty IL batch".into()));
    }
    let mut grad = vec![0.0; params.values.len()];
    let loss = ce_accumulate_reflector(params, batch, slot_base, 1.0, &mut grad);
    apply_gradient(params, &grad, learning_rate);
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Off-policy policy gradient
// ---------------------------------------------------------------------------

/// Planner rewards are the per-trial environment rewards; reflector rewards
/// are alpha times the improvement of the following trial.
pub fn shape_rewards(trial_rewards: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let planner = trial_rewards.to_vec();
    let reflector = trial_rewards
        .windows(2)
        .map(|w| alpha * (w[1] - w[0]))
        .collect();
    (planner, reflector)
}

/// Clipped importance ratio: clip(exp(new - behavior), 1-eps, 1+eps).
pub fn importance_weight(new_logprob: f64, behavior_logprob: f64, epsilon: f64) -> f64 {
    (new_logprob - behavior_logprob)
        .exp()
        .clamp(1.0 - epsilon, 1.0 + epsilon)
}

/// Accumulates the clipped-surrogate gradient of one record. The surrogate is
/// -w * R with w the clipped ratio; its gradient is -R * ratio * grad_logprob
/// when the raw ratio lies inside the clip interval and exactly zero when the
/// clip saturates (the surrogate is locally flat there).
#[allow(clippy::too_many_arguments)]
fn rl_accumulate(
    params: &ParamVector,
    features: &FeatureVector,
    slots: Slots,
    pos: usize,
    behavior_logprob: f64,
    reward: f64,
    epsilon: f64,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let lp = logprob_of(params, features, slots, pos);
    let ratio = (lp - behavior_logprob).exp();
    let weight = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    debug_assert!((1.0 - epsilon..=1.0 + epsilon).contains(&weight));
    let interior = (1.0 - epsilon..=1.0 + epsilon).contains(&ratio);
    if interior {
        accumulate_grad_logprob(params, features, slots, pos, -reward * ratio * scale, grad);
    }
    -weight * reward
}

/// Mean clipped-surrogate gradient and loss over a planner batch.
pub fn rl_grad_planner(
    params: &ParamVector,
    batch: &[&PlannerRecord],
    epsilon: f64,
) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty RL batch".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; params.values.len()];
    let mut loss = 0.0;
    for r in batch {
        loss += rl_accumulate(
            params,
            &r.features,
            Slots::List(&r.slots),
            r.action_pos,
            r.behavior_logprob,
            r.reward,
            epsilon,
            1.0 / n,
            &mut grad,
        );
    }
    Ok((grad, loss / n))
}

/// Mean clipped-surrogate gradient and loss over a reflector batch.
pub fn rl_grad_reflector(
    params: &ParamVector,
    batch: &[&ReflectorRecord],
    slot_base: usize,
    epsilon: f64,
) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty RL batch".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; params.values.len()];
    let mut loss = 0.0;
    for r in batch {
        loss += rl_accumulate(
            params,
            &r.traj_features,
            reflector_slots(slot_base, r.alphabet_size),
            r.reflection_index,
            r.behavior_logprob,
            r.shaped_reward,
            epsilon,
            1.0 / n,
            &mut grad,
        );
    }
    Ok((grad, loss / n))
}

/// Per-update bookkeeping from an augmented step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub surrogate_loss: f64,
    pub il_loss: f64,
    /// L2 norm of the lambda-weighted regularizer gradient actually applied.
    pub regularizer_grad_norm: f64,
}

fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One augmented SGD step on a planner batch: gradient = RL gradient plus
/// lambda times the IL cross-entropy gradient on `il_batch`.
pub fn augmented_update_planner(
    params: &mut ParamVector,
    rl_batch: &[&PlannerRecord],
    il_batch: &[&PlannerExample],
    lambda: f64,
    epsilon: f64,
    learning_rate: f64,
) -> Result<UpdateStats> {
    let (mut grad, surrogate_loss) = rl_grad_planner(params, rl_batch, epsilon)?;
    let mut il_loss = 0.0;
    let mut regularizer_grad_norm = 0.0;
    if lambda != 0.0 && !il_batch.is_empty() {
        let mut reg = vec![0.0; params.values.len()];
        il_loss = ce_accumulate_planner(params, il_batch, lambda, &mut reg);
        regularizer_grad_norm = l2_norm(&reg);
        for (g, r) in grad.iter_mut().zip(&reg) {
            *g += r;
        }
    }
    apply_gradient(params, &grad, learning_rate);
    Ok(UpdateStats {
        surrogate_loss,
        il_loss,
        regularizer_grad_norm,
    })
}

/// One augmented SGD step on a reflector batch.
pub fn augmented_update_reflector(
    params: &mut ParamVector,
    rl_batch: &[&ReflectorRecord],
    il_batch: &[&ReflectorExample],
    slot_base: usize,
    lambda: f64,
    epsilon: f64,
    learning_rate: f64,
) -> Result<UpdateStats> {
    let (mut grad, surrogate_loss) = rl_grad_reflector(params, rl_batch, slot_base, epsilon)?;
    let mut il_loss = 0.0;
    let mut regularizer_grad_norm = 0.0;
    if lambda != 0.0 && !il_batch.is_empty() {
        let mut reg = vec![0.0; params.values.len()];
        il_loss = ce_accumulate_reflector(params, il_batch, slot_base, lambda, &mut reg);
        regularizer_grad_norm = l2_norm(&reg);
        for (g, r) in grad.iter_mut().zip(&reg) {
            *g += r;
        }
    }
    apply_gradient(params, &grad, learning_rate);
    Ok(UpdateStats {
        surrogate_loss,
        il_loss,
        regularizer_grad_norm,
    })
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Runs up to `k_trials` trials of one task under the current policies.
/// Action and reflection choices follow `temperature`; behavior log-probs are
/// always recorded at temperature 1.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    policies: &PolicySet,
    env: &Environment,
    task: &TaskInstance,
    k_trials: usize,
    temperature: f64,
    disable_reflection: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TrialSequence> {
    let space = env.feature_space();
    let alphabet = env.reflection_alphabet();
    let refl_base = policies.reflector_slot_base(env);
    let mut trials = Vec::new();
    let mut reflections: Vec<Reflection> = Vec::new();
    let mut solved_at = None;
    for k in 0..k_trials {
        let mut state = env.reset(task, &reflections)?;
        let mut steps = Vec::new();
        let mut chosen_slots = Vec::new();
        let mut submitted = false;
        let mut reward = 0.0;
        loop {
            let table = env.legal_actions(task, &state);
            let slots = table.slots();
            let features = space.featurize_state(&state.text);
            let slot_view = Slots::List(&slots);
            let (pos, _) = sample(policies.planner(), &features, slot_view, temperature, rng);
            let behavior_logprob = logprob_of(policies.planner(), &features, slot_view, pos);
            let entry = &table.entries[pos];
            let action = crate::types::AgentAction {
                thought: entry.thought.clone(),
                kind: entry.kind,
                args: entry.args.clone(),
                action_id: pos,
            };
            chosen_slots.push(entry.slot);
            let outcome = env.step(task, &state, &action)?;
            steps.push(Step {
                state: state.text.clone(),
                action,
                behavior_logprob,
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
        let failed_traj = traj.clone();
        trials.push(traj);
        if passed {
            solved_at = Some(k);
            break;
        }
        if reward < 1.0 && k + 1 < k_trials && !disable_reflection {
            let traj_features =
                space.featurize_trajectory(&failed_traj, &chosen_slots, policies.is_shared());
            let slots = reflector_slots(refl_base, alphabet.len());
            let (idx, _) = sample(
                policies.reflector(),
                &traj_features,
                slots,
                temperature,
                rng,
            );
            let behavior_logprob = logprob_of(policies.reflector(), &traj_features, slots, idx);
            reflections.push(Reflection {
                tokens: vec![alphabet[idx]],
                behavior_logprob,
                produced_after_trial: k,
            });
        }
    }
    TrialSequence::new(task.task_id.clone(), trials, reflections, solved_at)
}

/// Turns one rolled-out sequence into replay records: every step of every
/// trial becomes a planner record carrying that trial's terminal reward, and
/// every reflection becomes a reflector record with the shaped reward.
pub fn push_sequence(
    planner_buffer: &mut ReplayBuffer<PlannerRecord>,
    reflector_buffer: &mut ReplayBuffer<ReflectorRecord>,
    env: &Environment,
    task: &TaskInstance,
    sequence: &TrialSequence,
    alpha: f64,
    shared_mode: bool,
) -> Result<()> {
    let space = env.feature_space();
    let rewards = sequence.trial_rewards();
    let (planner_rewards, reflector_rewards) = shape_rewards(&rewards, alpha);
    let mut replays = Vec::with_capacity(sequence.trials.len());
    for traj in &sequence.trials {
        replays.push(env.replay(task, traj)?);
    }
    for (k, traj) in sequence.trials.iter().enumerate() {
        for (i, step) in traj.steps.iter().enumerate() {
            planner_buffer.push(PlannerRecord {
                features: space.featurize_state(&step.state),
                slots: replays[k].step_tables[i].clone(),
                action_pos: step.action.action_id,
                behavior_logprob: step.behavior_logprob,
                reward: planner_rewards[k],
            });
        }
    }
    for (k, reflection) in sequence.reflections.iter().enumerate() {
        reflector_buffer.push(ReflectorRecord {
            traj_features: space.featurize_trajectory(
                &sequence.trials[k],
                &replays[k].chosen_slots,
                shared_mode,
            ),
            reflection_index: env.reflection_index_of(reflection)?,
            alphabet_size: env.reflection_alphabet().len(),
            behavior_logprob: reflection.behavior_logprob,
            shaped_reward: reflector_rewards[k],
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Rolled-out sequences, per-task trial rewards, and the (IR, FR, AR)
/// aggregate triple.
pub type EvalOutput = (Vec<TrialSequence>, Vec<Vec<f64>>, (f64, f64, f64));

/// K-trial rollouts over a task set; returns per-task reward lists and the
/// aggregate (IR, FR, AR) triple.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    policies: &PolicySet,
    env: &Environment,
    tasks: &[TaskInstance],
    k_trials: usize,
    temperature: f64,
    disable_reflection: bool,
    seed: u64,
) -> Result<EvalOutput> {
    let mut sequences = Vec::with_capacity(tasks.len());
    let mut rewards = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let mut rng = derive_rng(seed, &["eval", &i.to_string()]);
        let seq = rollout(
            policies,
            env,
            task,
            k_trials,
            temperature,
            disable_reflection,
            &mut rng,
        )?;
        rewards.push(seq.trial_rewards());
        sequences.push(seq);
    }
    let agg = aggregate_metrics(&rewards, k_trials)?;
    Ok((sequences, rewards, agg))
}

// ---------------------------------------------------------------------------
// End-to-end driver
// ---------------------------------------------------------------------------

/// One history row; absent values stay `None` in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub phase: String,
    pub iteration: usize,
    pub planner_loss: Option<f64>,
    pub reflector_loss: Option<f64>,
    pub eval_ir: Option<f64>,
    pub eval_fr: Option<f64>,
    pub eval_ar: Option<f64>,
    /// Mean lambda-weighted regularizer gradient norms over the iteration.
    pub planner_reg_norm: Option<f64>,
    pub reflector_reg_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub warnings: Vec<String>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("phase,iteration,planner_loss,reflector_loss,eval_IR,eval_FR,eval_AR\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.phase,
                r.iteration,
                fmt(r.planner_loss),
                fmt(r.reflector_loss),
                fmt(r.eval_ir),
                fmt(r.eval_fr),
                fmt(r.eval_ar)
            ));
        }
        out
    }
}

fn minibatch_indices(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn draw_il_batch<'a, T>(data: &'a [T], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<&'a T> {
    if data.is_empty() {
        return Vec::new();
    }
    (0..batch_size.min(data.len()))
        .map(|_| &data[rng.gen_range(0..data.len())])
        .collect()
}

/// IL phase: `il_epochs` shuffled minibatch passes over both datasets,
/// skipping frozen or data-less components. Returns one history row per
/// epoch.
pub fn train_il(
    policies: &mut PolicySet,
    env: &Environment,
    il_planner: &[PlannerExample],
    il_reflector: &[ReflectorExample],
    config: &TrainingConfig,
) -> Result<Vec<HistoryRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for epoch in 0..config.il_epochs {
        let mut planner_loss = None;
        let mut reflector_loss = None;
        if !config.freeze_planner && !il_planner.is_empty() {
            let mut rng = derive_rng(config.seed, &["il", "planner", &epoch.to_string()]);
            let mut total = 0.0;
            let batches = minibatch_indices(il_planner.len(), config.batch_size, &mut rng);
            let n_batches = batches.len();
            for batch in batches {
                let refs: Vec<&PlannerExample> = batch.iter().map(|&i| &il_planner[i]).collect();
                total += il_step_planner(policies.planner_mut(), &refs, config.learning_rate)?;
            }
            planner_loss = Some(total / n_batches as f64);
        }
        if !config.freeze_reflector && !il_reflector.is_empty() {
            let base = policies.reflector_slot_base(env);
            let mut rng = derive_rng(config.seed, &["il", "reflector", &epoch.to_string()]);
            let mut total = 0.0;
            let batches = minibatch_indices(il_reflector.len(), config.batch_size, &mut rng);
            let n_batches = batches.len();
            for batch in batches {
                let refs: Vec<&ReflectorExample> =
                    batch.iter().map(|&i| &il_reflector[i]).collect();
                total +=
                    il_step_reflector(policies.reflector_mut(), &refs, base, config.learning_rate)?;
            }
            reflector_loss = Some(total / n_batches as f64);
        }
        rows.push(HistoryRow {
            phase: "il".into(),
            iteration: epoch,
            planner_loss,
            reflector_loss,
            eval_ir: None,
            eval_fr: None,
            eval_ar: None,
            planner_reg_norm: None,
            reflector_reg_norm: None,
        });
    }
    Ok(rows)
}

/// RL phase: `rl_iterations` rounds of on-policy exploration into the replay
/// buffers followed by augmented off-policy minibatch updates, with a held-out
/// IR/FR/AR evaluation after every iteration.
#[allow(clippy::too_many_arguments)]
pub fn train_rl(
    policies: &mut PolicySet,
    env: &Environment,
    train_tasks: &[TaskInstance],
    eval_tasks: &[TaskInstance],
    il_planner: &[PlannerExample],
    il_reflector: &[ReflectorExample],
    config: &TrainingConfig,
) -> Result<Vec<HistoryRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut planner_buffer: ReplayBuffer<PlannerRecord> = ReplayBuffer::new(config.buffer_capacity);
    let mut reflector_buffer: ReplayBuffer<ReflectorRecord> =
        ReplayBuffer::new(config.buffer_capacity);
    for iteration in 0..config.rl_iterations {
        // exploration
        for (i, task) in train_tasks.iter().enumerate() {
            let mut rng = derive_rng(
                config.seed,
                &["explore", &iteration.to_string(), &i.to_string()],
            );
            let seq = rollout(
                policies,
                env,
                task,
                config.k_trials,
                config.explore_temperature,
                config.disable_reflection,
                &mut rng,
            )?;
            push_sequence(
                &mut planner_buffer,
                &mut reflector_buffer,
                env,
                task,
                &seq,
                config.alpha,
                config.shared_params,
            )?;
        }

        // augmented off-policy updates
        let mut planner_loss_sum = 0.0;
        let mut planner_updates = 0usize;
        let mut planner_reg_sum = 0.0;
        let mut reflector_loss_sum = 0.0;
        let mut reflector_updates = 0usize;
        let mut reflector_reg_sum = 0.0;
        for epoch in 0..config.rl_epochs_per_iteration {
            let tag = format!("{iteration}-{epoch}");
            if !config.freeze_planner && !planner_buffer.is_empty() {
                let mut rng = derive_rng(config.seed, &["rl", "planner", &tag]);
                for batch in minibatch_indices(planner_buffer.len(), config.batch_size, &mut rng) {
                    let refs: Vec<&PlannerRecord> =
                        batch.iter().map(|&i| planner_buffer.get(i)).collect();
                    let il_batch = draw_il_batch(il_planner, config.batch_size, &mut rng);
                    let stats = augmented_update_planner(
                        policies.planner_mut(),
                        &refs,
                        &il_batch,
                        config.lambda_planner,
                        config.epsilon,
                        config.learning_rate,
                    )?;
                    planner_loss_sum += stats.surrogate_loss;
                    planner_reg_sum += stats.regularizer_grad_norm;
                    planner_updates += 1;
                }
            }
            if !config.freeze_reflector && !reflector_buffer.is_empty() {
                let base = policies.reflector_slot_base(env);
                let mut rng = derive_rng(config.seed, &["rl", "reflector", &tag]);
                for batch in minibatch_indices(reflector_buffer.len(), config.batch_size, &mut rng)
                {
                    let refs: Vec<&ReflectorRecord> =
                        batch.iter().map(|&i| reflector_buffer.get(i)).collect();
                    let il_batch = draw_il_batch(il_reflector, config.batch_size, &mut rng);
                    let stats = augmented_update_reflector(
                        policies.reflector_mut(),
                        &refs,
                        &il_batch,
                        base,
                        config.lambda_reflector,
                        config.epsilon,
                        config.learning_rate,
                    )?;
                    reflector_loss_sum += stats.surrogate_loss;
                    reflector_reg_sum += stats.regularizer_grad_norm;
                    reflector_updates += 1;
                }
            }
        }

        let (_, _, (ir, fr, ar)) = evaluate(
            policies,
            env,
            eval_tasks,
            config.k_trials,
            config.eval_temperature,
            config.disable_reflection,
            derive_seed_for(config.seed, &format!("eval-rl-{iteration}")),
        )?;
        let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
        rows.push(HistoryRow {
            phase: "rl".into(),
            iteration,
            planner_loss: mean(planner_loss_sum, planner_updates),
            reflector_loss: mean(reflector_loss_sum, reflector_updates),
            eval_ir: Some(ir),
            eval_fr: Some(fr),
            eval_ar: Some(ar),
            planner_reg_norm: mean(planner_reg_sum, planner_updates),
            reflector_reg_norm: mean(reflector_reg_sum, reflector_updates),
        });
    }
    policies.planner().assert_finite()?;
    policies.reflector().assert_finite()?;
    Ok(rows)
}

/// The complete practical loop: expert collection, IL dataset construction,
/// IL training, then the RL phase, with an IR/FR/AR evaluation after IL and
/// after every RL iteration.
pub fn run_training_pipeline(
    env: &Environment,
    train_tasks: &[TaskInstance],
    eval_tasks: &[TaskInstance],
    config: &TrainingConfig,
) -> Result<(PolicySet, History)> {
    config.validate()?;
    if train_tasks.is_empty() || eval_tasks.is_empty() {
        return Err(Error::Config(
            "train and eval task sets must be nonempty".into(),
        ));
    }
    let mut history = History::default();
    let mut policies = PolicySet::init(env, config);

    let sequences = collect_expert_trials(
        env,
        train_tasks,
        config.k_trials,
        env.config().expert_error_rate,
        derive_seed_for(config.seed, "collect"),
    )?;
    let (il_planner, il_reflector) =
        build_il_datasets(env, train_tasks, &sequences, config.shared_params)?;
    if il_planner.is_empty() {
        history
            .warnings
            .push("planner IL dataset is empty; IL is a no-op".into());
    }
    if il_reflector.is_empty() {
        history
            .warnings
            .push("reflector IL dataset is empty; IL is a no-op".into());
    }

    history.rows.extend(train_il(
        &mut policies,
        env,
        &il_planner,
        &il_reflector,
        config,
    )?);

    let (_, _, (ir, fr, ar)) = evaluate(
        &policies,
        env,
        eval_tasks,
        config.k_trials,
        config.eval_temperature,
        config.disable_reflection,
        derive_seed_for(config.seed, "eval-il"),
    )?;
    history.rows.push(HistoryRow {
        phase: "il-eval".into(),
        iteration: 0,
        planner_loss: None,
        reflector_loss: None,
        eval_ir: Some(ir),
        eval_fr: Some(fr),
        eval_ar: Some(ar),
        planner_reg_norm: None,
        reflector_reg_norm: None,
    });

    history.rows.extend(train_rl(
        &mut policies,
        env,
        train_tasks,
        eval_tasks,
        &il_planner,
        &il_reflector,
        config,
    )?);
    Ok((policies, history))
}

fn derive_seed_for(seed: u64, tag: &str) -> u64 {
    crate::rng::derive_seed(seed, &[tag])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, EnvKind};
    use crate::policy::grad_logprob;
    use crate::rng::derive_rng;

    fn fixture() -> (Environment, Vec<TaskInstance>) {
        let env = Environment::new(&EnvConfig::new(EnvKind::GraphQa)).unwrap();
        let mut rng = derive_rng(7, &["tasks"]);
        let tasks = env.generate_tasks(12, &mut rng).unwrap();
        (env, tasks)
    }

    #[test]
    fn shape_rewards_matches_definition() {
        let (planner, reflector) = shape_rewards(&[0.3, 0.8], 1.0);
        assert_eq!(planner, vec![0.3, 0.8]);
        assert_eq!(reflector, vec![0.5]);
        let (_, reflector) = shape_rewards(&[0.5, 0.25, 1.0], 2.0);
        assert_eq!(reflector, vec![-0.5, 1.5]);
        let (_, reflector) = shape_rewards(&[0.4], 1.0);
        assert!(reflector.is_empty());
    }

    #[test]
    fn importance_weight_clips_at_epsilon() {
        assert_eq!(importance_weight(0.0, 0.0, 0.2), 1.0);
        assert_eq!(importance_weight(2.0_f64.ln(), 0.0, 0.2), 1.2);
        assert_eq!(importance_weight(0.5_f64.ln(), 0.0, 0.2), 0.8);
    }

    #[test]
    fn replay_buffer_evicts_fifo() {
        let mut buf: ReplayBuffer<usize> = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 3);
        let items: Vec<usize> = buf.iter().copied().collect();
        assert_eq!(items, vec![2, 3, 4]);
    }

    fn synthetic_example() -> (ParamVector, PlannerExample) {
        let mut rng = derive_rng(5, &["t"]);
        let params = ParamVector::random(PolicyRole::Planner, 6, 4, 0.0, 5, &mut rng);
        let example = PlannerExample {
            features: FeatureVector::from_indices(vec![0, 2]),
            slots: vec![0, 1],
            action_pos: 0,
        };
        (params, example)
    }

    #[test]
    fn il_step_closed_form_uniform_loss() {
        // zero params, two legal slots -> CE loss = ln 2 exactly
        let (mut params, example) = synthetic_example();
        let loss = il_step_planner(&mut params, &[&example], 0.1).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() < 1e-12);
        // a second step must see a smaller loss
        let loss2 = il_step_planner(&mut params, &[&example], 0.1).unwrap();
        assert!(loss2 < loss);
    }

    #[test]
    fn il_step_rejects_empty_batch() {
        let (mut params, _) = synthetic_example();
        assert!(il_step_planner(&mut params, &[], 0.1).is_err());
        assert!(il_step_reflector(&mut params, &[], 0, 0.1).is_err());
    }

    #[test]
    fn on_policy_gradient_equals_reinforce() {
        // behavior logprob == current logprob -> ratio 1 (interior), so the
        // surrogate gradient is exactly -R * grad_logprob
        let mut rng = derive_rng(8, &["t"]);
        let params = ParamVector::random(PolicyRole::Planner, 10, 5, 0.5, 8, &mut rng);
        let features = FeatureVector::from_indices(vec![1, 4, 7]);
        let slots = vec![0, 2, 3];
        let pos = 1;
        let reward = 0.7;
        let lp = logprob_of(&params, &features, Slots::List(&slots), pos);
        let record = PlannerRecord {
            features: features.clone(),
            slots: slots.clone(),
            action_pos: pos,
            behavior_logprob: lp,
            reward,
        };
        let (grad, loss) = rl_grad_planner(&params, &[&record], 0.2).unwrap();
        assert!((loss + reward).abs() < 1e-12);
        let sparse = grad_logprob(&params, &features, Slots::List(&slots), pos);
        let mut expected = vec![0.0; params.values.len()];
        for (i, g) in sparse {
            expected[i] = -reward * g;
        }
        for (i, (g, e)) in grad.iter().zip(&expected).enumerate() {
            assert!((g - e).abs() < 1e-12, "index {i}: {g} vs {e}");
        }
    }

    #[test]
    fn saturated_ratio_contributes_zero_gradient() {
        let mut rng = derive_rng(9, &["t"]);
        let params = ParamVector::random(PolicyRole::Planner, 10, 5, 0.5, 9, &mut rng);
        let features = FeatureVector::from_indices(vec![0, 3]);
        let slots = vec![1, 2, 4];
        let pos = 0;
        let lp = logprob_of(&params, &features, Slots::List(&slots), pos);
        // behavior logprob far below current -> raw ratio far above 1+eps
        let record = PlannerRecord {
            features,
            slots,
            action_pos: pos,
            behavior_logprob: lp - 3.0,
            reward: 1.0,
        };
        let (grad, loss) = rl_grad_planner(&params, &[&record], 0.2).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
        assert!((loss + 1.2).abs() < 1e-12);
    }

    #[test]
    fn interior_surrogate_gradient_matches_finite_differences() {
        let mut rng = derive_rng(10, &["t"]);
        let params = ParamVector::random(PolicyRole::Planner, 8, 4, 0.3, 10, &mut rng);
        let features = FeatureVector::from_indices(vec![0, 2, 5]);
        let slots = vec![0, 1, 3];
        let pos = 2;
        let lp = logprob_of(&params, &features, Slots::List(&slots), pos);
        let record = PlannerRecord {
            features: features.clone(),
            slots: slots.clone(),
            action_pos: pos,
            behavior_logprob: lp + 0.05, // raw ratio just below 1, interior
            reward: 0.9,
        };
        let (grad, _) = rl_grad_planner(&params, &[&record], 0.2).unwrap();
        let h = 1e-6;
        for (i, &analytic) in grad.iter().enumerate() {
            let mut plus = params.clone();
            plus.values[i] += h;
            let mut minus = params.clone();
            minus.values[i] -= h;
            let f = |p: &ParamVector| {
                let lp = logprob_of(p, &features, Slots::List(&slots), pos);
                -importance_weight(lp, record.behavior_logprob, 0.2) * record.reward
            };
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!(
                (analytic - numeric).abs() < 1e-5,
                "index {i}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn lambda_zero_produces_exactly_zero_regularizer_gradient() {
        let (mut params, example) = synthetic_example();
        let record = PlannerRecord {
            features: example.features.clone(),
            slots: example.slots.clone(),
            action_pos: 0,
            behavior_logprob: logprob_of(
                &params,
                &example.features,
                Slots::List(&example.slots),
                0,
            ),
            reward: 0.5,
        };
        let stats =
            augmented_update_planner(&mut params, &[&record], &[&example], 0.0, 0.2, 0.1).unwrap();
        assert_eq!(stats.regularizer_grad_norm, 0.0);
        let stats =
            augmented_update_planner(&mut params, &[&record], &[&example], 2.0, 0.2, 0.1).unwrap();
        assert!(stats.regularizer_grad_norm > 0.0);
    }

    #[test]
    fn greedy_rollouts_are_deterministic() {
        let (env, tasks) = fixture();
        let config = TrainingConfig::default();
        let policies = PolicySet::init(&env, &config);
        let mut rng_a = derive_rng(3, &["roll"]);
        let mut rng_b = derive_rng(4, &["roll"]);
        for task in &tasks {
            let a = rollout(&policies, &env, task, 3, 0.0, true, &mut rng_a).unwrap();
            let b = rollout(&policies, &env, task, 3, 0.0, true, &mut rng_b).unwrap();
            assert_eq!(a.trials, b.trials);
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let base = TrainingConfig::default;
        assert!(TrainingConfig {
            epsilon: 0.0,
            ..base()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            epsilon: 1.0,
            ..base()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            freeze_planner: true,
            freeze_reflector: true,
            ..base()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            lambda_planner: -0.1,
            ..base()
        }
        .validate()
        .is_err());
        assert!(base().validate().is_ok());
    }

    #[test]
    fn history_csv_has_fixed_header_and_blank_gaps() {
        let history = History {
            rows: vec![HistoryRow {
                phase: "il".into(),
                iteration: 0,
                planner_loss: Some(1.5),
                reflector_loss: None,
                eval_ir: None,
                eval_fr: None,
                eval_ar: None,
                planner_reg_norm: None,
                reflector_reg_norm: None,
            }],
            warnings: Vec::new(),
        };
        let csv = history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "phase,iteration,planner_loss,reflector_loss,eval_IR,eval_FR,eval_AR"
        );
        assert_eq!(lines.next().unwrap(), "il,0,1.500000,,,,");
    }
}
