//! Featurized linear-softmax policies with exact log-probabilities and
//! analytic gradients, shared by the planner and the reflector.
//!
//! Parameters form a dense `feature_dim x max_action_slots` matrix stored
//! row-major. Actions are scored by their global catalog slot, so one weight
//! column keeps a stable meaning across states and tasks.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{StateText, Termination, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyRole {
    Planner,
    Reflector,
    Shared,
}

impl PolicyRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyRole::Planner => "planner",
            PolicyRole::Reflector => "reflector",
            PolicyRole::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "planner" => Ok(PolicyRole::Planner),
            "reflector" => Ok(PolicyRole::Reflector),
            "shared" => Ok(PolicyRole::Shared),
            other => Err(Error::Parse(format!("unknown policy role {other:?}"))),
        }
    }
}

/// Flat parameters of one featurized softmax policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub feature_dim: usize,
    pub max_action_slots: usize,
    pub role: PolicyRole,
    pub seed: u64,
}

impl ParamVector {
    pub fn zeros(role: PolicyRole, feature_dim: usize, max_action_slots: usize) -> Self {
        ParamVector {
            values: vec![0.0; feature_dim * max_action_slots],
            feature_dim,
            max_action_slots,
            role,
            seed: 0,
        }
    }

    /// Small random init, uniform in [-scale, scale].
    pub fn random<R: Rng>(
        role: PolicyRole,
        feature_dim: usize,
        max_action_slots: usize,
        scale: f64,
        seed: u64,
        rng: &mut R,
    ) -> Self {
        let values = (0..feature_dim * max_action_slots)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        ParamVector {
            values,
            feature_dim,
            max_action_slots,
            role,
            seed,
        }
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Contract("non-finite parameter value".into()))
        }
    }
}

/// Sparse binary feature vector: sorted distinct active indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub indices: Vec<usize>,
}

impl FeatureVector {
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        FeatureVector { indices }
    }
}

/// The action slots a distribution ranges over: either an explicit list of
/// catalog slots or a contiguous range (used by reflection alphabets).
#[derive(Debug, Clone, Copy)]
pub enum Slots<'a> {
    List(&'a [usize]),
    Range { base: usize, len: usize },
}

impl Slots<'_> {
    pub fn len(&self) -> usize {
        match self {
            Slots::List(s) => s.len(),
            Slots::Range { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> usize {
        match self {
            Slots::List(s) => s[i],
            Slots::Range { base, .. } => base + i,
        }
    }
}

/// A probability vector aligned with the slot table it was computed over.
#[derive(Debug, Clone)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub temperature: f64,
}

/// Layout of the shared feature index space.
///
/// State features occupy three disjoint token banks (task, reflection, recent
/// history); trajectory features reuse the task and history banks and add
/// action-slot, reward-bucket, termination, and role-flag indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpace {
    pub vocab_size: usize,
    pub catalog_slots: usize,
    pub history_window: usize,
}

pub const REWARD_BUCKETS: usize = 4;
pub const DEFAULT_HISTORY_WINDOW: usize = 16;

impl FeatureSpace {
    pub fn new(vocab_size: usize, catalog_slots: usize) -> Self {
        FeatureSpace {
            vocab_size,
            catalog_slots,
            history_window: DEFAULT_HISTORY_WINDOW,
        }
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.vocab_size + self.catalog_slots + REWARD_BUCKETS + 2 + 1
    }

    pub fn task_base(&self) -> usize {
        0
    }

    pub fn reflection_base(&self) -> usize {
        self.vocab_size
    }

    pub fn history_base(&self) -> usize {
        2 * self.vocab_size
    }

    fn action_base(&self) -> usize {
        3 * self.vocab_size
    }

    fn reward_base(&self) -> usize {
        self.action_base() + self.catalog_slots
    }

    fn termination_base(&self) -> usize {
        self.reward_base() + REWARD_BUCKETS
    }

    pub fn role_flag_index(&self) -> usize {
        self.termination_base() + 2
    }

    /// Binary bag-of-tokens over the three state banks. The history bank only
    /// sees the last `history_window` tokens.
    pub fn featurize_state(&self, state: &StateText) -> FeatureVector {
        let mut idx = Vec::new();
        for &t in &state.task_tokens {
            idx.push(self.task_base() + t as usize);
        }
        for &t in &state.reflection_tokens {
            idx.push(self.reflection_base() + t as usize);
        }
        let hist = &state.history_tokens;
        let start = hist.len().saturating_sub(self.history_window);
        for &t in &hist[start..] {
            idx.push(self.history_base() + t as usize);
        }
        FeatureVector::from_indices(idx)
    }

    /// Features of a completed trajectory for reflector conditioning: task
    /// tokens, catalog slots of all actions taken, final observation tokens, a
    /// quantized terminal-reward bucket, and the termination flag.
    ///
    /// `action_slots` must align with `traj.steps` (catalog slot per step).
    pub fn featurize_trajectory(
        &self,
        traj: &Trajectory,
        action_slots: &[usize],
        shared_mode: bool,
    ) -> FeatureVector {
        let mut idx = Vec::new();
        if let Some(first) = traj.steps.first() {
            for &t in &first.state.task_tokens {
                idx.push(self.task_base() + t as usize);
            }
        }
        for &slot in action_slots {
            idx.push(self.action_base() + slot);
        }
        // Terminal actions observe nothing, so the final observation is the
        // last non-empty one.
        if let Some(last) = traj.steps.iter().rev().find(|s| !s.observation.is_empty()) {
            for &t in &last.observation {
                idx.push(self.history_base() + t as usize);
            }
        }
        let bucket =
            ((traj.terminal_reward * REWARD_BUCKETS as f64) as usize).min(REWARD_BUCKETS - 1);
        idx.push(self.reward_base() + bucket);
        idx.push(
            self.termination_base() + usize::from(traj.terminated_by == Termination::StepLimit),
        );
        if shared_mode {
            idx.push(self.role_flag_index());
        }
        FeatureVector::from_indices(idx)
    }
}

/// Linear scores: score[j] = sum over active features i of
/// values[i * max_action_slots + slot_j].
pub fn action_scores(params: &ParamVector, features: &FeatureVector, slots: Slots) -> Vec<f64> {
    let stride = params.max_action_slots;
    let mut scores = vec![0.0; slots.len()];
    for &i in &features.indices {
        let row = &params.values[i * stride..(i + 1) * stride];
        for (j, s) in scores.iter_mut().enumerate() {
            *s += row[slots.get(j)];
        }
    }
    scores
}

fn softmax_from_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn argmax_lowest_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Softmax over scores/temperature; temperature 0 puts all mass on the argmax
/// (ties broken by lowest index).
pub fn distribution(
    params: &ParamVector,
    features: &FeatureVector,
    slots: Slots,
    temperature: f64,
) -> ActionDistribution {
    let scores = action_scores(params, features, slots);
    let probs = if temperature == 0.0 {
        let mut p = vec![0.0; scores.len()];
        p[argmax_lowest_index(&scores)] = 1.0;
        p
    } else {
        let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
        softmax_from_scores(&scaled)
    };
    ActionDistribution { probs, temperature }
}

/// Samples an index from the tempered distribution; returns the index and the
/// log-probability under that same distribution (0 for the greedy case).
pub fn sample<R: Rng>(
    params: &ParamVector,
    features: &FeatureVector,
    slots: Slots,
    temperature: f64,
    rng: &mut R,
) -> (usize, f64) {
    let dist = distribution(params, features, slots, temperature);
    if temperature == 0.0 {
        let idx = dist.probs.iter().position(|&p| p == 1.0).unwrap();
        return (idx, 0.0);
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut idx = dist.probs.len() - 1;
    for (i, &p) in dist.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            idx = i;
            break;
        }
    }
    (idx, dist.probs[idx].ln())
}

/// Log-probability of slot `index` under the temperature-1 softmax, computed
/// with max-subtraction.
pub fn logprob_of(
    params: &ParamVector,
    features: &FeatureVector,
    slots: Slots,
    index: usize,
) -> f64 {
    let scores = action_scores(params, features, slots);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logz = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
    scores[index] - logz
}

/// Analytic gradient of [`logprob_of`] with respect to the parameters:
/// (1{j=index} - prob[j]) at each (active feature, slot) entry.
pub fn grad_logprob(
    params: &ParamVector,
    features: &FeatureVector,
    slots: Slots,
    index: usize,
) -> Vec<(usize, f64)> {
    let probs = distribution(params, features, slots, 1.0).probs;
    let stride = params.max_action_slots;
    let mut out = Vec::with_capacity(features.indices.len() * slots.len());
    for &i in &features.indices {
        for (j, &p) in probs.iter().enumerate() {
            let g = f64::from(j == index) - p;
            out.push((i * stride + slots.get(j), g));
        }
    }
    out
}

/// Accumulates `scale * grad_logprob` into a dense gradient buffer without
/// allocating the sparse representation.
pub fn accumulate_grad_logprob(
    params: &ParamVector,
    features: &FeatureVector,
    slots: Slots,
    index: usize,
    scale: f64,
    out: &mut [f64],
) {
    let probs = distribution(params, features, slots, 1.0).probs;
    let stride = params.max_action_slots;
    for &i in &features.indices {
        for (j, &p) in probs.iter().enumerate() {
            out[i * stride + slots.get(j)] += scale * (f64::from(j == index) - p);
        }
    }
}

/// Writes a parameter checkpoint: a text header followed by the dense vector.
/// f64 values round-trip bit-exactly through their shortest decimal form.
pub fn save_checkpoint(path: &Path, params: &ParamVector) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(&format!("role {}\n", params.role.as_str()));
    buf.push_str(&format!("feature_dim {}\n", params.feature_dim));
    buf.push_str(&format!("max_action_slots {}\n", params.max_action_slots));
    buf.push_str(&format!("seed {}\n", params.seed));
    for (i, v) in params.values.iter().enumerate() {
        if i > 0 {
            buf.push(' ');
        }
        buf.push_str(&v.to_string());
    }
    buf.push('\n');
    let mut f = std::fs::File::create(path)?;
    f.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut header = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("checkpoint missing {key} line")))?;
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| Error::Parse(format!("bad checkpoint line {line:?}")))?;
        if k != key {
            return Err(Error::Parse(format!("expected {key}, got {k}")));
        }
        Ok(v.to_string())
    };
    let role = PolicyRole::parse(&header("role")?)?;
    let feature_dim: usize = header("feature_dim")?
        .parse()
        .map_err(|_| Error::Parse("bad feature_dim".into()))?;
    let max_action_slots: usize = header("max_action_slots")?
        .parse()
        .map_err(|_| Error::Parse("bad max_action_slots".into()))?;
    let seed: u64 = header("seed")?
        .parse()
        .map_err(|_| Error::Parse("bad seed".into()))?;
    let values_line = lines
        .next()
        .ok_or_else(|| Error::Parse("checkpoint missing values".into()))?;
    let values: Vec<f64> = values_line
        .split(' ')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad value {v:?}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != feature_dim * max_action_slots {
        return Err(Error::Parse(format!(
            "checkpoint has {} values, expected {}",
            values.len(),
            feature_dim * max_action_slots
        )));
    }
    Ok(ParamVector {
        values,
        feature_dim,
        max_action_slots,
        role,
        seed,
    })
}
