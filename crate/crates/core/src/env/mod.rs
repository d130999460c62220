//! Environment contract plus three deterministic toy environments, each with
//! a dense or binary reward backend, a scripted expert planner, and a scripted
//! expert reflector:
//!
//! * `graphqa` — two-hop lookup questions over a generated relation graph,
//!   rewarded by token F1 against the gold answer set.
//! * `gridhouse` — household pick-and-use tasks over locations, rewarded by
//!   binary success.
//! * `setquery` — query selection over a generated record table, rewarded by
//!   IoU times rank agreement against the gold result.

mod graphqa;
mod gridhouse;
mod setquery;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::FeatureSpace;
use crate::types::{
    append_reflections, ActionKind, AgentAction, Reflection, StateText, Termination, TokenId,
    Trajectory, Vocab,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    GraphQa,
    GridHouse,
    SetQuery,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::GraphQa => "graphqa",
            EnvKind::GridHouse => "gridhouse",
            EnvKind::SetQuery => "setquery",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "graphqa" => Ok(EnvKind::GraphQa),
            "gridhouse" => Ok(EnvKind::GridHouse),
            "setquery" => Ok(EnvKind::SetQuery),
            other => Err(Error::Config(format!("unknown env kind {other:?}"))),
        }
    }

    pub fn default_step_limit(self) -> usize {
        match self {
            EnvKind::GraphQa => 5,
            EnvKind::GridHouse => 20,
            EnvKind::SetQuery => 10,
        }
    }

    pub fn default_size(self) -> usize {
        match self {
            EnvKind::GraphQa => 6,   // entity pool
            EnvKind::GridHouse => 6, // locations
            EnvKind::SetQuery => 8,  // table rows
        }
    }
}

/// Environment shape and generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Entity count / location count / table rows, depending on kind.
    pub size: usize,
    pub step_limit: usize,
    pub expert_error_rate: f64,
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        EnvConfig {
            kind,
            size: kind.default_size(),
            step_limit: kind.default_step_limit(),
            expert_error_rate: 0.25,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_limit < 1 {
            return Err(Error::Config("step_limit must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.expert_error_rate) {
            return Err(Error::Config(format!(
                "expert_error_rate {} outside [0,1)",
                self.expert_error_rate
            )));
        }
        let min_size = match self.kind {
            EnvKind::GraphQa => 6,
            EnvKind::GridHouse => 2,
            EnvKind::SetQuery => 4,
        };
        if self.size < min_size {
            return Err(Error::Config(format!(
                "size {} too small for {} (min {min_size})",
                self.size,
                self.kind.as_str()
            )));
        }
        Ok(())
    }

    /// One-line text manifest pinning the exact world.
    pub fn manifest(&self) -> String {
        format!(
            "env_kind={} size={} step_limit={} expert_error_rate={} seed={}",
            self.kind.as_str(),
            self.size,
            self.step_limit,
            self.expert_error_rate,
            self.seed
        )
    }

    pub fn parse_manifest(line: &str) -> Result<Self> {
        let mut kind = None;
        let mut size = None;
        let mut step_limit = None;
        let mut error_rate = None;
        let mut seed = None;
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad manifest field {field:?}")))?;
            match k {
                "env_kind" => kind = Some(EnvKind::parse(v)?),
                "size" => size = v.parse().ok(),
                "step_limit" => step_limit = v.parse().ok(),
                "expert_error_rate" => error_rate = v.parse().ok(),
                "seed" => seed = v.parse().ok(),
                other => return Err(Error::Parse(format!("unknown manifest key {other:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Parse("manifest missing env_kind".into()))?;
        let cfg = EnvConfig {
            kind,
            size: size.ok_or_else(|| Error::Parse("manifest missing size".into()))?,
            step_limit: step_limit
                .ok_or_else(|| Error::Parse("manifest missing step_limit".into()))?,
            expert_error_rate: error_rate
                .ok_or_else(|| Error::Parse("manifest missing expert_error_rate".into()))?,
            seed: seed.ok_or_else(|| Error::Parse("manifest missing seed".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One task with its environment-private ground truth.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub task_id: String,
    pub task_tokens: Vec<TokenId>,
    pub(crate) hidden: Hidden,
}

#[derive(Debug, Clone)]
pub(crate) enum Hidden {
    Graph(graphqa::GraphTask),
    Grid(gridhouse::GridTask),
    Set(setquery::SetTask),
}

/// One legal action: its global catalog slot plus the resolved thought
/// template and argument tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEntry {
    pub slot: usize,
    pub kind: ActionKind,
    pub args: Vec<TokenId>,
    pub thought: Vec<TokenId>,
}

/// Ordered, deterministic table of the actions legal in one state.
#[derive(Debug, Clone)]
pub struct ActionTable {
    pub entries: Vec<ActionEntry>,
}

impl ActionTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn slots(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.slot).collect()
    }
}

/// The full per-trial state threaded by rollout drivers: the policy-visible
/// text plus the simulator state it determines.
#[derive(Debug, Clone)]
pub struct TrialState {
    pub text: StateText,
    pub step_index: usize,
    pub(crate) sim: Sim,
}

#[derive(Debug, Clone)]
pub(crate) enum Sim {
    Graph(graphqa::GraphSim),
    Grid(gridhouse::GridSim),
    Set(setquery::SetSim),
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Vec<TokenId>,
    pub next: TrialState,
    pub done: bool,
    /// True when a terminal-family action ended the trial (vs the step limit).
    pub submitted: bool,
    pub reward_if_done: Option<f64>,
}

/// Result of replaying a recorded trajectory against the simulator: the legal
/// slot table and chosen catalog slot at each step, plus the final reward.
#[derive(Debug, Clone)]
pub struct ReplayInfo {
    pub step_tables: Vec<Vec<usize>>,
    pub chosen_slots: Vec<usize>,
    pub reward: f64,
    pub(crate) final_sim: Sim,
}

#[derive(Debug)]
enum Inner {
    Graph(graphqa::GraphEnv),
    Grid(gridhouse::GridEnv),
    Set(setquery::SetEnv),
}

/// A fully instantiated environment: vocabulary, action catalog, reflection
/// alphabet, and generation machinery for one [`EnvConfig`].
#[derive(Debug)]
pub struct Environment {
    config: EnvConfig,
    inner: Inner,
}

impl Environment {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        config.validate()?;
        let inner = match config.kind {
            EnvKind::GraphQa => Inner::Graph(graphqa::GraphEnv::new(config)?),
            EnvKind::GridHouse => Inner::Grid(gridhouse::GridEnv::new(config)?),
            EnvKind::SetQuery => Inner::Set(setquery::SetEnv::new(config)?),
        };
        Ok(Environment {
            config: config.clone(),
            inner,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        match &self.inner {
            Inner::Graph(e) => &e.vocab,
            Inner::Grid(e) => &e.vocab,
            Inner::Set(e) => &e.vocab,
        }
    }

    /// Token ids of the environment's reflection alphabet, in alphabet order.
    pub fn reflection_alphabet(&self) -> &[TokenId] {
        match &self.inner {
            Inner::Graph(e) => &e.alphabet,
            Inner::Grid(e) => &e.alphabet,
            Inner::Set(e) => &e.alphabet,
        }
    }

    pub fn catalog_len(&self) -> usize {
        match &self.inner {
            Inner::Graph(e) => e.catalog_len(),
            Inner::Grid(e) => e.catalog_len(),
            Inner::Set(e) => e.catalog_len(),
        }
    }

    pub fn feature_space(&self) -> FeatureSpace {
        FeatureSpace::new(self.vocab().len(), self.catalog_len())
    }

    pub fn step_limit(&self) -> usize {
        self.config.step_limit
    }

    /// Deterministically generates `count` distinct, expert-solvable tasks.
    pub fn generate_tasks(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TaskInstance>> {
        if count < 1 {
            return Err(Error::Config("task count must be >= 1".into()));
        }
        let mut tasks = Vec::with_capacity(count);
        for i in 0..count {
            let task_id = format!("{}-{}-{}", self.config.kind.as_str(), self.config.seed, i);
            tasks.push(match &self.inner {
                Inner::Graph(e) => e.generate_task(task_id, rng),
                Inner::Grid(e) => e.generate_task(task_id, rng),
                Inner::Set(e) => e.generate_task(task_id, rng),
            });
        }
        Ok(tasks)
    }

    /// Initial trial state: the base initial state with all accumulated
    /// reflection tokens appended.
    pub fn reset(&self, task: &TaskInstance, reflections: &[Reflection]) -> Result<TrialState> {
        let base = StateText::initial(task.task_tokens.clone());
        let text = append_reflections(&base, reflections, self.vocab())?;
        let sim = self.initial_sim(task, &text.reflection_tokens)?;
        Ok(TrialState {
            text,
            step_index: 0,
            sim,
        })
    }

    fn initial_sim(&self, task: &TaskInstance, reflection_tokens: &[TokenId]) -> Result<Sim> {
        Ok(match &self.inner {
            Inner::Graph(e) => Sim::Graph(e.initial_sim(task, reflection_tokens)?),
            Inner::Grid(e) => Sim::Grid(e.initial_sim(task)?),
            Inner::Set(e) => Sim::Set(e.initial_sim(task)?),
        })
    }

    /// Deterministic table of the actions legal in `state`.
    pub fn legal_actions(&self, task: &TaskInstance, state: &TrialState) -> ActionTable {
        let entries = match (&self.inner, &state.sim) {
            (Inner::Graph(e), Sim::Graph(sim)) => e.legal_entries(task, sim),
            (Inner::Grid(e), Sim::Grid(sim)) => e.legal_entries(task, sim),
            (Inner::Set(e), Sim::Set(sim)) => e.legal_entries(task, sim),
            _ => panic!("state does not belong to this environment"),
        };
        ActionTable { entries }
    }

    /// Applies one action: appends thought + action args + observation to the
    /// history, advances the simulator, and reports termination.
    pub fn step(
        &self,
        task: &TaskInstance,
        state: &TrialState,
        action: &AgentAction,
    ) -> Result<StepOutcome> {
        let table = self.legal_actions(task, state);
        let entry = table.entries.get(action.action_id).ok_or_else(|| {
            Error::Contract(format!(
                "action_id {} out of range for table of {}",
                action.action_id,
                table.len()
            ))
        })?;
        let mut sim = state.sim.clone();
        let (observation, terminal) = match (&self.inner, &mut sim) {
            // graphqa tables can repeat a catalog slot (one per edge), so the
            // transition is resolved from the full entry, not the slot.
            (Inner::Graph(e), Sim::Graph(s)) => e.apply(task, s, entry),
            (Inner::Grid(e), Sim::Grid(s)) => e.apply(task, s, entry.slot),
            (Inner::Set(e), Sim::Set(s)) => e.apply(task, s, entry.slot),
            _ => unreachable!(),
        };
        let step_index = state.step_index + 1;
        let done = terminal || step_index >= self.config.step_limit;
        let reward_if_done = done.then(|| self.sim_reward(task, &sim));
        let mut history = state.text.history_tokens.clone();
        history.extend_from_slice(&entry.thought);
        history.extend_from_slice(&entry.args);
        history.extend_from_slice(&observation);
        Ok(StepOutcome {
            observation,
            submitted: terminal,
            next: TrialState {
                text: StateText {
                    task_tokens: state.text.task_tokens.clone(),
                    reflection_tokens: state.text.reflection_tokens.clone(),
                    history_tokens: history,
                },
                step_index,
                sim,
            },
            done,
            reward_if_done,
        })
    }

    fn sim_reward(&self, task: &TaskInstance, sim: &Sim) -> f64 {
        match (&self.inner, sim) {
            (Inner::Graph(e), Sim::Graph(s)) => e.reward(task, s),
            (Inner::Grid(e), Sim::Grid(s)) => e.reward(task, s),
            (Inner::Set(e), Sim::Set(s)) => e.reward(task, s),
            _ => unreachable!(),
        }
    }

    fn sim_eval_pass(&self, task: &TaskInstance, sim: &Sim) -> bool {
        match (&self.inner, sim) {
            (Inner::Graph(e), Sim::Graph(s)) => e.eval_pass(task, s),
            (Inner::Grid(e), Sim::Grid(s)) => e.eval_pass(task, s),
            (Inner::Set(e), Sim::Set(s)) => e.eval_pass(task, s),
            _ => unreachable!(),
        }
    }

    /// Replays a recorded trajectory, regenerating the legal table at each
    /// step; the single transition engine behind rewards and dataset builds.
    pub fn replay(&self, task: &TaskInstance, traj: &Trajectory) -> Result<ReplayInfo> {
        // Reflection tokens can affect legality (graphqa hints mention their
        // entity), so the replay restores them from the recorded first state.
        let reflection_tokens = traj
            .steps
            .first()
            .map(|s| s.state.reflection_tokens.clone())
            .unwrap_or_default();
        let mut state = TrialState {
            text: StateText {
                task_tokens: task.task_tokens.clone(),
                reflection_tokens: reflection_tokens.clone(),
                history_tokens: Vec::new(),
            },
            step_index: 0,
            sim: self.initial_sim(task, &reflection_tokens)?,
        };
        let mut step_tables = Vec::with_capacity(traj.steps.len());
        let mut chosen_slots = Vec::with_capacity(traj.steps.len());
        for step in &traj.steps {
            let table = self.legal_actions(task, &state);
            let entry = table.entries.get(step.action.action_id).ok_or_else(|| {
                Error::Contract(format!(
                    "recorded action_id {} invalid during replay",
                    step.action.action_id
                ))
            })?;
            chosen_slots.push(entry.slot);
            step_tables.push(table.slots());
            let action = AgentAction {
                thought: entry.thought.clone(),
                kind: entry.kind,
                args: entry.args.clone(),
                action_id: step.action.action_id,
            };
            let out = self.step(task, &state, &action)?;
            state = out.next;
        }
        let reward = self.sim_reward(task, &state.sim);
        Ok(ReplayInfo {
            step_tables,
            chosen_slots,
            reward,
            final_sim: state.sim,
        })
    }

    /// Terminal environment reward of a complete trajectory.
    pub fn final_reward(&self, task: &TaskInstance, traj: &Trajectory) -> Result<f64> {
        Ok(self.replay(task, traj)?.reward)
    }

    /// Strict evaluator used to filter positive expert examples.
    pub fn evaluator_pass(&self, task: &TaskInstance, traj: &Trajectory) -> Result<bool> {
        let info = self.replay(task, traj)?;
        Ok(self.sim_eval_pass(task, &info.final_sim))
    }

    /// The scripted teacher planner: the oracle-optimal action with
    /// probability `1 - error_rate`, otherwise a uniformly random non-optimal
    /// legal action. The returned behavior log-prob reflects that mixture.
    pub fn expert_action(
        &self,
        task: &TaskInstance,
        state: &TrialState,
        error_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> (AgentAction, f64) {
        let table = self.legal_actions(task, state);
        let optimal_pos = match (&self.inner, &state.sim) {
            (Inner::Graph(e), Sim::Graph(s)) => e.expert_position(task, s, &table.entries),
            (Inner::Grid(e), Sim::Grid(s)) => {
                let slot = e.expert_slot(task, s);
                table
                    .entries
                    .iter()
                    .position(|en| en.slot == slot)
                    .expect("expert action must be legal")
            }
            (Inner::Set(e), Sim::Set(s)) => {
                let slot = e.expert_slot(task, s);
                table
                    .entries
                    .iter()
                    .position(|en| en.slot == slot)
                    .expect("expert action must be legal")
            }
            _ => unreachable!(),
        };
        let n = table.len();
        let pos = if n > 1 && rng.gen::<f64>() < error_rate {
            let mut alt = rng.gen_range(0..n - 1);
            if alt >= optimal_pos {
                alt += 1;
            }
            alt
        } else {
            optimal_pos
        };
        let prob = if n == 1 {
            1.0
        } else if pos == optimal_pos {
            1.0 - error_rate
        } else {
            error_rate / (n - 1) as f64
        };
        let entry = &table.entries[pos];
        (
            AgentAction {
                thought: entry.thought.clone(),
                kind: entry.kind,
                args: entry.args.clone(),
                action_id: pos,
            },
            prob.ln(),
        )
    }

    /// The scripted teacher reflector: the alphabet token whose hint corrects
    /// the given failed trajectory. Errors on fully successful trajectories.
    pub fn expert_reflection(
        &self,
        task: &TaskInstance,
        failed: &Trajectory,
    ) -> Result<Reflection> {
        if failed.terminal_reward >= 1.0 {
            return Err(Error::Contract(
                "expert_reflection called on a successful trajectory".into(),
            ));
        }
        let info = self.replay(task, failed)?;
        let index = match (&self.inner, &info.final_sim) {
            (Inner::Graph(e), Sim::Graph(s)) => e.reflection_index(task, s),
            (Inner::Grid(e), Sim::Grid(s)) => e.reflection_index(task, s),
            (Inner::Set(e), Sim::Set(s)) => e.reflection_index(task, s),
            _ => unreachable!(),
        };
        Ok(Reflection {
            tokens: vec![self.reflection_alphabet()[index]],
            behavior_logprob: 0.0,
            produced_after_trial: failed.trial_index,
        })
    }

    /// Position of a reflection token in the alphabet.
    pub fn reflection_index_of(&self, reflection: &Reflection) -> Result<usize> {
        let token = *reflection
            .tokens
            .first()
            .ok_or_else(|| Error::Contract("empty reflection".into()))?;
        self.reflection_alphabet()
            .iter()
            .position(|&t| t == token)
            .ok_or_else(|| Error::InvalidToken(format!("token {token} not in reflection alphabet")))
    }
}

/// Termination tag for a finished trial.
pub fn termination_of(submitted: bool) -> Termination {
    if submitted {
        Termination::Submitted
    } else {
        Termination::StepLimit
    }
}
