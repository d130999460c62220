//! Domain types shared by every other module: token vocabularies, textual
//! states, actions, trajectories, reflections, and multi-trial sequences.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Integer id of one token in a [`Vocab`].
pub type TokenId = u32;

/// An ordered alphabet of distinct token strings with a bijective id map.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id lookup that treats absence as a config error.
    pub fn require(&self, token: &str) -> Result<TokenId> {
        self.id(token)
            .ok_or_else(|| Error::InvalidToken(format!("token {token:?} not in vocab")))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }
}

/// The textual state the planner conditions on: task description, accumulated
/// reflections from earlier trials, and the interaction history so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateText {
    pub task_tokens: Vec<TokenId>,
    pub reflection_tokens: Vec<TokenId>,
    pub history_tokens: Vec<TokenId>,
}

impl StateText {
    pub fn initial(task_tokens: Vec<TokenId>) -> Self {
        StateText {
            task_tokens,
            reflection_tokens: Vec::new(),
            history_tokens: Vec::new(),
        }
    }
}

/// Coarse tag of an environment action; the full identity is (kind, args).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Lookup,
    Finish,
    Goto,
    Take,
    Use,
    Execute,
    Submit,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Lookup => "lookup",
            ActionKind::Finish => "finish",
            ActionKind::Goto => "goto",
            ActionKind::Take => "take",
            ActionKind::Use => "use",
            ActionKind::Execute => "execute",
            ActionKind::Submit => "submit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "lookup" => ActionKind::Lookup,
            "finish" => ActionKind::Finish,
            "goto" => ActionKind::Goto,
            "take" => ActionKind::Take,
            "use" => ActionKind::Use,
            "execute" => ActionKind::Execute,
            "submit" => ActionKind::Submit,
            other => return Err(Error::Parse(format!("unknown action kind {other:?}"))),
        })
    }

    /// Kinds that terminate a trial when executed successfully.
    pub fn is_terminal_family(self) -> bool {
        matches!(
            self,
            ActionKind::Finish | ActionKind::Use | ActionKind::Submit
        )
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One Thought/Action pair emitted by the planner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentAction {
    pub thought: Vec<TokenId>,
    pub kind: ActionKind,
    pub args: Vec<TokenId>,
    /// Index into the legal-action table that produced this action.
    pub action_id: usize,
}

/// One environment interaction: the state acted in, the action, the behavior
/// log-probability of that action, and the resulting observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: StateText,
    pub action: AgentAction,
    pub behavior_logprob: f64,
    pub observation: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Submitted,
    StepLimit,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Submitted => "submitted",
            Termination::StepLimit => "step_limit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "submitted" => Ok(Termination::Submitted),
            "step_limit" => Ok(Termination::StepLimit),
            other => Err(Error::Parse(format!("unknown termination {other:?}"))),
        }
    }
}

/// One complete trial: the ordered steps and the terminal environment reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: String,
    pub trial_index: usize,
    pub steps: Vec<Step>,
    pub terminal_reward: f64,
    pub terminated_by: Termination,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.terminal_reward) {
            return Err(Error::Contract(format!(
                "terminal_reward {} outside [0,1]",
                self.terminal_reward
            )));
        }
        for s in &self.steps {
            if s.behavior_logprob > 0.0 {
                return Err(Error::Contract(format!(
                    "behavior_logprob {} > 0",
                    s.behavior_logprob
                )));
            }
        }
        Ok(())
    }
}

/// A reflection token sequence sampled after a failed trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub tokens: Vec<TokenId>,
    pub behavior_logprob: f64,
    pub produced_after_trial: usize,
}

/// One task's trials with interleaved reflections; the unit of RL data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSequence {
    pub task_id: String,
    pub trials: Vec<Trajectory>,
    pub reflections: Vec<Reflection>,
    pub solved_at: Option<usize>,
}

impl TrialSequence {
    pub fn new(
        task_id: String,
        trials: Vec<Trajectory>,
        reflections: Vec<Reflection>,
        solved_at: Option<usize>,
    ) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Contract("empty trial sequence".into()));
        }
        for (k, t) in trials.iter().enumerate() {
            if t.trial_index != k {
                return Err(Error::Contract(format!(
                    "trial_index {} at position {k}; indices must be consecutive from 0",
                    t.trial_index
                )));
            }
            t.validate()?;
        }
        if let Some(j) = solved_at {
            if j + 1 != trials.len() {
                return Err(Error::Contract(format!(
                    "solved_at={j} but {} trials exist; trials stop at the solved trial",
                    trials.len()
                )));
            }
            // An empty list is legal when the reflector is disabled.
            if reflections.len() != j && !reflections.is_empty() {
                return Err(Error::Contract(format!(
                    "solved_at={j} requires exactly {j} reflections, got {}",
                    reflections.len()
                )));
            }
        } else if reflections.len() != trials.len() - 1 && !reflections.is_empty() {
            // Unsolved sequences carry one reflection per non-final trial (the
            // final trial never gets one); an empty list is also legal when the
            // reflector is disabled.
            return Err(Error::Contract(format!(
                "{} trials need {} reflections, got {}",
                trials.len(),
                trials.len() - 1,
                reflections.len()
            )));
        }
        for (k, r) in reflections.iter().enumerate() {
            if r.produced_after_trial != k {
                return Err(Error::Contract(format!(
                    "reflection {k} tagged produced_after_trial={}",
                    r.produced_after_trial
                )));
            }
        }
        Ok(TrialSequence {
            task_id,
            trials,
            reflections,
            solved_at,
        })
    }

    /// Terminal reward of each trial, in trial order.
    pub fn trial_rewards(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.terminal_reward).collect()
    }
}

/// Builds the initial state of the next trial by appending all accumulated
/// reflection tokens to the base initial state.
pub fn append_reflections(
    initial: &StateText,
    reflections: &[Reflection],
    vocab: &Vocab,
) -> Result<StateText> {
    debug_assert!(initial.history_tokens.is_empty());
    let mut reflection_tokens =
        Vec::with_capacity(reflections.iter().map(|r| r.tokens.len()).sum());
    for r in reflections {
        for &t in &r.tokens {
            if !vocab.contains_id(t) {
                return Err(Error::InvalidToken(format!(
                    "reflection token id {t} outside vocab of size {}",
                    vocab.len()
                )));
            }
            reflection_tokens.push(t);
        }
    }
    Ok(StateText {
        task_tokens: initial.task_tokens.clone(),
        reflection_tokens,
        history_tokens: Vec::new(),
    })
}

fn join_ids(ids: &[TokenId]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&id.to_string());
    }
    s
}

fn parse_ids(s: &str) -> Result<Vec<TokenId>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.parse::<TokenId>()
                .map_err(|_| Error::Parse(format!("bad token id {p:?}")))
        })
        .collect()
}

/// Writes one trajectory as line-delimited text: one record per step followed
/// by a trial-end record. Values are tab-separated; token sequences are
/// comma-joined integers; the three state banks are joined with `|`.
pub fn write_trajectory_log(traj: &Trajectory, out: &mut String) {
    for (i, s) in traj.steps.iter().enumerate() {
        let state = format!(
            "{}|{}|{}",
            join_ids(&s.state.task_tokens),
            join_ids(&s.state.reflection_tokens),
            join_ids(&s.state.history_tokens)
        );
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            traj.task_id,
            traj.trial_index,
            i,
            state,
            s.action.action_id,
            s.behavior_logprob,
            join_ids(&s.observation),
            s.action.kind,
            join_ids(&s.action.args),
            join_ids(&s.action.thought),
        ));
    }
    out.push_str(&format!(
        "{}\t{}\tend\t{}\t{}\n",
        traj.task_id,
        traj.trial_index,
        traj.terminal_reward,
        traj.terminated_by.as_str()
    ));
}

/// Parses one trajectory written by [`write_trajectory_log`].
pub fn parse_trajectory_log(text: &str) -> Result<Trajectory> {
    let mut steps = Vec::new();
    let mut header: Option<(String, usize)> = None;
    let mut end: Option<(f64, Termination)> = None;
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() >= 3 && fields[2] == "end" {
            if fields.len() != 5 {
                return Err(Error::Parse(format!("bad end record: {line:?}")));
            }
            let reward = fields[3]
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad reward {:?}", fields[3])))?;
            end = Some((reward, Termination::parse(fields[4])?));
            header.get_or_insert_with(|| (fields[0].to_string(), fields[1].parse().unwrap_or(0)));
            continue;
        }
        if fields.len() != 10 {
            return Err(Error::Parse(format!("bad step record: {line:?}")));
        }
        let trial = fields[1]
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad trial index {:?}", fields[1])))?;
        header.get_or_insert_with(|| (fields[0].to_string(), trial));
        let banks: Vec<&str> = fields[3].split('|').collect();
        if banks.len() != 3 {
            return Err(Error::Parse(format!("bad state field {:?}", fields[3])));
        }
        steps.push(Step {
            state: StateText {
                task_tokens: parse_ids(banks[0])?,
                reflection_tokens: parse_ids(banks[1])?,
                history_tokens: parse_ids(banks[2])?,
            },
            action: AgentAction {
                action_id: fields[4]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad action id {:?}", fields[4])))?,
                kind: ActionKind::parse(fields[7])?,
                args: parse_ids(fields[8])?,
                thought: parse_ids(fields[9])?,
            },
            behavior_logprob: fields[5]
                .parse()
                .map_err(|_| Error::Parse(format!("bad logprob {:?}", fields[5])))?,
            observation: parse_ids(fields[6])?,
        });
    }
    let (task_id, trial_index) =
        header.ok_or_else(|| Error::Parse("empty trajectory log".into()))?;
    let (terminal_reward, terminated_by) =
        end.ok_or_else(|| Error::Parse("missing trial-end record".into()))?;
    Ok(Trajectory {
        task_id,
        trial_index,
        steps,
        terminal_reward,
        terminated_by,
    })
}
