//! Query selection over a generated record table. Each task hides a gold
//! query (sort attribute + direction); executing a query observes its ordered
//! result rows and submitting scores the last executed result against the
//! gold result with the IoU-times-rank-agreement reward.
//!
//! Task descriptions sometimes state the direction through a negation
//! modifier, which makes direction choice deliberately hard for a purely
//! linear planner and leaves room for reflection-driven correction.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActionEntry, EnvConfig, Hidden, TaskInstance};
use crate::error::Result;
use crate::metrics::iou_kendall_reward;
use crate::types::{ActionKind, TokenId, Vocab};

const ATTRS: usize = 4;

#[derive(Debug, Clone)]
pub(crate) struct SetTask {
    gold_attr: usize,
    gold_desc: bool,
    /// result rows of every query, indexed by query slot
    results: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub(crate) struct SetSim {
    last_result: Option<Vec<usize>>,
    submitted: bool,
}

#[derive(Debug)]
pub(crate) struct SetEnv {
    pub vocab: Vocab,
    pub alphabet: Vec<TokenId>,
    rows: usize,
    want: TokenId,
    attr_tok: Vec<TokenId>,
    dir_asc: TokenId,
    dir_desc: TokenId,
    negate: TokenId,
    row_tok: Vec<TokenId>,
    t_exec: TokenId,
    t_submit: TokenId,
    empty: TokenId,
}

impl SetEnv {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        let n = config.size;
        let mut tokens = vec!["want".to_string()];
        tokens.extend((0..ATTRS).map(|a| format!("attr-{a}")));
        tokens.extend(["dir-asc", "dir-desc", "mod-neg"].map(String::from));
        tokens.extend((0..n).map(|r| format!("row-{r}")));
        for a in 0..ATTRS {
            tokens.push(format!("hint-q-{a}-asc"));
            tokens.push(format!("hint-q-{a}-desc"));
        }
        tokens.extend(["t-exec", "t-submit", "empty"].map(String::from));
        let vocab = Vocab::new(tokens)?;
        let ids = |names: Vec<String>| -> Result<Vec<TokenId>> {
            names.iter().map(|t| vocab.require(t)).collect()
        };
        let alphabet = ids((0..ATTRS)
            .flat_map(|a| [format!("hint-q-{a}-asc"), format!("hint-q-{a}-desc")])
            .collect())?;
        Ok(SetEnv {
            want: vocab.require("want")?,
            attr_tok: ids((0..ATTRS).map(|a| format!("attr-{a}")).collect())?,
            dir_asc: vocab.require("dir-asc")?,
            dir_desc: vocab.require("dir-desc")?,
            negate: vocab.require("mod-neg")?,
            row_tok: ids((0..n).map(|r| format!("row-{r}")).collect())?,
            t_exec: vocab.require("t-exec")?,
            t_submit: vocab.require("t-submit")?,
            empty: vocab.require("empty")?,
            alphabet,
            vocab,
            rows: n,
        })
    }

    // Catalog layout: execute(attr, dir) pairs, then submit.
    fn slot_execute(&self, attr: usize, desc: bool) -> usize {
        attr * 2 + usize::from(desc)
    }

    fn slot_submit(&self) -> usize {
        2 * ATTRS
    }

    pub fn catalog_len(&self) -> usize {
        2 * ATTRS + 1
    }

    pub fn generate_task(&self, task_id: String, rng: &mut ChaCha8Rng) -> TaskInstance {
        let n = self.rows;
        let keep = n / 2;
        // one total order per attribute: a random permutation of the rows
        let mut results = Vec::with_capacity(2 * ATTRS);
        for _ in 0..ATTRS {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let asc: Vec<usize> = order[..keep].to_vec();
            let desc: Vec<usize> = order.iter().rev().take(keep).copied().collect();
            results.push(asc);
            results.push(desc);
        }
        let gold_attr = rng.gen_range(0..ATTRS);
        let gold_desc = rng.gen::<bool>();
        let negated = rng.gen::<bool>();
        let shown_desc = gold_desc != negated;
        let mut task_tokens = vec![
            self.want,
            self.attr_tok[gold_attr],
            if shown_desc {
                self.dir_desc
            } else {
                self.dir_asc
            },
        ];
        if negated {
            task_tokens.push(self.negate);
        }
        TaskInstance {
            task_id,
            task_tokens,
            hidden: Hidden::Set(SetTask {
                gold_attr,
                gold_desc,
                results,
            }),
        }
    }

    fn task(task: &TaskInstance) -> &SetTask {
        match &task.hidden {
            Hidden::Set(t) => t,
            _ => panic!("task does not belong to setquery"),
        }
    }

    fn gold_result<'a>(&self, t: &'a SetTask) -> &'a [usize] {
        &t.results[self.slot_execute(t.gold_attr, t.gold_desc)]
    }

    pub fn initial_sim(&self, _task: &TaskInstance) -> Result<SetSim> {
        Ok(SetSim {
            last_result: None,
            submitted: false,
        })
    }

    /// Static table: every candidate query plus submit.
    pub fn legal_entries(&self, _task: &TaskInstance, _sim: &SetSim) -> Vec<ActionEntry> {
        let mut entries = Vec::new();
        for attr in 0..ATTRS {
            for desc in [false, true] {
                entries.push(ActionEntry {
                    slot: self.slot_execute(attr, desc),
                    kind: ActionKind::Execute,
                    args: vec![
                        self.attr_tok[attr],
                        if desc { self.dir_desc } else { self.dir_asc },
                    ],
                    thought: vec![self.t_exec],
                });
            }
        }
        entries.push(ActionEntry {
            slot: self.slot_submit(),
            kind: ActionKind::Submit,
            args: Vec::new(),
            thought: vec![self.t_submit],
        });
        entries
    }

    pub fn apply(
        &self,
        task: &TaskInstance,
        sim: &mut SetSim,
        slot: usize,
    ) -> (Vec<TokenId>, bool) {
        let t = Self::task(task);
        if slot == self.slot_submit() {
            sim.submitted = true;
            (Vec::new(), true)
        } else {
            let result = t.results[slot].clone();
            let obs = if result.is_empty() {
                vec![self.empty]
            } else {
                result.iter().map(|&r| self.row_tok[r]).collect()
            };
            sim.last_result = Some(result);
            (obs, false)
        }
    }

    pub fn reward(&self, task: &TaskInstance, sim: &SetSim) -> f64 {
        let t = Self::task(task);
        let last = sim.last_result.clone().unwrap_or_default();
        iou_kendall_reward(&last, self.gold_result(t))
    }

    pub fn eval_pass(&self, task: &TaskInstance, sim: &SetSim) -> bool {
        let t = Self::task(task);
        sim.last_result.as_deref() == Some(self.gold_result(t))
    }

    pub fn expert_slot(&self, task: &TaskInstance, sim: &SetSim) -> usize {
        let t = Self::task(task);
        if sim.last_result.as_deref() == Some(self.gold_result(t)) {
            self.slot_submit()
        } else {
            self.slot_execute(t.gold_attr, t.gold_desc)
        }
    }

    /// Hint names the gold query.
    pub fn reflection_index(&self, task: &TaskInstance, _sim: &SetSim) -> usize {
        let t = Self::task(task);
        self.slot_execute(t.gold_attr, t.gold_desc)
    }
}
