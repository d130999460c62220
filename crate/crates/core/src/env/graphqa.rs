//! Two-hop lookup questions over a generated relation graph.
//!
//! A task hides a chain `start --rel1--> bridge --rel2--> {answers}` inside a
//! graph with distractor edges. The agent has a budget of two lookups over
//! edges of mentioned entities; every lookup result becomes a candidate
//! answer set, and a finish action submits one of the candidates (or the
//! empty set). The reward is token F1 against the gold answers and the
//! evaluator is exact match.
//!
//! Catalog slots are keyed by (hint focus, hop index, relation) for lookups
//! and by relation for finishes; all edges sharing that key share a slot, so
//! a table can repeat slots and ties resolve to the earliest entry (hinted
//! entities are enumerated first).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActionEntry, EnvConfig, Hidden, TaskInstance};
use crate::error::Result;
use crate::metrics::{exact_match, f1, AnswerTokens};
use crate::types::{ActionKind, TokenId, Vocab};

const RELATIONS: usize = 3;
const MAX_ANSWERS: usize = 3;
/// Lookups allowed per trial; questions are two-hop.
const LOOKUP_BUDGET: usize = 2;
/// Fraction of tasks whose first-hop relation is hidden from the task text.
const AMBIGUOUS_NUM: u32 = 2;
const AMBIGUOUS_DEN: u32 = 5;

#[derive(Debug, Clone)]
pub(crate) struct GraphTask {
    start: usize,
    bridge: usize,
    rel1: usize,
    rel2: usize,
    gold: Vec<usize>,
    edges: BTreeMap<(usize, usize), Vec<usize>>,
}

#[derive(Debug, Clone)]
pub(crate) struct GraphSim {
    mentioned: BTreeSet<usize>,
    /// Hinted entities in hint order; enumerated first in action tables.
    hinted: Vec<usize>,
    /// Entities named by the most recent observation; enumerated before
    /// older mentions so greedy ties follow the chain forward.
    frontier: Vec<usize>,
    /// Most recent lookup result per relation; each is a candidate answer.
    results: BTreeMap<usize, Vec<usize>>,
    lookups_done: usize,
    submitted: Option<Vec<usize>>,
}

#[derive(Debug)]
pub(crate) struct GraphEnv {
    pub vocab: Vocab,
    pub alphabet: Vec<TokenId>,
    entities: usize,
    question: TokenId,
    rel_hidden: TokenId,
    rel_first: Vec<TokenId>,
    rel_second: Vec<TokenId>,
    start_tok: Vec<TokenId>,
    ent_tok: Vec<TokenId>,
    used_ent: Vec<TokenId>,
    used_rel: Vec<TokenId>,
    t_lookup: TokenId,
    t_finish: TokenId,
}

impl GraphEnv {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        let n = config.size;
        let mut tokens = vec!["q".to_string()];
        tokens.extend((0..RELATIONS).map(|r| format!("rel-first-{r}")));
        tokens.extend((0..RELATIONS).map(|r| format!("rel-second-{r}")));
        tokens.extend((0..n).map(|e| format!("start-{e}")));
        tokens.extend((0..n).map(|e| format!("ent-{e}")));
        tokens.extend((0..n).map(|e| format!("used-{e}")));
        tokens.extend((0..n).map(|e| format!("hint-{e}")));
        tokens.extend((0..RELATIONS).map(|r| format!("used-rel-{r}")));
        tokens.push("rel-hidden".into());
        tokens.push("t-lookup".into());
        tokens.push("t-finish".into());
        let vocab = Vocab::new(tokens)?;
        let ids = |prefix: &str, count: usize| -> Result<Vec<TokenId>> {
            (0..count)
                .map(|i| vocab.require(&format!("{prefix}{i}")))
                .collect()
        };
        Ok(GraphEnv {
            question: vocab.require("q")?,
            rel_hidden: vocab.require("rel-hidden")?,
            rel_first: ids("rel-first-", RELATIONS)?,
            rel_second: ids("rel-second-", RELATIONS)?,
            start_tok: ids("start-", n)?,
            ent_tok: ids("ent-", n)?,
            used_ent: ids("used-", n)?,
            alphabet: ids("hint-", n)?,
            used_rel: ids("used-rel-", RELATIONS)?,
            t_lookup: vocab.require("t-lookup")?,
            t_finish: vocab.require("t-finish")?,
            vocab,
            entities: n,
        })
    }

    // Catalog layout: lookup slots keyed by (focused, hop, relation), then
    // one finish slot per relation (submitting that relation's latest
    // result), then the empty-submission finish.
    fn slot_lookup(&self, focused: bool, hop: usize, r: usize) -> usize {
        (focused as usize) * 2 * RELATIONS + hop * RELATIONS + r
    }

    fn slot_finish_rel(&self, r: usize) -> usize {
        4 * RELATIONS + r
    }

    fn slot_finish_empty(&self) -> usize {
        5 * RELATIONS
    }

    pub fn catalog_len(&self) -> usize {
        5 * RELATIONS + 1
    }

    pub fn generate_task(&self, task_id: String, rng: &mut ChaCha8Rng) -> TaskInstance {
        let n = self.entities;
        let start = rng.gen_range(0..n);
        let bridge = {
            let mut b = rng.gen_range(0..n - 1);
            if b >= start {
                b += 1;
            }
            b
        };
        let rel1 = rng.gen_range(0..RELATIONS);
        let rel2 = {
            let mut r = rng.gen_range(0..RELATIONS - 1);
            if r >= rel1 {
                r += 1;
            }
            r
        };
        let mut candidates: Vec<usize> = (0..n).filter(|&e| e != start && e != bridge).collect();
        candidates.shuffle(rng);
        let answers = rng.gen_range(1..=MAX_ANSWERS.min(candidates.len()));
        let mut gold: Vec<usize> = candidates[..answers].to_vec();
        gold.sort_unstable();

        let mut edges = BTreeMap::new();
        edges.insert((start, rel1), vec![bridge]);
        edges.insert((bridge, rel2), gold.clone());

        // Ambiguous tasks hide rel1 and plant a plausible decoy chain: a
        // second first-hop edge whose endpoint also answers rel2, wrongly.
        // The two chains cross — the decoy's second hop lands back on the
        // true bridge — so a failed trajectory's final observation names the
        // entity a corrective reflection should hint at.
        let ambiguous = rng.gen_ratio(AMBIGUOUS_NUM, AMBIGUOUS_DEN);
        if ambiguous {
            let decoy_rel = {
                let mut r = rng.gen_range(0..RELATIONS - 1);
                if r >= rel1 {
                    r += 1;
                }
                r
            };
            // first non-gold candidate; candidates has at least answers + 1
            let decoy = candidates[answers];
            edges.insert((start, decoy_rel), vec![decoy]);
            edges.entry((decoy, rel2)).or_insert(vec![bridge]);
        }
        for _ in 0..n / 2 {
            let e = rng.gen_range(0..n);
            let r = rng.gen_range(0..RELATIONS);
            if edges.contains_key(&(e, r)) {
                continue;
            }
            let mut targets = BTreeSet::new();
            for _ in 0..rng.gen_range(1..=2usize) {
                let t = rng.gen_range(0..n);
                if t != e {
                    targets.insert(t);
                }
            }
            if !targets.is_empty() {
                edges.insert((e, r), targets.into_iter().collect());
            }
        }

        let first_tok = if ambiguous {
            self.rel_hidden
        } else {
            self.rel_first[rel1]
        };
        let task_tokens = vec![
            self.question,
            first_tok,
            self.rel_second[rel2],
            self.start_tok[start],
        ];
        TaskInstance {
            task_id,
            task_tokens,
            hidden: Hidden::Graph(GraphTask {
                start,
                bridge,
                rel1,
                rel2,
                gold,
                edges,
            }),
        }
    }

    fn task(task: &TaskInstance) -> &GraphTask {
        match &task.hidden {
            Hidden::Graph(t) => t,
            _ => panic!("task does not belong to graphqa"),
        }
    }

    /// Hint tokens mention their entity from the first step and put it at the
    /// front of the action table, so hinted lookups win greedy ties.
    pub fn initial_sim(
        &self,
        task: &TaskInstance,
        reflection_tokens: &[TokenId],
    ) -> Result<GraphSim> {
        let t = Self::task(task);
        let mut hinted = Vec::new();
        for tok in reflection_tokens {
            if let Some(e) = self.alphabet.iter().position(|h| h == tok) {
                if !hinted.contains(&e) {
                    hinted.push(e);
                }
            }
        }
        let mut mentioned = BTreeSet::from([t.start]);
        mentioned.extend(hinted.iter().copied());
        Ok(GraphSim {
            mentioned,
            hinted,
            frontier: Vec::new(),
            results: BTreeMap::new(),
            lookups_done: 0,
            submitted: None,
        })
    }

    pub fn legal_entries(&self, task: &TaskInstance, sim: &GraphSim) -> Vec<ActionEntry> {
        let t = Self::task(task);
        let focused = !sim.hinted.is_empty();
        let hop = sim.lookups_done.min(1);
        let mut entries = Vec::new();
        if sim.lookups_done < LOOKUP_BUDGET {
            let mut order = sim.hinted.clone();
            for &e in sim.frontier.iter().chain(sim.mentioned.iter()) {
                if !order.contains(&e) {
                    order.push(e);
                }
            }
            for e in order {
                for r in 0..RELATIONS {
                    if t.edges.contains_key(&(e, r)) {
                        entries.push(ActionEntry {
                            slot: self.slot_lookup(focused, hop, r),
                            kind: ActionKind::Lookup,
                            args: vec![self.used_ent[e], self.used_rel[r]],
                            thought: vec![self.t_lookup],
                        });
                    }
                }
            }
        }
        // Finishing opens once a second-relation candidate exists, the lookup
        // budget is spent, or no lookup is available.
        let finish_open = sim.lookups_done >= LOOKUP_BUDGET
            || sim.results.contains_key(&t.rel2)
            || entries.is_empty();
        if finish_open {
            for (&r, candidate) in &sim.results {
                entries.push(ActionEntry {
                    slot: self.slot_finish_rel(r),
                    kind: ActionKind::Finish,
                    args: candidate.iter().map(|&x| self.ent_tok[x]).collect(),
                    thought: vec![self.t_finish],
                });
            }
            entries.push(ActionEntry {
                slot: self.slot_finish_empty(),
                kind: ActionKind::Finish,
                args: Vec::new(),
                thought: vec![self.t_finish],
            });
        }
        entries
    }

    pub fn apply(
        &self,
        task: &TaskInstance,
        sim: &mut GraphSim,
        entry: &ActionEntry,
    ) -> (Vec<TokenId>, bool) {
        let t = Self::task(task);
        match entry.kind {
            ActionKind::Finish => {
                let submitted = if entry.slot == self.slot_finish_empty() {
                    Vec::new()
                } else {
                    let r = entry.slot - 4 * RELATIONS;
                    sim.results.get(&r).cloned().unwrap_or_default()
                };
                sim.submitted = Some(submitted);
                (Vec::new(), true)
            }
            _ => {
                let e = self
                    .used_ent
                    .iter()
                    .position(|&tok| tok == entry.args[0])
                    .expect("lookup entry carries a used-entity token");
                let r = self
                    .used_rel
                    .iter()
                    .position(|&tok| tok == entry.args[1])
                    .expect("lookup entry carries a used-relation token");
                let targets = &t.edges[&(e, r)];
                sim.results.insert(r, targets.clone());
                sim.mentioned.extend(targets.iter().copied());
                sim.frontier = targets.clone();
                sim.lookups_done += 1;
                let obs: Vec<TokenId> = targets.iter().map(|&x| self.ent_tok[x]).collect();
                (obs, false)
            }
        }
    }

    fn answer_tokens(&self, ids: &[usize]) -> AnswerTokens {
        AnswerTokens::from_tokens(ids.iter().map(|e| e.to_string()))
    }

    /// Finishing submits a chosen candidate answer set; trajectories that
    /// never finish score an empty submission.
    pub fn reward(&self, task: &TaskInstance, sim: &GraphSim) -> f64 {
        let t = Self::task(task);
        let answer = sim.submitted.clone().unwrap_or_default();
        f1(&self.answer_tokens(&answer), &self.answer_tokens(&t.gold))
    }

    pub fn eval_pass(&self, task: &TaskInstance, sim: &GraphSim) -> bool {
        let t = Self::task(task);
        let answer = sim.submitted.clone().unwrap_or_default();
        exact_match(&self.answer_tokens(&answer), &self.answer_tokens(&t.gold)) == 1
    }

    /// Oracle policy as a position in the given table: submit the gold
    /// candidate once it exists; otherwise take the next hop of the chain.
    pub fn expert_position(
        &self,
        task: &TaskInstance,
        sim: &GraphSim,
        entries: &[ActionEntry],
    ) -> usize {
        let t = Self::task(task);
        let find_lookup = |e: usize, r: usize| {
            entries.iter().position(|en| {
                en.kind == ActionKind::Lookup && en.args == [self.used_ent[e], self.used_rel[r]]
            })
        };
        let find_slot = |slot: usize| entries.iter().position(|en| en.slot == slot);
        if sim.results.get(&t.rel2) == Some(&t.gold) {
            if let Some(p) = find_slot(self.slot_finish_rel(t.rel2)) {
                return p;
            }
        }
        if sim.mentioned.contains(&t.bridge) {
            if let Some(p) = find_lookup(t.bridge, t.rel2) {
                return p;
            }
        }
        if let Some(p) = find_lookup(t.start, t.rel1) {
            return p;
        }
        if let Some(p) = find_slot(self.slot_finish_rel(t.rel2)) {
            return p;
        }
        find_slot(self.slot_finish_empty()).unwrap_or(0)
    }

    /// Hint names the bridge entity of the missing second hop.
    pub fn reflection_index(&self, task: &TaskInstance, _sim: &GraphSim) -> usize {
        Self::task(task).bridge
    }
}
