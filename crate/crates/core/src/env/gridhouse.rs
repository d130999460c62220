//! Household pick-and-use tasks: go to locations, take an object, and use an
//! appliance while holding it. Rewards are binary success; attempting to take
//! or use something that is not at the current location observes a
//! "nothing happens" token and the trial continues.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActionEntry, EnvConfig, Hidden, TaskInstance};
use crate::error::Result;
use crate::types::{ActionKind, TokenId, Vocab};

const OBJECTS: usize = 6;
const APPLIANCES: usize = 3;

#[derive(Debug, Clone)]
pub(crate) struct GridTask {
    target_obj: usize,
    target_app: usize,
    obj_loc: Vec<usize>,
    app_loc: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct GridSim {
    location: usize,
    holding: BTreeSet<usize>,
    taken: BTreeSet<usize>,
    used: Option<usize>,
}

#[derive(Debug)]
pub(crate) struct GridEnv {
    pub vocab: Vocab,
    pub alphabet: Vec<TokenId>,
    locations: usize,
    task_take: TokenId,
    task_use: TokenId,
    loc_tok: Vec<TokenId>,
    obj_tok: Vec<TokenId>,
    app_tok: Vec<TokenId>,
    t_goto: TokenId,
    t_take: TokenId,
    t_use: TokenId,
    nothing: TokenId,
    ok: TokenId,
}

impl GridEnv {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        let p = config.size;
        let mut tokens = vec!["task-take".to_string(), "task-use".to_string()];
        tokens.extend((0..p).map(|l| format!("loc-{l}")));
        tokens.extend((0..OBJECTS).map(|o| format!("obj-{o}")));
        tokens.extend((0..APPLIANCES).map(|a| format!("app-{a}")));
        tokens.extend((0..OBJECTS).map(|o| format!("hint-take-{o}")));
        tokens.extend((0..APPLIANCES).map(|a| format!("hint-use-{a}")));
        tokens.extend(["t-goto", "t-take", "t-use", "nothing", "ok"].map(String::from));
        let vocab = Vocab::new(tokens)?;
        let ids = |prefix: &str, count: usize| -> Result<Vec<TokenId>> {
            (0..count)
                .map(|i| vocab.require(&format!("{prefix}{i}")))
                .collect()
        };
        let mut alphabet = ids("hint-take-", OBJECTS)?;
        alphabet.extend(ids("hint-use-", APPLIANCES)?);
        Ok(GridEnv {
            task_take: vocab.require("task-take")?,
            task_use: vocab.require("task-use")?,
            loc_tok: ids("loc-", p)?,
            obj_tok: ids("obj-", OBJECTS)?,
            app_tok: ids("app-", APPLIANCES)?,
            t_goto: vocab.require("t-goto")?,
            t_take: vocab.require("t-take")?,
            t_use: vocab.require("t-use")?,
            nothing: vocab.require("nothing")?,
            ok: vocab.require("ok")?,
            alphabet,
            vocab,
            locations: p,
        })
    }

    // Catalog layout: goto(l), then take(o), then use(a).
    fn slot_goto(&self, l: usize) -> usize {
        l
    }

    fn slot_take(&self, o: usize) -> usize {
        self.locations + o
    }

    fn slot_use(&self, a: usize) -> usize {
        self.locations + OBJECTS + a
    }

    pub fn catalog_len(&self) -> usize {
        self.locations + OBJECTS + APPLIANCES
    }

    pub fn generate_task(&self, task_id: String, rng: &mut ChaCha8Rng) -> TaskInstance {
        let obj_loc: Vec<usize> = (0..OBJECTS)
            .map(|_| rng.gen_range(0..self.locations))
            .collect();
        let app_loc: Vec<usize> = (0..APPLIANCES)
            .map(|_| rng.gen_range(0..self.locations))
            .collect();
        let target_obj = rng.gen_range(0..OBJECTS);
        let target_app = rng.gen_range(0..APPLIANCES);

        let mut task_tokens = vec![
            self.task_take,
            self.obj_tok[target_obj],
            self.task_use,
            self.app_tok[target_app],
        ];
        for l in 0..self.locations {
            task_tokens.push(self.loc_tok[l]);
            for (o, &loc) in obj_loc.iter().enumerate() {
                if loc == l {
                    task_tokens.push(self.obj_tok[o]);
                }
            }
            for (a, &loc) in app_loc.iter().enumerate() {
                if loc == l {
                    task_tokens.push(self.app_tok[a]);
                }
            }
        }
        TaskInstance {
            task_id,
            task_tokens,
            hidden: Hidden::Grid(GridTask {
                target_obj,
                target_app,
                obj_loc,
                app_loc,
            }),
        }
    }

    fn task(task: &TaskInstance) -> &GridTask {
        match &task.hidden {
            Hidden::Grid(t) => t,
            _ => panic!("task does not belong to gridhouse"),
        }
    }

    pub fn initial_sim(&self, _task: &TaskInstance) -> Result<GridSim> {
        Ok(GridSim {
            location: 0,
            holding: BTreeSet::new(),
            taken: BTreeSet::new(),
            used: None,
        })
    }

    /// Every goto/take/use is well-formed and attemptable; absent targets
    /// observe "nothing happens" at execution time.
    pub fn legal_entries(&self, _task: &TaskInstance, _sim: &GridSim) -> Vec<ActionEntry> {
        let mut entries = Vec::new();
        for l in 0..self.locations {
            entries.push(ActionEntry {
                slot: self.slot_goto(l),
                kind: ActionKind::Goto,
                args: vec![self.loc_tok[l]],
                thought: vec![self.t_goto],
            });
        }
        for o in 0..OBJECTS {
            entries.push(ActionEntry {
                slot: self.slot_take(o),
                kind: ActionKind::Take,
                args: vec![self.obj_tok[o]],
                thought: vec![self.t_take],
            });
        }
        for a in 0..APPLIANCES {
            entries.push(ActionEntry {
                slot: self.slot_use(a),
                kind: ActionKind::Use,
                args: vec![self.app_tok[a]],
                thought: vec![self.t_use],
            });
        }
        entries
    }

    pub fn apply(
        &self,
        task: &TaskInstance,
        sim: &mut GridSim,
        slot: usize,
    ) -> (Vec<TokenId>, bool) {
        let t = Self::task(task);
        if slot < self.locations {
            sim.location = slot;
            let mut obs = vec![self.loc_tok[slot]];
            for (o, &loc) in t.obj_loc.iter().enumerate() {
                if loc == slot && !sim.taken.contains(&o) {
                    obs.push(self.obj_tok[o]);
                }
            }
            for (a, &loc) in t.app_loc.iter().enumerate() {
                if loc == slot {
                    obs.push(self.app_tok[a]);
                }
            }
            (obs, false)
        } else if slot < self.locations + OBJECTS {
            let o = slot - self.locations;
            if t.obj_loc[o] == sim.location && !sim.taken.contains(&o) {
                sim.taken.insert(o);
                sim.holding.insert(o);
                (vec![self.ok, self.obj_tok[o]], false)
            } else {
                (vec![self.nothing], false)
            }
        } else {
            let a = slot - self.locations - OBJECTS;
            if t.app_loc[a] == sim.location {
                sim.used = Some(a);
                (vec![self.ok], true)
            } else {
                (vec![self.nothing], false)
            }
        }
    }

    pub fn reward(&self, task: &TaskInstance, sim: &GridSim) -> f64 {
        let t = Self::task(task);
        let success = sim.used == Some(t.target_app) && sim.holding.contains(&t.target_obj);
        f64::from(u8::from(success))
    }

    pub fn eval_pass(&self, task: &TaskInstance, sim: &GridSim) -> bool {
        self.reward(task, sim) == 1.0
    }

    pub fn expert_slot(&self, task: &TaskInstance, sim: &GridSim) -> usize {
        let t = Self::task(task);
        if !sim.holding.contains(&t.target_obj) {
            if sim.location == t.obj_loc[t.target_obj] {
                self.slot_take(t.target_obj)
            } else {
                self.slot_goto(t.obj_loc[t.target_obj])
            }
        } else if sim.location == t.app_loc[t.target_app] {
            self.slot_use(t.target_app)
        } else {
            self.slot_goto(t.app_loc[t.target_app])
        }
    }

    /// Hint the missing precondition: take the object first, else use the
    /// right appliance.
    pub fn reflection_index(&self, task: &TaskInstance, sim: &GridSim) -> usize {
        let t = Self::task(task);
        if !sim.holding.contains(&t.target_obj) {
            t.target_obj
        } else {
            OBJECTS + t.target_app
        }
    }
}
