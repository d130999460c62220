//! Experiment runner: flat key=value config files, the five phase
//! subcommands, and plot-ready CSV reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use reflectrl_core::env::{EnvConfig, EnvKind, Environment, TaskInstance};
use reflectrl_core::expert::{
    build_il_datasets, collect_expert_trials, dataset_stats, read_datasets, write_datasets,
};
use reflectrl_core::metrics::aggregate_metrics;
use reflectrl_core::policy::{load_checkpoint, save_checkpoint, PolicyRole};
use reflectrl_core::rng::{derive_rng, derive_seed};
use reflectrl_core::training::{evaluate, train_il, train_rl, History, PolicySet, TrainingConfig};
use reflectrl_core::types::write_trajectory_log;
use reflectrl_core::{Error, Result};

/// A full experiment: environment, training knobs, task budgets, output dir.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub training: TrainingConfig,
    pub train_tasks: usize,
    pub eval_tasks: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(kind: EnvKind) -> Self {
        ExperimentConfig {
            env: EnvConfig::new(kind),
            training: TrainingConfig::default(),
            train_tasks: 200,
            eval_tasks: 100,
            output_dir: PathBuf::from("runs/default"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.training.validate()?;
        if self.train_tasks < 1 || self.eval_tasks < 1 {
            return Err(Error::Config("task counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, parseable by [`parse_config_text`].
    pub fn resolved(&self) -> String {
        let t = &self.training;
        let mut s = String::new();
        let _ = writeln!(s, "env_kind = {}", self.env.kind.as_str());
        let _ = writeln!(s, "env_size = {}", self.env.size);
        let _ = writeln!(s, "step_limit = {}", self.env.step_limit);
        let _ = writeln!(s, "expert_error_rate = {}", self.env.expert_error_rate);
        let _ = writeln!(s, "train_tasks = {}", self.train_tasks);
        let _ = writeln!(s, "eval_tasks = {}", self.eval_tasks);
        let _ = writeln!(s, "k_trials = {}", t.k_trials);
        let _ = writeln!(s, "lambda_planner = {}", t.lambda_planner);
        let _ = writeln!(s, "lambda_reflector = {}", t.lambda_reflector);
        let _ = writeln!(s, "alpha = {}", t.alpha);
        let _ = writeln!(s, "epsilon = {}", t.epsilon);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "il_epochs = {}", t.il_epochs);
        let _ = writeln!(s, "rl_iterations = {}", t.rl_iterations);
        let _ = writeln!(s, "rl_epochs_per_iteration = {}", t.rl_epochs_per_iteration);
        let _ = writeln!(s, "buffer_capacity = {}", t.buffer_capacity);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "explore_temperature = {}", t.explore_temperature);
        let _ = writeln!(s, "eval_temperature = {}", t.eval_temperature);
        let _ = writeln!(s, "shared_params = {}", t.shared_params);
        let _ = writeln!(s, "freeze_planner = {}", t.freeze_planner);
        let _ = writeln!(s, "freeze_reflector = {}", t.freeze_reflector);
        let _ = writeln!(s, "disable_reflection = {}", t.disable_reflection);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }

    /// The run name shown in metrics CSVs: the output dir's final component.
    pub fn run_name(&self) -> String {
        self.output_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string())
    }
}

fn parse_key<T: std::str::FromStr>(line_no: usize, key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        Error::Parse(format!(
            "line {line_no}: bad value {value:?} for key {key:?}"
        ))
    })
}

fn parse_bool(line_no: usize, key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Parse(format!(
            "line {line_no}: bad bool {other:?} for key {key:?}"
        ))),
    }
}

/// Parses flat `key = value` config text. `#` starts a comment; unknown keys
/// are errors; missing keys take defaults.
pub fn parse_config_text(text: &str) -> Result<ExperimentConfig> {
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!(
                "line {line_no}: expected `key = value`, got {line:?}"
            ))
        })?;
        pairs.push((line_no, k.trim().to_string(), v.trim().to_string()));
    }
    // env_kind decides the env defaults, so resolve it before the rest.
    let mut kind = EnvKind::GraphQa;
    for (line_no, k, v) in &pairs {
        if k == "env_kind" {
            kind = EnvKind::parse(v)
                .map_err(|_| Error::Parse(format!("line {line_no}: unknown env kind {v:?}")))?;
        }
    }
    let mut cfg = ExperimentConfig::defaults(kind);
    let mut size_set = false;
    let mut limit_set = false;
    for (line_no, k, v) in &pairs {
        let n = *line_no;
        match k.as_str() {
            "env_kind" => {}
            "env_size" => {
                cfg.env.size = parse_key(n, k, v)?;
                size_set = true;
            }
            "step_limit" => {
                cfg.env.step_limit = parse_key(n, k, v)?;
                limit_set = true;
            }
            "expert_error_rate" => cfg.env.expert_error_rate = parse_key(n, k, v)?,
            "train_tasks" => cfg.train_tasks = parse_key(n, k, v)?,
            "eval_tasks" => cfg.eval_tasks = parse_key(n, k, v)?,
            "k_trials" => cfg.training.k_trials = parse_key(n, k, v)?,
            "lambda_planner" => cfg.training.lambda_planner = parse_key(n, k, v)?,
            "lambda_reflector" => cfg.training.lambda_reflector = parse_key(n, k, v)?,
            "alpha" => cfg.training.alpha = parse_key(n, k, v)?,
            "epsilon" => cfg.training.epsilon = parse_key(n, k, v)?,
            "learning_rate" => cfg.training.learning_rate = parse_key(n, k, v)?,
            "il_epochs" => cfg.training.il_epochs = parse_key(n, k, v)?,
            "rl_iterations" => cfg.training.rl_iterations = parse_key(n, k, v)?,
            "rl_epochs_per_iteration" => {
                cfg.training.rl_epochs_per_iteration = parse_key(n, k, v)?;
            }
            "buffer_capacity" => cfg.training.buffer_capacity = parse_key(n, k, v)?,
            "batch_size" => cfg.training.batch_size = parse_key(n, k, v)?,
            "explore_temperature" => cfg.training.explore_temperature = parse_key(n, k, v)?,
            "eval_temperature" => cfg.training.eval_temperature = parse_key(n, k, v)?,
            "shared_params" => cfg.training.shared_params = parse_bool(n, k, v)?,
            "freeze_planner" => cfg.training.freeze_planner = parse_bool(n, k, v)?,
            "freeze_reflector" => cfg.training.freeze_reflector = parse_bool(n, k, v)?,
            "disable_reflection" => cfg.training.disable_reflection = parse_bool(n, k, v)?,
            "seed" => {
                let seed: u64 = parse_key(n, k, v)?;
                cfg.training.seed = seed;
                cfg.env.seed = seed;
            }
            "output_dir" => cfg.output_dir = PathBuf::from(v),
            other => {
                return Err(Error::Parse(format!("line {n}: unknown key {other:?}")));
            }
        }
    }
    if !size_set {
        cfg.env.size = kind.default_size();
    }
    if !limit_set {
        cfg.env.step_limit = kind.default_step_limit();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_text(&text)
}

/// One seed drives task generation and training; the eval set is the tail of
/// one generation stream, disjoint from the train set by construction.
pub fn generate_task_sets(
    env: &Environment,
    cfg: &ExperimentConfig,
) -> Result<(Vec<TaskInstance>, Vec<TaskInstance>)> {
    let mut rng = derive_rng(cfg.training.seed, &["tasks"]);
    let mut all = env.generate_tasks(cfg.train_tasks + cfg.eval_tasks, &mut rng)?;
    let eval = all.split_off(cfg.train_tasks);
    Ok((all, eval))
}

/// Writes config.resolved plus a manifest sufficient to reproduce the run.
pub fn write_run_header(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    let resolved = cfg.resolved();
    fs::write(cfg.output_dir.join("config.resolved"), &resolved)?;
    let manifest = format!(
        "seed={}\nenv {}\nconfig_hash={:016x}\n",
        cfg.training.seed,
        cfg.env.manifest(),
        derive_seed(0, &[&resolved]),
    );
    fs::write(cfg.output_dir.join("manifest.txt"), manifest)?;
    Ok(())
}

fn checkpoint_paths(dir: &Path, phase: &str, shared: bool) -> Vec<(PolicyRole, PathBuf)> {
    if shared {
        vec![(PolicyRole::Shared, dir.join(format!("shared_{phase}.ckpt")))]
    } else {
        vec![
            (
                PolicyRole::Planner,
                dir.join(format!("planner_{phase}.ckpt")),
            ),
            (
                PolicyRole::Reflector,
                dir.join(format!("reflector_{phase}.ckpt")),
            ),
        ]
    }
}

pub fn save_policies(dir: &Path, phase: &str, policies: &PolicySet) -> Result<()> {
    match policies {
        PolicySet::Shared(p) => {
            save_checkpoint(&dir.join(format!("shared_{phase}.ckpt")), p)?;
        }
        PolicySet::Separate { planner, reflector } => {
            save_checkpoint(&dir.join(format!("planner_{phase}.ckpt")), planner)?;
            save_checkpoint(&dir.join(format!("reflector_{phase}.ckpt")), reflector)?;
        }
    }
    Ok(())
}

pub fn load_policies(dir: &Path, phase: &str, shared: bool) -> Result<PolicySet> {
    let paths = checkpoint_paths(dir, phase, shared);
    if shared {
        Ok(PolicySet::Shared(load_checkpoint(&paths[0].1)?))
    } else {
        Ok(PolicySet::Separate {
            planner: load_checkpoint(&paths[0].1)?,
            reflector: load_checkpoint(&paths[1].1)?,
        })
    }
}

fn phase_available(dir: &Path, phase: &str, shared: bool) -> bool {
    checkpoint_paths(dir, phase, shared)
        .iter()
        .all(|(_, p)| p.exists())
}

fn datasets_path(dir: &Path) -> PathBuf {
    dir.join("datasets.txt")
}

fn history_csv(rows: Vec<reflectrl_core::training::HistoryRow>) -> String {
    History {
        rows,
        warnings: Vec::new(),
    }
    .to_csv()
}

/// collect: roll the scripted experts over the train tasks and persist the
/// filtered IL datasets with a count summary.
pub fn cmd_collect(cfg: &ExperimentConfig) -> Result<()> {
    write_run_header(cfg)?;
    let env = Environment::new(&cfg.env)?;
    let (train, _) = generate_task_sets(&env, cfg)?;
    let collect_seed = derive_seed(cfg.training.seed, &["collect"]);
    let sequences = collect_expert_trials(
        &env,
        &train,
        cfg.training.k_trials,
        cfg.env.expert_error_rate,
        collect_seed,
    )?;
    let (planner, reflector) =
        build_il_datasets(&env, &train, &sequences, cfg.training.shared_params)?;
    write_datasets(
        &datasets_path(&cfg.output_dir),
        &env,
        collect_seed,
        cfg.training.k_trials,
        &planner,
        &reflector,
    )?;
    let stats = dataset_stats(&env, &sequences, &planner, &reflector);
    fs::write(
        cfg.output_dir.join("stats.txt"),
        format!(
            "env={} sequences={} planner_examples={} reflector_examples={}\n",
            stats.env_kind, stats.sequences, stats.planner_examples, stats.reflector_examples
        ),
    )?;
    Ok(())
}

/// train-il: cross-entropy training from the datasets on disk; writes IL
/// checkpoints and the loss history.
pub fn cmd_train_il(cfg: &ExperimentConfig) -> Result<()> {
    write_run_header(cfg)?;
    let env = Environment::new(&cfg.env)?;
    let path = datasets_path(&cfg.output_dir);
    if !path.exists() {
        return Err(Error::Data(format!(
            "no datasets at {}; run collect first",
            path.display()
        )));
    }
    let (planner_data, reflector_data) = read_datasets(&path)?;
    let mut policies = PolicySet::init(&env, &cfg.training);
    let rows = train_il(
        &mut policies,
        &env,
        &planner_data,
        &reflector_data,
        &cfg.training,
    )?;
    save_policies(&cfg.output_dir, "il", &policies)?;
    fs::write(cfg.output_dir.join("history_il.csv"), history_csv(rows))?;
    Ok(())
}

/// train-rl: resumes from the IL checkpoints and runs the off-policy phase.
pub fn cmd_train_rl(cfg: &ExperimentConfig) -> Result<()> {
    write_run_header(cfg)?;
    let env = Environment::new(&cfg.env)?;
    let shared = cfg.training.shared_params;
    if !phase_available(&cfg.output_dir, "il", shared) {
        return Err(Error::Data(format!(
            "no IL checkpoints in {}; run train-il first",
            cfg.output_dir.display()
        )));
    }
    let (planner_data, reflector_data) = read_datasets(&datasets_path(&cfg.output_dir))?;
    let (train, eval_tasks) = generate_task_sets(&env, cfg)?;
    let mut policies = load_policies(&cfg.output_dir, "il", shared)?;
    let rows = train_rl(
        &mut policies,
        &env,
        &train,
        &eval_tasks,
        &planner_data,
        &reflector_data,
        &cfg.training,
    )?;
    save_policies(&cfg.output_dir, "rl", &policies)?;
    fs::write(cfg.output_dir.join("history_rl.csv"), history_csv(rows))?;
    Ok(())
}

/// evaluate: K-trial rollouts at eval temperature over the held-out tasks
/// from the newest checkpoint (rl if present, else il). Writes per-task
/// per-trial rewards, a trajectory log, and the aggregate metrics line.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<()> {
    write_run_header(cfg)?;
    let env = Environment::new(&cfg.env)?;
    let shared = cfg.training.shared_params;
    let phase = if phase_available(&cfg.output_dir, "rl", shared) {
        "rl"
    } else if phase_available(&cfg.output_dir, "il", shared) {
        "il"
    } else {
        return Err(Error::Data(format!(
            "no checkpoints in {}; run train-il first",
            cfg.output_dir.display()
        )));
    };
    let policies = load_policies(&cfg.output_dir, phase, shared)?;
    let (_, eval_tasks) = generate_task_sets(&env, cfg)?;
    let (sequences, rewards, (ir, fr, ar)) = evaluate(
        &policies,
        &env,
        &eval_tasks,
        cfg.training.k_trials,
        cfg.training.eval_temperature,
        cfg.training.disable_reflection,
        derive_seed(cfg.training.seed, &["cli-eval"]),
    )?;

    let mut per_task = String::from("task_id,trial,reward\n");
    for (task, rs) in eval_tasks.iter().zip(&rewards) {
        for (trial, r) in rs.iter().enumerate() {
            let _ = writeln!(per_task, "{},{},{}", task.task_id, trial, r);
        }
    }
    fs::write(cfg.output_dir.join("per_task.csv"), per_task)?;

    let mut log = String::new();
    for seq in &sequences {
        for traj in &seq.trials {
            write_trajectory_log(traj, &mut log);
        }
    }
    fs::write(cfg.output_dir.join("trajectories.log"), log)?;

    // self-consistency: the aggregate line must equal aggregate_metrics over
    // the per-task rewards just written
    let check = aggregate_metrics(&rewards, cfg.training.k_trials)?;
    debug_assert_eq!(check, (ir, fr, ar));
    let metrics = format!(
        "run,task_count,K,IR,FR,AR\n{},{},{},{:.6},{:.6},{:.6}\n",
        cfg.run_name(),
        eval_tasks.len(),
        cfg.training.k_trials,
        ir,
        fr,
        ar
    );
    fs::write(cfg.output_dir.join("metrics.csv"), metrics)?;
    Ok(())
}

/// report: joins multiple runs' aggregate lines into one comparison CSV, plus
/// a lambda-sweep view when the runs' configs differ in lambda.
pub fn cmd_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<()> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run dir".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut report = String::from("run,task_count,K,IR,FR,AR\n");
    let mut sweep: Vec<(f64, String)> = Vec::new();
    for dir in run_dirs {
        let metrics_path = dir.join("metrics.csv");
        let text = fs::read_to_string(&metrics_path)
            .map_err(|_| Error::Data(format!("missing metrics at {}", metrics_path.display())))?;
        let line = text
            .lines()
            .nth(1)
            .ok_or_else(|| Error::Data(format!("empty metrics at {}", metrics_path.display())))?;
        report.push_str(line);
        report.push('\n');
        let resolved = fs::read_to_string(dir.join("config.resolved"))?;
        let cfg = parse_config_text(&resolved)?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() == 6 {
            sweep.push((
                cfg.training.lambda_planner,
                format!(
                    "{},{},{},{}",
                    cfg.training.lambda_planner, fields[3], fields[4], fields[5]
                ),
            ));
        }
    }
    fs::write(out_dir.join("report.csv"), report)?;
    sweep.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut sweep_csv = String::from("lambda,IR,FR,AR\n");
    for (_, row) in &sweep {
        sweep_csv.push_str(row);
        sweep_csv.push('\n');
    }
    fs::write(out_dir.join("lambda_sweep.csv"), sweep_csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = parse_config_text("").unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(EnvKind::GraphQa));
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = parse_config_text(
            "# experiment\nenv_kind = setquery\nepsilon = 0.3 # wide clip\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.env.kind, EnvKind::SetQuery);
        assert_eq!(cfg.env.step_limit, 10);
        assert_eq!(cfg.training.epsilon, 0.3);
        assert_eq!(cfg.training.seed, 9);
        assert_eq!(cfg.env.seed, 9);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = parse_config_text("k_trials = 3\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn constraint_violations_rejected() {
        assert!(parse_config_text("epsilon = 1.5\n").is_err());
        assert!(parse_config_text("epsilon = abc\n").is_err());
        assert!(parse_config_text("freeze_planner = true\nfreeze_reflector = true\n").is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let cfg =
            parse_config_text("env_kind = gridhouse\nlambda_planner = 2\nseed = 4\n").unwrap();
        let again = parse_config_text(&cfg.resolved()).unwrap();
        assert_eq!(cfg, again);
    }
}
