//! Training runs: configuration, the rollout/update loop, logs and checkpoints.

use crate::dataset::{load_dataset, DatasetRecord};
use crate::env::{EnvConfig, SyntheticEnv};
use crate::eval::{evaluate, GreedyPolicy};
use crate::grpo::{grpo_step, normalize_advantages, GroupRollout, ObjectiveStats, TrainConfig};
use crate::labels::{DegradationClass, GroundTruth, TaskKind};
use crate::metrics::MetricReport;
use crate::optim::{lr_schedule, AdamW};
use crate::policy::{encode_context, PolicyDims, PolicyParams, TokenSeq, CHECKPOINT_VERSION};
use crate::reward::{evaluate_group, RewardBreakdown};
use crate::rng::derive_rng;
use crate::vocab::Vocabulary;
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const EVAL_LOG_FILE: &str = "eval_log.jsonl";
pub const ROLLOUT_FILE: &str = "rollouts.jsonl";
pub const DIAGNOSTIC_FILE: &str = "nonfinite_dump.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.json";

/// Relative weights of the three tasks when drawing a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskMix {
    pub score: f64,
    pub degradation: f64,
    pub comparison: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self {
            score: 0.5,
            degradation: 0.5,
            comparison: 0.0,
        }
    }
}

impl TaskMix {
    pub fn only(task: TaskKind) -> Self {
        let mut w = [0.0; 3];
        w[task.index()] = 1.0;
        Self {
            score: w[0],
            degradation: w[1],
            comparison: w[2],
        }
    }

    pub fn weight(&self, task: TaskKind) -> f64 {
        [self.score, self.degradation, self.comparison][task.index()]
    }

    pub fn active(&self) -> Vec<TaskKind> {
        TaskKind::ALL.into_iter().filter(|t| self.weight(*t) > 0.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.score, self.degradation, self.comparison];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(
                "task_mix weights must be >= 0 with a positive sum".into(),
            ));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> TaskKind {
        let active = self.active();
        let total: f64 = active.iter().map(|t| self.weight(*t)).sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for t in &active {
            acc += self.weight(*t);
            if u < acc {
                return *t;
            }
        }
        *active.last().expect("validated mix has an active task")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySettings {
    pub hidden: usize,
    pub embed: usize,
    pub max_len: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_scale: f64,
    /// Nats added to the skeleton-token biases of the canonical layout; 0 disables.
    pub template_prior: f64,
}

impl Default for PolicySettings {
    fn default() -> Self {
        let d = PolicyDims::default();
        Self {
            hidden: d.hidden,
            embed: d.embed,
            max_len: d.max_len,
            init_scale: 0.1,
            template_prior: 0.0,
        }
    }
}

/// Everything a training run needs. Serialized flat: the optimizer and
/// reward fields sit at the top level next to the nested sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub policy: PolicySettings,
    pub env: EnvConfig,
    pub task_mix: TaskMix,
    /// JSONL dataset (file or directory) to draw contexts from instead of the environment.
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Stop early after this many steps; the learning-rate ramp still spans the full run.
    pub max_steps: Option<usize>,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// 0 disables periodic held-out evaluation.
    pub eval_every: usize,
    pub eval_samples: usize,
    pub dump_rollouts: bool,
    pub record_wall_time: bool,
    pub init_checkpoint: Option<PathBuf>,
    pub reference_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            policy: PolicySettings::default(),
            env: EnvConfig::default(),
            task_mix: TaskMix::default(),
            dataset: None,
            out_dir: PathBuf::from("runs/default"),
            max_steps: None,
            checkpoint_every: 500,
            eval_every: 0,
            eval_samples: 200,
            dump_rollouts: false,
            record_wall_time: false,
            init_checkpoint: None,
            reference_checkpoint: None,
        }
    }
}

fn unknown_keys(given: &serde_json::Value, known: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    let (Some(g), Some(k)) = (given.as_object(), known.as_object()) else {
        return;
    };
    for (key, v) in g {
        match k.get(key) {
            None => out.push(format!("{prefix}{key}")),
            Some(kv) => unknown_keys(v, kv, &format!("{prefix}{key}."), out),
        }
    }
}

impl RunConfig {
    /// Parses a JSON config, rejecting keys that no field consumes.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let known = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let mut unknown = Vec::new();
        unknown_keys(&value, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Replaces the seed with `value` when given (the `GQL_SEED` override).
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("seed override {v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.env.validate()?;
        self.task_mix.validate()?;
        let p = &self.policy;
        if !(p.init_scale >= 0.0 && p.init_scale.is_finite()) || !p.template_prior.is_finite() {
            return Err(Error::Config(
                "init_scale must be >= 0 and template_prior finite".into(),
            ));
        }
        self.dims().validate()?;
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        for path in [&self.dataset, &self.init_checkpoint, &self.reference_checkpoint]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(Error::Config(format!("path {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> PolicyDims {
        PolicyDims {
            context: self.env.feature_dim + TaskKind::ALL.len(),
            hidden: self.policy.hidden,
            embed: self.policy.embed,
            max_len: self.policy.max_len,
            vocab: Vocabulary::standard().len(),
        }
    }
}

/// One optimizer step's summary. Rates over subsets the batch did not
/// contain are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub lr: f64,
    pub mean_total_reward: f64,
    pub fmt_rate: f64,
    /// Mean `r_scr` over score-task responses.
    pub scr_hit_rate: Option<f64>,
    /// Mean `r_deg` over degradation-task responses.
    pub deg_acc: Option<f64>,
    /// Mean `r_lev` over degradation responses with a distorted ground truth.
    pub lev_acc: Option<f64>,
    /// Mean `r_comp` over comparison-task responses.
    pub comp_acc: Option<f64>,
    pub mean_kl: f64,
    pub objective: f64,
    /// Responses whose ratio exponent hit the clamp.
    pub ratio_clamps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Debug record of one group, enough to recompute the step's rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutDump {
    pub step: usize,
    pub group: usize,
    pub id: String,
    pub task: TaskKind,
    pub truth: GroundTruth,
    pub responses: Vec<TokenSeq>,
    pub texts: Vec<String>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub record: TrainLogRecord,
    pub rollouts: Vec<RolloutDump>,
}

#[derive(Debug, Clone)]
struct Query {
    id: String,
    task: TaskKind,
    features: Vec<f64>,
    features_b: Option<Vec<f64>>,
    truth: GroundTruth,
}

/// Rollout, reward, advantage and update loop.
pub struct Trainer {
    cfg: RunConfig,
    env: SyntheticEnv,
    vocab: Vocabulary,
    params: PolicyParams,
    reference: PolicyParams,
    opt: AdamW,
    step: usize,
    planned_steps: usize,
    /// Dataset records by task index, when training from files.
    records: Option<[Vec<(DatasetRecord, GroundTruth)>; 3]>,
}

fn load_policy(path: &Path, vocab: &Vocabulary, dims: PolicyDims) -> Result<PolicyParams> {
    let p = PolicyParams::load(path, vocab)?;
    if p.dims() != dims {
        return Err(Error::Config(format!(
            "{} has dims {:?}, config implies {dims:?}",
            path.display(),
            p.dims()
        )));
    }
    Ok(p)
}

/// Fresh policy of the configured shape, including the template prior.
pub fn initial_policy(cfg: &RunConfig, vocab: &Vocabulary) -> Result<PolicyParams> {
    let mut p = PolicyParams::random(
        cfg.dims(),
        cfg.policy.init_scale,
        &mut derive_rng(cfg.train.seed, &[0x1417]),
    );
    if cfg.policy.template_prior != 0.0 {
        p.apply_template_prior(vocab, cfg.policy.template_prior)?;
    }
    Ok(p)
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let env = SyntheticEnv::new(cfg.env.clone())?;
        let vocab = Vocabulary::standard();
        let dims = cfg.dims();
        let params = match &cfg.init_checkpoint {
            Some(p) => load_policy(p, &vocab, dims)?,
            None => initial_policy(&cfg, &vocab)?,
        };
        let reference = match &cfg.reference_checkpoint {
            Some(p) => load_policy(p, &vocab, dims)?,
            None => params.clone(),
        };
        let mut records = None;
        let mut steps_per_epoch = cfg.train.steps_per_epoch;
        if let Some(path) = &cfg.dataset {
            let loaded = load_dataset(path)?;
            let mut by_task: [Vec<(DatasetRecord, GroundTruth)>; 3] = Default::default();
            for (r, t) in loaded.records {
                if r.features.len() == cfg.env.feature_dim
                    && r.features_b.as_ref().is_none_or(|b| b.len() == cfg.env.feature_dim)
                {
                    by_task[r.task.index()].push((r, t));
                }
            }
            let mut eligible = 0;
            for t in cfg.task_mix.active() {
                if by_task[t.index()].is_empty() {
                    return Err(Error::Config(format!("dataset has no usable {t} records")));
                }
                eligible += by_task[t.index()].len();
            }
            steps_per_epoch = eligible.div_ceil(cfg.train.batch_size);
            records = Some(by_task);
        }
        let planned_steps = cfg.train.epochs * steps_per_epoch;
        Ok(Self {
            opt: AdamW::new(params.as_slice().len(), cfg.train.adamw()),
            cfg,
            env,
            vocab,
            params,
            reference,
            step: 0,
            planned_steps,
            records,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn env(&self) -> &SyntheticEnv {
        &self.env
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    /// Index of the next step to run.
    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Length of the learning-rate ramp.
    pub fn planned_steps(&self) -> usize {
        self.planned_steps
    }

    /// Steps this run will execute.
    pub fn steps_to_run(&self) -> usize {
        self.cfg
            .max_steps
            .map_or(self.planned_steps, |m| m.min(self.planned_steps))
    }

    fn query(&self, step: usize, group: usize, rng: &mut impl Rng) -> Query {
        let task = self.cfg.task_mix.draw(rng);
        if let Some(by_task) = &self.records {
            let pool = &by_task[task.index()];
            let (r, t) = &pool[rng.random_range(0..pool.len())];
            return Query {
                id: r.id.clone(),
                task,
                features: r.features.clone(),
                features_b: r.features_b.clone(),
                truth: *t,
            };
        }
        let s = self.env.gen_sample(rng, task, format!("train-{step}-{group}"));
        Query {
            id: s.id,
            task,
            features: s.features,
            features_b: s.features_b,
            truth: s.truth,
        }
    }

    /// Samples one group from the current parameters, which are π_old for this step.
    fn rollout(&self, step: usize, group: usize) -> Result<(GroupRollout, RolloutDump)> {
        let mut rng = derive_rng(self.cfg.train.seed, &[0x7A11, step as u64, group as u64]);
        let q = self.query(step, group, &mut rng);
        let ctx = encode_context(&q.features, q.features_b.as_deref(), q.task, self.env.norm())?;
        let mut responses = Vec::with_capacity(self.cfg.train.group_size);
        let mut old_log_probs = Vec::with_capacity(self.cfg.train.group_size);
        for _ in 0..self.cfg.train.group_size {
            let s = self.params.sample_sequence(&ctx, &mut rng)?;
            old_log_probs.push(s.log_prob);
            responses.push(s.tokens);
        }
        let texts: Vec<String> = responses.iter().map(|r| self.vocab.detokenize(r)).collect();
        let breakdowns = evaluate_group(&texts, &q.truth, &self.cfg.train.reward);
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let advantages = normalize_advantages(&rewards)?;
        let dump = RolloutDump {
            step,
            group,
            id: q.id,
            task: q.task,
            truth: q.truth,
            responses: responses.clone(),
            texts,
            breakdowns,
            advantages: advantages.clone(),
        };
        let group = GroupRollout {
            ctx,
            task: q.task,
            truth: q.truth,
            responses,
            old_log_probs,
            rewards,
            advantages,
        };
        Ok((group, dump))
    }

    /// Samples a batch, grades it, and applies `inner_steps` updates.
    pub fn step(&mut self) -> Result<StepReport> {
        let started = Instant::now();
        let step = self.step;
        let (groups, rollouts): (Vec<GroupRollout>, Vec<RolloutDump>) = (0..self.cfg.train.batch_size)
            .into_par_iter()
            .map(|g| self.rollout(step, g))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let mut first: Option<ObjectiveStats> = None;
        for _ in 0..self.cfg.train.inner_steps {
            let out = grpo_step(
                &mut self.params,
                &mut self.opt,
                &groups,
                &self.reference,
                &self.cfg.train,
                step,
                self.planned_steps,
            )?;
            first.get_or_insert(out.stats);
        }
        let stats = first.expect("inner_steps >= 1");
        self.step += 1;
        let mut record = batch_rates(&rollouts);
        record.step = step;
        record.lr = lr_schedule(step, self.planned_steps, self.cfg.train.lr_start, self.cfg.train.lr_end);
        record.mean_kl = stats.mean_kl;
        record.objective = stats.objective;
        record.ratio_clamps = stats.clamped;
        if self.cfg.record_wall_time {
            record.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        Ok(StepReport { record, rollouts })
    }

    /// Held-out set drawn from streams disjoint from training, one block per active task.
    pub fn holdout(&self, per_task: usize) -> Vec<(DatasetRecord, GroundTruth)> {
        self.cfg
            .task_mix
            .active()
            .into_iter()
            .flat_map(|t| self.env.holdout(t, per_task, self.cfg.train.seed))
            .map(|s| (DatasetRecord::from(&s), s.truth))
            .collect()
    }

    /// Greedy evaluation of the current parameters.
    pub fn evaluate(&self, records: &[(DatasetRecord, GroundTruth)]) -> Result<MetricReport> {
        let responder = GreedyPolicy {
            params: &self.params,
            vocab: &self.vocab,
        };
        Ok(evaluate(&responder, records, self.env.norm(), &self.cfg.train.reward)?.report)
    }
}

fn mean_of(values: impl Iterator<Item = u8>) -> Option<f64> {
    let (mut s, mut n) = (0u64, 0u64);
    for v in values {
        s += u64::from(v);
        n += 1;
    }
    (n > 0).then(|| s as f64 / n as f64)
}

/// Reward rates of one batch; the optimizer fields are left at zero.
pub fn batch_rates(rollouts: &[RolloutDump]) -> TrainLogRecord {
    let all = || rollouts.iter().flat_map(|r| r.breakdowns.iter());
    let of_task = |task: TaskKind| {
        rollouts
            .iter()
            .filter(move |r| r.task == task)
            .flat_map(|r| r.breakdowns.iter())
    };
    let n = all().count().max(1) as f64;
    TrainLogRecord {
        step: 0,
        lr: 0.0,
        mean_total_reward: all().map(|b| b.total).sum::<f64>() / n,
        fmt_rate: mean_of(all().map(|b| b.r_fmt)).unwrap_or(0.0),
        scr_hit_rate: mean_of(of_task(TaskKind::Score).map(|b| b.r_scr)),
        deg_acc: mean_of(of_task(TaskKind::Degradation).map(|b| b.r_deg)),
        lev_acc: mean_of(
            rollouts
                .iter()
                .filter(|r| matches!(r.truth, GroundTruth::Deg(c, _) if c != DegradationClass::Null))
                .flat_map(|r| r.breakdowns.iter().map(|b| b.r_lev)),
        ),
        comp_acc: mean_of(of_task(TaskKind::Comparison).map(|b| b.r_comp)),
        mean_kl: 0.0,
        objective: 0.0,
        ratio_clamps: 0,
        wall_ms: None,
    }
}

#[derive(Debug, Clone, Serialize)]
struct LogHeader<'a> {
    config: &'a RunConfig,
    planned_steps: usize,
    steps: usize,
    param_count: usize,
    dims: PolicyDims,
    checkpoint_version: u32,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub final_checkpoint: PathBuf,
    pub last: Option<TrainLogRecord>,
}

fn jsonl_line<T: Serialize>(w: &mut impl Write, path: &Path, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v).expect("log record serializes");
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn run_in(trainer: &mut Trainer) -> Result<RunSummary> {
    let cfg = trainer.cfg.clone();
    let out = cfg.out_dir.as_path();
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let log_path = out.join(LOG_FILE);
    let mut log = create(&log_path)?;
    let steps = trainer.steps_to_run();
    let header = LogHeader {
        config: &cfg,
        planned_steps: trainer.planned_steps,
        steps,
        param_count: trainer.params.as_slice().len(),
        dims: trainer.params.dims(),
        checkpoint_version: CHECKPOINT_VERSION,
    };
    jsonl_line(&mut log, &log_path, &serde_json::json!({ "header": header }))?;
    let rollout_path = out.join(ROLLOUT_FILE);
    let mut rollout_log = if cfg.dump_rollouts {
        Some(create(&rollout_path)?)
    } else {
        None
    };
    let eval_path = out.join(EVAL_LOG_FILE);
    let (mut eval_log, holdout) = if cfg.eval_every > 0 {
        (Some(create(&eval_path)?), trainer.holdout(cfg.eval_samples))
    } else {
        (None, Vec::new())
    };

    let mut last = None;
    for _ in 0..steps {
        let report = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                log.flush().map_err(|io| Error::io(&log_path, io))?;
                if let Error::NonFinite(msg) = &e {
                    let p = out.join(DIAGNOSTIC_FILE);
                    std::fs::write(&p, msg).map_err(|io| Error::io(&p, io))?;
                }
                return Err(e);
            }
        };
        jsonl_line(&mut log, &log_path, &report.record)?;
        if let Some(w) = rollout_log.as_mut() {
            for r in &report.rollouts {
                jsonl_line(w, &rollout_path, r)?;
            }
        }
        let done = trainer.step;
        if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every) {
            trainer
                .params
                .save(&ckpt_dir.join(format!("step_{done:06}.json")), &trainer.vocab)?;
        }
        if let Some(w) = eval_log.as_mut() {
            if done.is_multiple_of(cfg.eval_every) {
                let m = trainer.evaluate(&holdout)?;
                jsonl_line(w, &eval_path, &serde_json::json!({ "step": done, "report": m }))?;
            }
        }
        last = Some(report.record);
    }
    for (w, p) in [
        (Some(&mut log), &log_path),
        (rollout_log.as_mut(), &rollout_path),
        (eval_log.as_mut(), &eval_path),
    ] {
        if let Some(w) = w {
            w.flush().map_err(|e| Error::io(p, e))?;
        }
    }
    let final_checkpoint = ckpt_dir.join(FINAL_CHECKPOINT);
    trainer.params.save(&final_checkpoint, &trainer.vocab)?;
    Ok(RunSummary {
        steps,
        final_checkpoint,
        last,
    })
}

/// Runs a full training job, writing the log, checkpoints and optional
/// rollout/eval logs under `cfg.out_dir`. `threads` sizes the worker pool
/// (`None` uses all cores); results do not depend on it.
pub fn run_training(cfg: RunConfig, threads: Option<usize>) -> Result<RunSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| {
        let mut trainer = Trainer::new(cfg)?;
        run_in(&mut trainer)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.train.batch_size = 3;
        cfg.train.group_size = 4;
        cfg.train.epochs = 1;
        cfg.train.steps_per_epoch = 4;
        cfg.policy.hidden = 8;
        cfg.policy.embed = 4;
        cfg.checkpoint_every = 2;
        cfg.out_dir = out.to_path_buf();
        cfg
    }

    #[test]
    fn default_config_round_trips_flat() {
        let cfg = RunConfig::default();
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["group_size"], 8);
        assert_eq!(v["alpha2"], 0.75);
        assert_eq!(RunConfig::from_json(&v.to_string()).unwrap(), cfg);
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_json(r#"{"grup_size": 8}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"policy": {"hiden": 8}}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"group_size": 1}"#),
            Err(Error::Config(_))
        ));
        let cfg = RunConfig::from_json(r#"{"group_size": 4, "env": {"feature_noise_scale": 0.0}}"#).unwrap();
        assert_eq!((cfg.train.group_size, cfg.env.feature_noise_scale), (4, 0.0));
    }

    #[test]
    fn seed_override() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed_override(Some("17")).unwrap();
        assert_eq!(cfg.train.seed, 17);
        assert!(cfg.apply_seed_override(Some("x")).is_err());
        cfg.apply_seed_override(None).unwrap();
        assert_eq!(cfg.train.seed, 17);
    }

    #[test]
    fn task_mix_draws_only_active_tasks() {
        let mix = TaskMix::only(TaskKind::Degradation);
        let mut rng = derive_rng(3, &[]);
        assert!((0..100).all(|_| mix.draw(&mut rng) == TaskKind::Degradation));
        assert!(TaskMix {
            score: 0.0,
            degradation: 0.0,
            comparison: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn run_writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_training(small(dir.path()), Some(1)).unwrap();
        assert_eq!(s.steps, 4);
        let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("{\"header\""));
        for (i, l) in lines[1..].iter().enumerate() {
            let r: TrainLogRecord = serde_json::from_str(l).unwrap();
            assert_eq!(r.step, i);
            assert_eq!(r.lr, lr_schedule(i, 4, 1e-3, 1e-6));
            assert!((0.0..=1.0).contains(&r.fmt_rate));
        }
        for f in ["step_000002.json", "step_000004.json", FINAL_CHECKPOINT] {
            assert!(dir.path().join(CHECKPOINT_DIR).join(f).exists(), "{f}");
        }
        PolicyParams::load(&s.final_checkpoint, &Vocabulary::standard()).unwrap();
    }

    #[test]
    fn rollout_dump_reproduces_logged_rates() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.dump_rollouts = true;
        cfg.policy.template_prior = 6.0;
        run_training(cfg, Some(2)).unwrap();
        let dumps: Vec<RolloutDump> = std::fs::read_to_string(dir.path().join(ROLLOUT_FILE))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        for l in log.lines().skip(1) {
            let r: TrainLogRecord = serde_json::from_str(l).unwrap();
            let of_step: Vec<RolloutDump> = dumps.iter().filter(|d| d.step == r.step).cloned().collect();
            let again = batch_rates(&of_step);
            assert_eq!(again.scr_hit_rate, r.scr_hit_rate);
            assert_eq!(again.fmt_rate, r.fmt_rate);
            assert_eq!(again.mean_total_reward, r.mean_total_reward);
        }
    }

    #[test]
    fn max_steps_caps_the_run_but_not_the_ramp() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.max_steps = Some(2);
        let mut t = Trainer::new(cfg).unwrap();
        assert_eq!((t.steps_to_run(), t.planned_steps()), (2, 4));
        let r = t.step().unwrap();
        assert_eq!(r.rollouts.len(), 3);
        assert!(r.rollouts.iter().all(|d| d.responses.len() == 4));
    }
}
