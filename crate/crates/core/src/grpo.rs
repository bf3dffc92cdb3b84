//! Group-relative policy optimization.
//!
//! For a group of `N` responses to one query with rewards `r_i`:
//!
//! ```text
//! A_i = (r_i - mean(r)) / std(r)                          (population std)
//! J   = mean_i { min(ρ_i A_i, clip(ρ_i, 1-δ, 1+δ) A_i) - β KL_i }
//! ρ_i = π_new(o_i | q) / π_old(o_i | q)                   (sequence level)
//! ```
//!
//! [`grpo_step`] ascends the batch mean of `J` with AdamW.

use crate::labels::{GroundTruth, TaskKind};
use crate::optim::{lr_schedule, AdamW, AdamWConfig};
use crate::policy::{PolicyParams, TokenSeq, Trace};
use crate::reward::RewardConfig;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Exponent bound applied before computing a probability ratio.
pub const MAX_LOG_RATIO: f64 = 50.0;

/// Groups whose reward spread is below this get zero advantages.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMode {
    /// Sum over emitted positions of the exact categorical KL.
    #[default]
    Exact,
    /// `r - ln r - 1` with `r = π_ref(o)/π_new(o)`.
    K3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub kl_weight: f64,
    pub clip_range: f64,
    #[serde(flatten)]
    pub reward: RewardConfig,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Steps per epoch when batches are drawn from the environment.
    pub steps_per_epoch: usize,
    /// Optimizer steps taken on each sampled batch before π_old is refreshed.
    pub inner_steps: usize,
    pub kl_mode: KlMode,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            kl_weight: 1e-3,
            clip_range: 0.2,
            reward: RewardConfig::default(),
            lr_start: 1e-3,
            lr_end: 1e-6,
            epochs: 10,
            batch_size: 32,
            steps_per_epoch: 100,
            inner_steps: 1,
            kl_mode: KlMode::Exact,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.group_size < 2 {
            return fail(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return fail(format!("clip_range must lie in (0,1), got {}", self.clip_range));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return fail(format!("kl_weight must be >= 0, got {}", self.kl_weight));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return fail(format!(
                "need lr_start >= lr_end > 0, got {} -> {}",
                self.lr_start, self.lr_end
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 || self.inner_steps == 0 {
            return fail("epochs, batch_size, steps_per_epoch and inner_steps must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be >= 0".into());
        }
        self.reward.validate()
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// One query's sampled responses, the unit advantages are normalized over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub ctx: Vec<f64>,
    pub task: TaskKind,
    pub truth: GroundTruth,
    pub responses: Vec<TokenSeq>,
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupRollout {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

/// Standardizes rewards within a group using the population std.
pub fn normalize_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n < 2 {
        return Err(Error::Config(format!("a group needs at least 2 rewards, got {n}")));
    }
    // shifted by the first reward, so adding a constant that keeps the
    // differences exact leaves the result bit-identical
    let d: Vec<f64> = rewards.iter().map(|r| r - rewards[0]).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std >= DEGENERATE_STD) {
        return Ok(vec![0.0; n]);
    }
    Ok(d.iter().map(|x| (x - mean) / std).collect())
}

/// True when [`prob_ratio`] had to clamp its exponent.
pub fn ratio_clamped(logp_new: f64, logp_old: f64) -> bool {
    (logp_new - logp_old).abs() > MAX_LOG_RATIO
}

pub fn prob_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp()
}

pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to `ln π_new(o)`.
/// Zero whenever the constant clipped branch is the minimum.
pub fn surrogate_logp_grad(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    if clipped * advantage < ratio * advantage {
        0.0
    } else {
        ratio * advantage
    }
}

fn exact_kl_terms(new: &Trace, reference: &Trace) -> (f64, Vec<Vec<f64>>) {
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(new.log_probs.len());
    for (lp, lq) in new.log_probs.iter().zip(&reference.log_probs) {
        let kl: f64 = lp.iter().zip(lq).map(|(p, q)| p.exp() * (p - q)).sum();
        total += kl;
        dlogits.push(lp.iter().zip(lq).map(|(p, q)| p.exp() * ((p - q) - kl)).collect());
    }
    (total, dlogits)
}

fn k3(logp_new: f64, logp_ref: f64) -> f64 {
    let x = (logp_ref - logp_new).clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO);
    x.exp_m1() - x
}

/// KL penalty of one response; see [`KlMode`].
pub fn kl_penalty(new: &PolicyParams, reference: &PolicyParams, ctx: &[f64], tokens: &[usize], mode: KlMode) -> f64 {
    match mode {
        KlMode::Exact => exact_kl_terms(&new.trace(ctx, tokens), &reference.trace(ctx, tokens)).0,
        KlMode::K3 => k3(
            new.sequence_log_prob(ctx, tokens),
            reference.sequence_log_prob(ctx, tokens),
        ),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStats {
    /// Batch mean of the objective.
    pub objective: f64,
    /// Mean KL penalty per response.
    pub mean_kl: f64,
    /// Responses whose ratio exponent was clamped.
    pub clamped: usize,
    pub responses: usize,
}

/// Objective of one group and, optionally, `weight · ∇J` accumulated into `grad`.
fn group_terms(
    group: &GroupRollout,
    new: &PolicyParams,
    reference: &PolicyParams,
    cfg: &TrainConfig,
    mut grad: Option<(&mut PolicyParams, f64)>,
) -> ObjectiveStats {
    let n = group.len() as f64;
    let mut stats = ObjectiveStats {
        responses: group.len(),
        ..Default::default()
    };
    for i in 0..group.len() {
        let tokens: &[usize] = &group.responses[i];
        let tr = new.trace(&group.ctx, tokens);
        let logp: f64 = tokens.iter().zip(&tr.log_probs).map(|(&y, lp)| lp[y]).sum();
        let old = group.old_log_probs[i];
        stats.clamped += usize::from(ratio_clamped(logp, old));
        let rho = prob_ratio(logp, old);
        let adv = group.advantages[i];

        let (kl, kl_dlogits) = match cfg.kl_mode {
            KlMode::Exact => {
                let (kl, d) = exact_kl_terms(&tr, &reference.trace(&group.ctx, tokens));
                (kl, Some(d))
            }
            KlMode::K3 => (k3(logp, reference.sequence_log_prob(&group.ctx, tokens)), None),
        };
        stats.objective += (clipped_surrogate(rho, adv, cfg.clip_range) - cfg.kl_weight * kl) / n;
        stats.mean_kl += kl / n;

        let Some((g, weight)) = grad.as_mut() else {
            continue;
        };
        // coefficient on ∇ln π_new(o): surrogate term plus the K3 term
        let mut c = surrogate_logp_grad(rho, adv, cfg.clip_range);
        if cfg.kl_mode == KlMode::K3 {
            let r = prob_ratio(reference.sequence_log_prob(&group.ctx, tokens), logp);
            c -= cfg.kl_weight * (1.0 - r);
        }
        if c == 0.0 && (cfg.kl_weight == 0.0 || kl_dlogits.is_none()) {
            continue;
        }
        let scale = *weight / n;
        let dlogits: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(t, &y)| {
                let lp = &tr.log_probs[t];
                let mut d: Vec<f64> = lp.iter().map(|l| -c * l.exp()).collect();
                d[y] += c;
                if let Some(kd) = &kl_dlogits {
                    for (x, k) in d.iter_mut().zip(&kd[t]) {
                        *x -= cfg.kl_weight * k;
                    }
                }
                d.iter_mut().for_each(|x| *x *= scale);
                d
            })
            .collect();
        new.backprop(&group.ctx, tokens, &tr, &dlogits, g);
    }
    stats
}

/// Mean over the group of the clipped surrogate minus the weighted KL.
pub fn grpo_objective(group: &GroupRollout, new: &PolicyParams, reference: &PolicyParams, cfg: &TrainConfig) -> f64 {
    group_terms(group, new, reference, cfg, None).objective
}

fn merge(stats: &[ObjectiveStats]) -> ObjectiveStats {
    let k = stats.len() as f64;
    stats.iter().fold(ObjectiveStats::default(), |acc, s| ObjectiveStats {
        objective: acc.objective + s.objective / k,
        mean_kl: acc.mean_kl + s.mean_kl / k,
        clamped: acc.clamped + s.clamped,
        responses: acc.responses + s.responses,
    })
}

/// Batch-mean objective and its gradient `∇J` with respect to `new`.
/// Groups are processed in parallel and summed in order, so the result does
/// not depend on the thread count.
pub fn objective_and_grad(
    groups: &[GroupRollout],
    new: &PolicyParams,
    reference: &PolicyParams,
    cfg: &TrainConfig,
) -> (ObjectiveStats, PolicyParams) {
    let w = 1.0 / groups.len() as f64;
    let parts: Vec<(ObjectiveStats, PolicyParams)> = groups
        .par_iter()
        .map(|g| {
            let mut grad = new.zeros_like();
            let s = group_terms(g, new, reference, cfg, Some((&mut grad, w)));
            (s, grad)
        })
        .collect();
    let mut total = new.zeros_like();
    let mut stats = Vec::with_capacity(parts.len());
    for (s, g) in &parts {
        total.axpy(1.0, g);
        stats.push(*s);
    }
    (merge(&stats), total)
}

/// Result of one optimizer step. Objective and KL are measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub lr: f64,
    pub stats: ObjectiveStats,
}

/// One AdamW ascent step on the batch-mean objective.
#[allow(clippy::too_many_arguments)]
pub fn grpo_step(
    params: &mut PolicyParams,
    opt: &mut AdamW,
    groups: &[GroupRollout],
    reference: &PolicyParams,
    cfg: &TrainConfig,
    step_index: usize,
    total_steps: usize,
) -> Result<StepOutcome> {
    if groups.is_empty() {
        return Err(Error::Config("grpo_step needs at least one group".into()));
    }
    let (stats, mut grad) = objective_and_grad(groups, params, reference, cfg);
    if !grad.is_finite() || !stats.objective.is_finite() {
        let culprit = groups
            .iter()
            .find(|g| {
                let mut gg = params.zeros_like();
                let s = group_terms(g, params, reference, cfg, Some((&mut gg, 1.0)));
                !gg.is_finite() || !s.objective.is_finite()
            })
            .unwrap_or(&groups[0]);
        let dump = serde_json::to_string(culprit).unwrap_or_else(|e| format!("<unserializable: {e}>"));
        return Err(Error::NonFinite(format!(
            "non-finite gradient at step {step_index}; group: {dump}"
        )));
    }
    let lr = lr_schedule(step_index, total_steps, cfg.lr_start, cfg.lr_end);
    // ascent on J is descent on -J
    grad.scale(-1.0);
    opt.update(params, &grad, lr);
    Ok(StepOutcome { lr, stats })
}
