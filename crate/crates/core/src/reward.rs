//! Verifiable binary rewards and their multi-task combination.
//!
//! Every component is 0 or 1. The total for a score query is
//! `r_fmt + r_scr`, for a degradation query `r_fmt + α1·r_deg + α2·r_lev`,
//! and for a comparison query `r_fmt + r_comp`.

use crate::codec::{format_reward, parse_answer_payload, parse_response, ParsedAnswer, ParsedResponse};
use crate::labels::{ComparisonChoice, DegradationClass, GroundTruth, SeverityLevel, TaskKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// ε: tolerance of the score reward.
    pub score_threshold: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.35,
            alpha1: 0.25,
            alpha2: 0.75,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.score_threshold >= 0.0 && self.score_threshold.is_finite()) {
            return Err(crate::Error::Config(format!(
                "score_threshold must be finite and >= 0, got {}",
                self.score_threshold
            )));
        }
        if !self.alpha1.is_finite() || !self.alpha2.is_finite() {
            return Err(crate::Error::Config("alpha weights must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_fmt: u8,
    pub r_scr: u8,
    pub r_deg: u8,
    pub r_lev: u8,
    pub r_comp: u8,
    pub total: f64,
}

/// 1 iff `|pred - gt| < ε`; with ε = 0 the test is exact equality.
/// Non-finite inputs score 0.
pub fn score_reward(scr_pred: f64, scr_gt: f64, eps: f64) -> u8 {
    if !scr_pred.is_finite() || !scr_gt.is_finite() || !eps.is_finite() {
        return 0;
    }
    let hit = if eps == 0.0 {
        scr_pred == scr_gt
    } else {
        (scr_pred - scr_gt).abs() < eps
    };
    u8::from(hit)
}

pub fn degradation_reward(deg_pred: DegradationClass, deg_gt: DegradationClass) -> u8 {
    u8::from(deg_pred == deg_gt)
}

/// Requires both the class and the level to match.
pub fn level_reward(
    deg_pred: DegradationClass,
    lev_pred: SeverityLevel,
    deg_gt: DegradationClass,
    lev_gt: SeverityLevel,
) -> u8 {
    u8::from(deg_pred == deg_gt && lev_pred == lev_gt)
}

pub fn comparison_reward(res_pred: ComparisonChoice, res_comp: ComparisonChoice) -> u8 {
    u8::from(res_pred == res_comp)
}

/// Combines the components for `task`. Components of inactive tasks are ignored.
pub fn total_reward(c: &RewardBreakdown, task: TaskKind, cfg: &RewardConfig) -> f64 {
    let fmt = f64::from(c.r_fmt);
    match task {
        TaskKind::Score => fmt + f64::from(c.r_scr),
        TaskKind::Degradation => fmt + cfg.alpha1 * f64::from(c.r_deg) + cfg.alpha2 * f64::from(c.r_lev),
        TaskKind::Comparison => fmt + f64::from(c.r_comp),
    }
}

fn payload(parsed: &ParsedResponse, task: TaskKind) -> Option<ParsedAnswer> {
    if !parsed.structure_ok {
        return None;
    }
    parse_answer_payload(&parsed.answer_body, task).ok()
}

/// Typed answer of a response for `task`, or `None` when it cannot be parsed.
/// The format reward is not required.
pub fn parse_prediction(text: &str, task: TaskKind) -> Option<ParsedAnswer> {
    payload(&parse_response(text), task)
}

/// Grades a single response against `truth`.
pub fn evaluate_response(text: &str, truth: &GroundTruth, cfg: &RewardConfig) -> RewardBreakdown {
    let task = truth.task();
    let parsed = parse_response(text);
    let mut b = RewardBreakdown {
        r_fmt: format_reward(&parsed),
        ..Default::default()
    };
    if let Some(answer) = payload(&parsed, task) {
        match (answer, truth) {
            (ParsedAnswer::Rating(p), GroundTruth::Mos(gt)) => {
                b.r_scr = score_reward(p, *gt, cfg.score_threshold);
            }
            (ParsedAnswer::Degradation(dc, ds), GroundTruth::Deg(gc, gs)) => {
                b.r_deg = degradation_reward(dc, *gc);
                b.r_lev = level_reward(dc, ds, *gc, *gs);
            }
            (ParsedAnswer::Comparison(p), GroundTruth::Comp(gt)) => {
                b.r_comp = comparison_reward(p, *gt);
            }
            _ => unreachable!("payload parsed for the truth's own task"),
        }
    }
    b.total = total_reward(&b, task, cfg);
    b
}

/// Grades every response of a group independently, preserving order.
pub fn evaluate_group<S: AsRef<str>>(responses: &[S], truth: &GroundTruth, cfg: &RewardConfig) -> Vec<RewardBreakdown> {
    responses
        .iter()
        .map(|r| evaluate_response(r.as_ref(), truth, cfg))
        .collect()
}
