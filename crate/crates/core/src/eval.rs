//! Greedy evaluation of a policy, or of any other responder, on labelled samples.

use crate::codec::{render_response, ParsedAnswer};
use crate::dataset::{load_dataset, DatasetRecord};
use crate::env::{round2, EnvConfig, FeatureNorm};
use crate::labels::{ComparisonChoice, DegradationClass, GroundTruth, SeverityLevel, TaskKind};
use crate::metrics::{class_level_accuracy, plcc, srcc, MetricReport};
use crate::policy::{encode_context, PolicyParams};
use crate::reward::{evaluate_response, parse_prediction, RewardConfig};
use crate::rng::derive_rng;
use crate::vocab::Vocabulary;
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Anything that answers a query with response text.
pub trait Responder: Sync {
    fn respond(&self, index: usize, record: &DatasetRecord, norm: &FeatureNorm) -> Result<String>;
}

/// Decodes the most likely token at every step.
pub struct GreedyPolicy<'a> {
    pub params: &'a PolicyParams,
    pub vocab: &'a Vocabulary,
}

impl Responder for GreedyPolicy<'_> {
    fn respond(&self, _index: usize, record: &DatasetRecord, norm: &FeatureNorm) -> Result<String> {
        let ctx = encode_context(&record.features, record.features_b.as_deref(), record.task, norm)?;
        let seq = self.params.greedy_sequence(&ctx)?;
        Ok(self.vocab.detokenize(&seq.tokens))
    }
}

/// Samples one response per record; record `index` seeds its own stream.
pub struct SampledPolicy<'a> {
    pub params: &'a PolicyParams,
    pub vocab: &'a Vocabulary,
    pub seed: u64,
}

impl Responder for SampledPolicy<'_> {
    fn respond(&self, index: usize, record: &DatasetRecord, norm: &FeatureNorm) -> Result<String> {
        let ctx = encode_context(&record.features, record.features_b.as_deref(), record.task, norm)?;
        let seq = self
            .params
            .sample_sequence(&ctx, &mut derive_rng(self.seed, &[index as u64]))?;
        Ok(self.vocab.detokenize(&seq.tokens))
    }
}

/// The answer that earns every task reward for `truth`.
pub fn answer_for(truth: &GroundTruth) -> ParsedAnswer {
    match *truth {
        GroundTruth::Mos(m) => ParsedAnswer::Rating(m),
        GroundTruth::Deg(c, s) => ParsedAnswer::Degradation(c, s),
        GroundTruth::Comp(c) => ParsedAnswer::Comparison(c),
    }
}

/// Test double that always renders the record's own label.
pub struct OracleResponder;

impl Responder for OracleResponder {
    fn respond(&self, _index: usize, record: &DatasetRecord, _norm: &FeatureNorm) -> Result<String> {
        let truth = record.label().map_err(Error::Config)?;
        Ok(render_response(&answer_for(&truth), ""))
    }
}

/// Test double answering uniformly at random in the well-formed grammar.
pub struct RandomResponder {
    pub seed: u64,
}

impl Responder for RandomResponder {
    fn respond(&self, index: usize, record: &DatasetRecord, _norm: &FeatureNorm) -> Result<String> {
        let mut rng = derive_rng(self.seed, &[index as u64]);
        let answer = match record.task {
            TaskKind::Score => ParsedAnswer::Rating(round2(rng.random_range(1.0..=5.0))),
            TaskKind::Degradation => {
                let c = DegradationClass::ALL[rng.random_range(0..5)];
                let s = if c == DegradationClass::Null {
                    SeverityLevel::Null
                } else {
                    SeverityLevel::RANKED[rng.random_range(0..5)]
                };
                ParsedAnswer::Degradation(c, s)
            }
            TaskKind::Comparison => ParsedAnswer::Comparison(ComparisonChoice::ALL[rng.random_range(0..3)]),
        };
        Ok(render_response(&answer, ""))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub task: TaskKind,
    pub response: String,
    pub answer: Option<ParsedAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub predictions: Vec<Prediction>,
    /// `(id, message)` for records the responder could not answer.
    pub failures: Vec<(String, String)>,
}

/// Answers every record once and scores the answers.
pub fn evaluate<R: Responder>(
    responder: &R,
    records: &[(DatasetRecord, GroundTruth)],
    norm: &FeatureNorm,
    rewards: &RewardConfig,
) -> Result<EvalOutcome> {
    let answered: Vec<std::result::Result<Prediction, (String, String)>> = records
        .par_iter()
        .enumerate()
        .map(|(i, (rec, _))| match responder.respond(i, rec, norm) {
            Ok(response) => Ok(Prediction {
                id: rec.id.clone(),
                task: rec.task,
                answer: parse_prediction(&response, rec.task),
                response,
            }),
            Err(e) => Err((rec.id.clone(), e.to_string())),
        })
        .collect();

    let mut report = MetricReport::default();
    let mut predictions = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    let (mut score_pred, mut score_gt) = (Vec::new(), Vec::new());
    let (mut deg_pred, mut deg_gt) = (Vec::new(), Vec::new());
    let mut comp_hits = 0usize;
    let (mut fmt_hits, mut scr_hits) = (0usize, 0usize);
    for ((_, truth), a) in records.iter().zip(answered) {
        let p = match a {
            Ok(p) => p,
            Err(f) => {
                failures.push(f);
                continue;
            }
        };
        report.n += 1;
        let b = evaluate_response(&p.response, truth, rewards);
        fmt_hits += usize::from(b.r_fmt);
        scr_hits += usize::from(b.r_scr);
        if p.answer.is_none() {
            report.parse_failures += 1;
        }
        match (truth, p.answer) {
            (GroundTruth::Mos(gt), a) => {
                report.n_score += 1;
                if let Some(ParsedAnswer::Rating(r)) = a {
                    score_pred.push(r);
                    score_gt.push(*gt);
                }
            }
            (GroundTruth::Deg(c, s), a) => {
                report.n_degradation += 1;
                deg_gt.push((*c, *s));
                deg_pred.push(match a {
                    Some(ParsedAnswer::Degradation(pc, ps)) => Some((pc, ps)),
                    _ => None,
                });
            }
            (GroundTruth::Comp(c), a) => {
                report.n_comparison += 1;
                comp_hits += usize::from(a == Some(ParsedAnswer::Comparison(*c)));
            }
        }
        predictions.push(p);
    }
    report.malformed = failures.len();
    report.plcc = plcc(&score_pred, &score_gt).ok();
    report.srcc = srcc(&score_pred, &score_gt).ok();
    if !deg_gt.is_empty() {
        let acc = class_level_accuracy(&deg_pred, &deg_gt)?;
        report.deg_acc = Some(acc.deg_acc);
        report.lev_acc = acc.lev_acc;
        report.per_class = acc.per_class;
    }
    let frac = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
    report.fmt_rate = frac(fmt_hits, report.n);
    report.scr_hit_rate = frac(scr_hits, report.n_score);
    if report.n_comparison > 0 {
        report.comp_acc = Some(comp_hits as f64 / report.n_comparison as f64);
    }
    Ok(EvalOutcome {
        report,
        predictions,
        failures,
    })
}

/// Loads a checkpoint and a dataset, evaluates greedily, and writes the
/// report as JSON (`out`) and as a header plus one CSV row (`csv`).
/// Feature normalization follows the dataset manifest when present.
pub fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    rewards: &RewardConfig,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> Result<MetricReport> {
    let vocab = Vocabulary::standard();
    let params = PolicyParams::load(ckpt, &vocab)?;
    let loaded = load_dataset(data)?;
    let env_cfg = loaded
        .manifest
        .as_ref()
        .map(|m| m.env_config.clone())
        .unwrap_or_else(EnvConfig::default);
    let want = env_cfg.feature_dim + TaskKind::ALL.len();
    if params.dims().context != want {
        return Err(Error::Config(format!(
            "checkpoint expects context dimension {}, data gives {want}",
            params.dims().context
        )));
    }
    let norm = FeatureNorm::from_config(&env_cfg);
    let outcome = evaluate(
        &GreedyPolicy {
            params: &params,
            vocab: &vocab,
        },
        &loaded.records,
        &norm,
        rewards,
    )?;
    let mut report = outcome.report;
    report.malformed += loaded.bad_lines.len();
    for b in &loaded.bad_lines {
        eprintln!("skipped {}:{}: {}", b.file.display(), b.line, b.error);
    }
    for (id, msg) in &outcome.failures {
        eprintln!("skipped {id}: {msg}");
    }
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = csv {
        let text = format!("{}\n{}\n", MetricReport::csv_header(), report.csv_row());
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SyntheticEnv;

    fn records(task: TaskKind, n: usize) -> Vec<(DatasetRecord, GroundTruth)> {
        let env = SyntheticEnv::new(EnvConfig::default()).unwrap();
        env.holdout(task, n, 5)
            .iter()
            .map(|s| (DatasetRecord::from(s), s.truth))
            .collect()
    }

    fn norm() -> FeatureNorm {
        FeatureNorm::from_config(&EnvConfig::default())
    }

    #[test]
    fn oracle_is_perfect() {
        let mut recs = records(TaskKind::Score, 50);
        recs.extend(records(TaskKind::Degradation, 50));
        recs.extend(records(TaskKind::Comparison, 20));
        let r = evaluate(&OracleResponder, &recs, &norm(), &RewardConfig::default())
            .unwrap()
            .report;
        assert_eq!((r.n, r.n_score, r.n_degradation, r.n_comparison), (120, 50, 50, 20));
        assert!((r.plcc.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.srcc.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!((r.deg_acc, r.lev_acc, r.comp_acc), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(r.parse_failures, 0);
        assert_eq!((r.scr_hit_rate, r.fmt_rate), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn empty_score_subset_leaves_correlations_absent() {
        let r = evaluate(
            &OracleResponder,
            &records(TaskKind::Degradation, 10),
            &norm(),
            &RewardConfig::default(),
        )
        .unwrap()
        .report;
        assert_eq!((r.plcc, r.srcc), (None, None));
        assert!(r.deg_acc.is_some());
    }

    #[test]
    fn greedy_policy_runs_on_any_record() {
        let vocab = Vocabulary::standard();
        let params = PolicyParams::random(Default::default(), 0.1, &mut derive_rng(0, &[]));
        let mut recs = records(TaskKind::Score, 5);
        recs.extend(records(TaskKind::Comparison, 5));
        let out = evaluate(
            &GreedyPolicy {
                params: &params,
                vocab: &vocab,
            },
            &recs,
            &norm(),
            &RewardConfig::default(),
        )
        .unwrap();
        assert_eq!(out.predictions.len(), 10);
        assert!(out.failures.is_empty());
    }

    #[test]
    fn sampled_policy_is_seeded_per_record() {
        let vocab = Vocabulary::standard();
        let params = PolicyParams::random(Default::default(), 0.1, &mut derive_rng(0, &[]));
        let recs = records(TaskKind::Score, 8);
        let run = |seed| {
            let r = SampledPolicy {
                params: &params,
                vocab: &vocab,
                seed,
            };
            evaluate(&r, &recs, &norm(), &RewardConfig::default())
                .unwrap()
                .predictions
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn wrong_feature_size_is_reported_not_fatal() {
        let vocab = Vocabulary::standard();
        let params = PolicyParams::random(Default::default(), 0.1, &mut derive_rng(0, &[]));
        let mut recs = records(TaskKind::Score, 3);
        recs[1].0.features.pop();
        let out = evaluate(
            &GreedyPolicy {
                params: &params,
                vocab: &vocab,
            },
            &recs,
            &norm(),
            &RewardConfig::default(),
        )
        .unwrap();
        assert_eq!((out.report.n, out.report.malformed), (2, 1));
        assert_eq!(out.failures[0].0, recs[1].0.id);
    }
}
