//! Offline grading of response files against label files.
//!
//! Responses are JSONL `{"id", "response"}`; labels use the dataset record
//! layout (features optional). Output is one JSONL line per response and a
//! final `{"summary": …}` line.

use crate::dataset::DatasetRecord;
use crate::labels::{GroundTruth, TaskKind};
use crate::reward::{evaluate_response, RewardBreakdown, RewardConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
struct ResponseLine {
    id: String,
    #[serde(alias = "text")]
    response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedResponse {
    pub id: String,
    pub task: TaskKind,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

/// A line that could not be graded; grading continues past it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeError {
    pub id: Option<String>,
    pub file: String,
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradeSummary {
    pub n_responses: usize,
    pub n_scored: usize,
    pub mean_total: Option<f64>,
    pub mean_r_fmt: Option<f64>,
    /// Task components are averaged over responses of their own task.
    pub mean_r_scr: Option<f64>,
    pub mean_r_deg: Option<f64>,
    pub mean_r_lev: Option<f64>,
    pub mean_r_comp: Option<f64>,
    /// Response ids with no label.
    pub unmatched_ids: Vec<String>,
    /// Label ids no response referred to.
    pub unused_labels: Vec<String>,
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradeReport {
    pub graded: Vec<GradedResponse>,
    pub errors: Vec<GradeError>,
    pub summary: GradeSummary,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn summarize(graded: &[GradedResponse]) -> GradeSummary {
    let of = |task: TaskKind, f: fn(&RewardBreakdown) -> u8| {
        mean(
            graded
                .iter()
                .filter(|g| g.task == task)
                .map(|g| f64::from(f(&g.breakdown))),
        )
    };
    GradeSummary {
        n_scored: graded.len(),
        mean_total: mean(graded.iter().map(|g| g.breakdown.total)),
        mean_r_fmt: mean(graded.iter().map(|g| f64::from(g.breakdown.r_fmt))),
        mean_r_scr: of(TaskKind::Score, |b| b.r_scr),
        mean_r_deg: of(TaskKind::Degradation, |b| b.r_deg),
        mean_r_lev: of(TaskKind::Degradation, |b| b.r_lev),
        mean_r_comp: of(TaskKind::Comparison, |b| b.r_comp),
        ..Default::default()
    }
}

/// Grades response texts against labels, both given as JSONL text.
pub fn grade(responses: &str, labels: &str, cfg: &RewardConfig) -> Result<GradeReport> {
    cfg.validate()?;
    let mut errors = Vec::new();
    let mut truths: BTreeMap<String, GroundTruth> = BTreeMap::new();
    for (i, line) in labels.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |id: Option<String>, error: String| GradeError {
            id,
            file: "labels".into(),
            line: i + 1,
            error,
        };
        match serde_json::from_str::<DatasetRecord>(line) {
            Err(e) => errors.push(err(None, e.to_string())),
            Ok(r) => match r.label() {
                Err(e) => errors.push(err(Some(r.id), e)),
                Ok(_) if truths.contains_key(&r.id) => errors.push(err(Some(r.id), "duplicate label id".into())),
                Ok(t) => {
                    truths.insert(r.id, t);
                }
            },
        }
    }
    let mut graded = Vec::new();
    let mut unmatched = Vec::new();
    let mut used = BTreeSet::new();
    let mut n_responses = 0;
    for (i, line) in responses.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        n_responses += 1;
        let r = match serde_json::from_str::<ResponseLine>(line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|x| x.as_str()).map(String::from));
                errors.push(GradeError {
                    id,
                    file: "responses".into(),
                    line: i + 1,
                    error: e.to_string(),
                });
                continue;
            }
        };
        match truths.get(&r.id) {
            None => unmatched.push(r.id),
            Some(t) => {
                used.insert(r.id.clone());
                graded.push(GradedResponse {
                    task: t.task(),
                    breakdown: evaluate_response(&r.response, t, cfg),
                    id: r.id,
                });
            }
        }
    }
    let mut summary = summarize(&graded);
    summary.n_responses = n_responses;
    summary.unmatched_ids = unmatched;
    summary.unused_labels = truths.keys().filter(|k| !used.contains(*k)).cloned().collect();
    summary.errors = errors.len();
    Ok(GradeReport {
        graded,
        errors,
        summary,
    })
}

/// Reads both files, grades, and writes the per-id lines, error lines and
/// summary line to `out`. Only file-level failures are errors.
pub fn cmd_reward(responses: &Path, labels: &Path, cfg: &RewardConfig, out: &mut dyn Write) -> Result<GradeSummary> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let report = grade(&read(responses)?, &read(labels)?, cfg)?;
    let io = |e: std::io::Error| Error::io("<output>", e);
    for g in &report.graded {
        serde_json::to_writer(&mut *out, g).expect("graded line serializes");
        out.write_all(b"\n").map_err(io)?;
    }
    for e in &report.errors {
        serde_json::to_writer(&mut *out, e).expect("error line serializes");
        out.write_all(b"\n").map_err(io)?;
    }
    serde_json::to_writer(&mut *out, &serde_json::json!({ "summary": report.summary })).expect("summary serializes");
    out.write_all(b"\n").map_err(io)?;
    Ok(report.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LABELS: &str = r#"{"id":"s1","task":"score","mos":3.0}
{"id":"d1","task":"degradation","class":"blur","severity":"serious"}
{"id":"c1","task":"comparison","better":"B"}
{"id":"spare","task":"score","mos":4.5}
"#;

    #[test]
    fn grades_joins_and_reports() {
        let responses = r#"{"id":"s1","response":"<think>x</think><answer>{\"rating\": 3.20}</answer>"}
{"id":"d1","response":"<think></think><answer>{\"distortion_class\": \"blur\", \"severity\": \"slight\"}</answer>"}
{"id":"c1","response":"<think></think><answer>{\"choice\": \"Image B\"}</answer>"}
{"id":"ghost","response":"whatever"}
not json
"#;
        let r = grade(responses, LABELS, &RewardConfig::default()).unwrap();
        assert_eq!(r.graded.len(), 3);
        assert_eq!(r.graded[0].breakdown.total, 2.0);
        assert_eq!(r.graded[1].breakdown.total, 1.25);
        assert_eq!(r.graded[2].breakdown.total, 2.0);
        assert_eq!(r.summary.unmatched_ids, vec!["ghost"]);
        assert_eq!(r.summary.unused_labels, vec!["spare"]);
        assert_eq!((r.summary.n_responses, r.summary.errors), (5, 1));
        assert_eq!(r.errors[0].line, 5);
        assert_eq!(r.summary.mean_r_lev, Some(0.0));
        assert!((r.summary.mean_total.unwrap() - 5.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bad_and_duplicate_labels_become_error_entries() {
        let labels = "{\"id\":\"a\",\"task\":\"score\"}\n{\"id\":\"b\",\"task\":\"score\",\"mos\":2}\n{\"id\":\"b\",\"task\":\"score\",\"mos\":3}\n";
        let r = grade("{\"id\":\"b\",\"response\":\"\"}", labels, &RewardConfig::default()).unwrap();
        assert_eq!(r.errors.len(), 2);
        assert_eq!(r.graded[0].breakdown.total, 0.0);
    }

    #[test]
    fn output_ends_with_summary() {
        let dir = tempfile::tempdir().unwrap();
        let (rp, lp) = (dir.path().join("r.jsonl"), dir.path().join("l.jsonl"));
        std::fs::write(&rp, "{\"id\":\"s1\",\"text\":\"\"}\n").unwrap();
        std::fs::write(&lp, LABELS).unwrap();
        let mut out = Vec::new();
        cmd_reward(&rp, &lp, &RewardConfig::default(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(last["summary"]["n_scored"], 1);
        assert!(matches!(
            cmd_reward(
                &dir.path().join("missing"),
                &lp,
                &RewardConfig::default(),
                &mut Vec::new()
            ),
            Err(Error::Io { .. })
        ));
    }
}
