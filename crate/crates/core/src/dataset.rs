//! Dataset files: one JSONL file per task plus a manifest.

use crate::env::{EnvConfig, SyntheticEnv, SyntheticSample};
use crate::labels::{consistent_pair, ComparisonChoice, DegradationClass, GroundTruth, SeverityLevel, TaskKind};
use crate::rng::derive_rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub task: TaskKind,
    #[serde(default)]
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub better: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_b: Option<Vec<f64>>,
}

impl From<&SyntheticSample> for DatasetRecord {
    fn from(s: &SyntheticSample) -> Self {
        let mut r = DatasetRecord {
            id: s.id.clone(),
            task: s.task,
            features: s.features.clone(),
            mos: None,
            class: None,
            severity: None,
            better: None,
            features_b: s.features_b.clone(),
        };
        match s.truth {
            GroundTruth::Mos(m) => r.mos = Some(m),
            GroundTruth::Deg(c, sv) => {
                r.class = Some(c.name().into());
                r.severity = Some(sv.name().into());
            }
            GroundTruth::Comp(c) => r.better = Some(c.label().into()),
        }
        r
    }
}

impl DatasetRecord {
    /// Ground truth from the label fields alone.
    pub fn label(&self) -> std::result::Result<GroundTruth, String> {
        match self.task {
            TaskKind::Score => match self.mos {
                Some(m) if m.is_finite() => Ok(GroundTruth::Mos(m)),
                _ => Err("score record needs a finite \"mos\"".into()),
            },
            TaskKind::Degradation => {
                let c = self.class.as_deref().and_then(DegradationClass::parse);
                let s = self.severity.as_deref().and_then(SeverityLevel::parse);
                match (c, s) {
                    (Some(c), Some(s)) if consistent_pair(c, s) => Ok(GroundTruth::Deg(c, s)),
                    _ => Err("degradation record needs a valid \"class\"/\"severity\" pair".into()),
                }
            }
            TaskKind::Comparison => self
                .better
                .as_deref()
                .and_then(ComparisonChoice::parse)
                .map(GroundTruth::Comp)
                .ok_or_else(|| "comparison record needs \"better\"".into()),
        }
    }

    /// Ground truth of a full dataset record, which also needs its features.
    pub fn truth(&self) -> std::result::Result<GroundTruth, String> {
        if self.features.is_empty() {
            return Err("record has no \"features\"".into());
        }
        if self.task == TaskKind::Comparison && self.features_b.is_none() {
            return Err("comparison record needs \"features_b\"".into());
        }
        self.label()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskCounts {
    pub score: usize,
    pub degradation: usize,
    pub comparison: usize,
}

impl TaskCounts {
    pub fn get(&self, task: TaskKind) -> usize {
        match task {
            TaskKind::Score => self.score,
            TaskKind::Degradation => self.degradation,
            TaskKind::Comparison => self.comparison,
        }
    }

    pub fn total(&self) -> usize {
        self.score + self.degradation + self.comparison
    }
}

/// Generation request; a written manifest is itself a valid request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub env_config: EnvConfig,
    pub counts: TaskCounts,
    /// SHA-256 over the data files, filled in by [`make_dataset`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_sha256: Option<String>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

pub fn task_file(task: TaskKind) -> String {
    format!("{}.jsonl", task.name())
}

/// Generates the samples of one task. Each task draws from its own stream.
pub fn generate(env: &SyntheticEnv, seed: u64, task: TaskKind, count: usize) -> Vec<SyntheticSample> {
    let mut rng = derive_rng(seed, &[0xDA7A, task.index() as u64]);
    (0..count)
        .map(|i| env.gen_sample(&mut rng, task, format!("{task}-{i:06}")))
        .collect()
}

/// Writes `<task>.jsonl` for every task and `manifest.json` into `out_dir`.
pub fn make_dataset(request: &Manifest, out_dir: &Path) -> Result<Manifest> {
    let env = SyntheticEnv::new(request.env_config.clone())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut hasher = Sha256::new();
    for task in TaskKind::ALL {
        let path = out_dir.join(task_file(task));
        let mut buf = Vec::new();
        for s in generate(&env, request.seed, task, request.counts.get(task)) {
            serde_json::to_writer(&mut buf, &DatasetRecord::from(&s)).expect("record serializes");
            buf.push(b'\n');
        }
        hasher.update(task_file(task).as_bytes());
        hasher.update((buf.len() as u64).to_le_bytes());
        hasher.update(&buf);
        std::fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        data_sha256: Some(hex::encode(hasher.finalize())),
        ..request.clone()
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest).expect("manifest serializes");
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// A record that failed to load, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadLine {
    pub file: PathBuf,
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub records: Vec<(DatasetRecord, GroundTruth)>,
    pub bad_lines: Vec<BadLine>,
    pub manifest: Option<Manifest>,
}

fn data_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        Ok(TaskKind::ALL
            .iter()
            .map(|t| path.join(task_file(*t)))
            .filter(|p| p.exists())
            .collect())
    } else if path.exists() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)))
    }
}

/// Loads a dataset directory (task files plus manifest) or a single JSONL
/// file. Malformed lines are collected, not fatal.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let mut out = LoadedDataset::default();
    let dir = if path.is_dir() { Some(path) } else { path.parent() };
    if let Some(m) = dir.map(|d| d.join(MANIFEST_FILE)).filter(|m| m.exists()) {
        out.manifest = Some(read_manifest(&m)?);
    }
    for file in data_files(path)? {
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<DatasetRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(|r| r.truth().map(|t| (r, t)));
            match parsed {
                Ok(rt) => out.records.push(rt),
                Err(error) => out.bad_lines.push(BadLine {
                    file: file.clone(),
                    line: i + 1,
                    error,
                }),
            }
        }
    }
    Ok(out)
}
