//! Synthetic quality-assessment environment.
//!
//! Each sample has a hidden latent (content quality, distortion class,
//! severity). Features are a fixed linear embedding of the latent plus
//! Gaussian noise; labels come from a known MOS oracle, so every task is
//! learnable and every reward is checkable.

use crate::labels::{consistent_pair, ComparisonChoice, DegradationClass, GroundTruth, SeverityLevel, TaskKind};
use crate::rng::derive_rng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Per-rank MOS penalty of a distorted sample.
pub const SEVERITY_PENALTY: f64 = 0.55;

/// Size of the latent code: content quality plus one slot per distorted class.
pub const LATENT_DIM: usize = 5;

const EMBEDDING_SEED: u64 = 0x51A5_E11B_0D1E_5EED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub feature_dim: usize,
    pub feature_noise_scale: f64,
    /// Prior over noise, blur, jpeg, darken, null.
    pub class_priors: [f64; 5],
    /// Prior over slight..catastrophic for distorted samples.
    pub severity_priors: [f64; 5],
    /// Standard deviation of the content-quality latent.
    pub content_quality_std: f64,
    /// MOS gap beyond which a comparison is not "similar".
    pub comparison_margin: f64,
    /// Probability that an emitted label is replaced by a random one.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            feature_noise_scale: 0.05,
            class_priors: [0.2; 5],
            severity_priors: [0.2; 5],
            content_quality_std: 1.0,
            comparison_margin: 0.25,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

fn check_prior(name: &str, p: &[f64]) -> crate::Result<()> {
    if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(crate::Error::Config(format!(
            "{name} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

impl EnvConfig {
    pub fn validate(&self) -> crate::Result<()> {
        check_prior("class_priors", &self.class_priors)?;
        check_prior("severity_priors", &self.severity_priors)?;
        if self.feature_dim < LATENT_DIM {
            return Err(crate::Error::Config(format!(
                "feature_dim must be at least {LATENT_DIM}"
            )));
        }
        if !(self.feature_noise_scale >= 0.0) || !(self.content_quality_std >= 0.0) {
            return Err(crate::Error::Config("noise scales must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) || !(self.comparison_margin >= 0.0) {
            return Err(crate::Error::Config("label_noise must be in [0,1], margin >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub content_quality: f64,
    pub class: DegradationClass,
    pub severity: SeverityLevel,
}

impl Latent {
    pub fn code(&self) -> [f64; LATENT_DIM] {
        let mut z = [0.0; LATENT_DIM];
        z[0] = self.content_quality;
        if self.class != DegradationClass::Null {
            z[1 + self.class.index()] = f64::from(self.severity.rank()) / 5.0;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub id: String,
    pub task: TaskKind,
    pub features: Vec<f64>,
    pub latent: Latent,
    /// Second image of a comparison pair.
    pub features_b: Option<Vec<f64>>,
    pub latent_b: Option<Latent>,
    pub truth: GroundTruth,
}

impl SyntheticSample {
    /// Exchanges the two images of a comparison pair.
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        if let (Some(fb), Some(lb)) = (self.features_b.clone(), self.latent_b) {
            s.features_b = Some(std::mem::replace(&mut s.features, fb));
            s.latent_b = Some(std::mem::replace(&mut s.latent, lb));
            if let GroundTruth::Comp(c) = s.truth {
                s.truth = GroundTruth::Comp(c.swapped());
            }
        }
        s
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hidden quality score in [1, 5].
pub fn mos_oracle(latent: &Latent) -> f64 {
    let penalty = if latent.class == DegradationClass::Null {
        0.0
    } else {
        SEVERITY_PENALTY * f64::from(latent.severity.rank())
    };
    (1.0 + 4.0 * sigmoid(latent.content_quality) - penalty).clamp(1.0, 5.0)
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn comparison_label(mos_a: f64, mos_b: f64, margin: f64) -> ComparisonChoice {
    let d = mos_a - mos_b;
    if d > margin {
        ComparisonChoice::A
    } else if d < -margin {
        ComparisonChoice::B
    } else {
        ComparisonChoice::Similar
    }
}

/// Fixed `feature_dim x LATENT_DIM` map from latent codes to features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    rows: Vec<[f64; LATENT_DIM]>,
}

impl FeatureMap {
    pub fn new(feature_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDING_SEED);
        let scale = 1.0 / (LATENT_DIM as f64).sqrt();
        let rows = (0..feature_dim)
            .map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * scale))
            .collect();
        Self { rows }
    }

    pub fn rows(&self) -> &[[f64; LATENT_DIM]] {
        &self.rows
    }

    pub fn embed(&self, z: &[f64; LATENT_DIM]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Affine per-feature standardization derived exactly from the priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn from_config(cfg: &EnvConfig) -> Self {
        let map = FeatureMap::new(cfg.feature_dim);
        let sev_pmf = &cfg.severity_priors;
        let e_rank: f64 = (0..5).map(|i| sev_pmf[i] * (i + 1) as f64 / 5.0).sum();
        let e_rank2: f64 = (0..5).map(|i| sev_pmf[i] * ((i + 1) as f64 / 5.0).powi(2)).sum();
        let mut mean_z = [0.0; LATENT_DIM];
        let mut second = [[0.0; LATENT_DIM]; LATENT_DIM];
        second[0][0] = cfg.content_quality_std.powi(2);
        for k in 0..4 {
            let p = cfg.class_priors[k];
            mean_z[1 + k] = p * e_rank;
            second[1 + k][1 + k] = p * e_rank2;
        }
        let cov = |a: usize, b: usize| second[a][b] - mean_z[a] * mean_z[b];
        let mean = map.embed(&mean_z);
        let std = map
            .rows()
            .iter()
            .map(|r| {
                let mut v = cfg.feature_noise_scale.powi(2);
                for a in 0..LATENT_DIM {
                    for b in 0..LATENT_DIM {
                        v += r[a] * r[b] * cov(a, b);
                    }
                }
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Sampler bound to one configuration.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    cfg: EnvConfig,
    map: FeatureMap,
    norm: FeatureNorm,
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, pmf: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack lands on the last index with positive mass
    pmf.iter().rposition(|p| *p > 0.0).unwrap_or(pmf.len() - 1)
}

impl SyntheticEnv {
    pub fn new(cfg: EnvConfig) -> crate::Result<Self> {
        cfg.validate()?;
        Ok(Self {
            map: FeatureMap::new(cfg.feature_dim),
            norm: FeatureNorm::from_config(&cfg),
            cfg,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn norm(&self) -> &FeatureNorm {
        &self.norm
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    fn draw_degradation<R: Rng + ?Sized>(&self, rng: &mut R) -> (DegradationClass, SeverityLevel) {
        let class = DegradationClass::ALL[draw_index(rng, &self.cfg.class_priors)];
        if class == DegradationClass::Null {
            (class, SeverityLevel::Null)
        } else {
            (class, SeverityLevel::RANKED[draw_index(rng, &self.cfg.severity_priors)])
        }
    }

    pub fn draw_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> Latent {
        let content_quality = rng.sample::<f64, _>(StandardNormal) * self.cfg.content_quality_std;
        let (class, severity) = self.draw_degradation(rng);
        Latent {
            content_quality,
            class,
            severity,
        }
    }

    /// Linear embedding of the latent plus feature noise.
    pub fn render_features<R: Rng + ?Sized>(&self, rng: &mut R, latent: &Latent) -> Vec<f64> {
        let mut f = self.map.embed(&latent.code());
        if self.cfg.feature_noise_scale > 0.0 {
            for x in &mut f {
                *x += self.cfg.feature_noise_scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        f
    }

    fn noisy<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        self.cfg.label_noise > 0.0 && rng.random::<f64>() < self.cfg.label_noise
    }

    pub fn gen_sample<R: Rng + ?Sized>(&self, rng: &mut R, task: TaskKind, id: String) -> SyntheticSample {
        if task == TaskKind::Comparison {
            return self.gen_comparison(rng, id);
        }
        let latent = self.draw_latent(rng);
        let features = self.render_features(rng, &latent);
        let truth = match task {
            TaskKind::Score => {
                let mos = if self.noisy(rng) {
                    rng.random_range(1.0..=5.0)
                } else {
                    mos_oracle(&latent)
                };
                GroundTruth::Mos(round2(mos))
            }
            _ => {
                let (c, s) = if self.noisy(rng) {
                    self.draw_degradation(rng)
                } else {
                    (latent.class, latent.severity)
                };
                debug_assert!(consistent_pair(c, s));
                GroundTruth::Deg(c, s)
            }
        };
        SyntheticSample {
            id,
            task,
            features,
            latent,
            features_b: None,
            latent_b: None,
            truth,
        }
    }

    /// Two images with shared content quality and independent degradations.
    pub fn gen_comparison<R: Rng + ?Sized>(&self, rng: &mut R, id: String) -> SyntheticSample {
        let latent = self.draw_latent(rng);
        let (class, severity) = self.draw_degradation(rng);
        let latent_b = Latent {
            class,
            severity,
            ..latent
        };
        let features = self.render_features(rng, &latent);
        let features_b = self.render_features(rng, &latent_b);
        let label = if self.noisy(rng) {
            ComparisonChoice::ALL[rng.random_range(0..3)]
        } else {
            comparison_label(mos_oracle(&latent), mos_oracle(&latent_b), self.cfg.comparison_margin)
        };
        SyntheticSample {
            id,
            task: TaskKind::Comparison,
            features,
            latent,
            features_b: Some(features_b),
            latent_b: Some(latent_b),
            truth: GroundTruth::Comp(label),
        }
    }

    /// Deterministic held-out set: `n` samples of `task` from a stream
    /// disjoint from the training streams.
    pub fn holdout(&self, task: TaskKind, n: usize, seed: u64) -> Vec<SyntheticSample> {
        let mut rng = derive_rng(seed, &[0xE7A1, task.index() as u64]);
        (0..n)
            .map(|i| self.gen_sample(&mut rng, task, format!("{task}-holdout-{i:06}")))
            .collect()
    }
}
