//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's reward, metric or forward-pass
//! code; the oracles work from structured inputs or from the raw parameter
//! layout.

#![allow(dead_code)]

use gql_core::policy::{PolicyDims, PolicyParams};
use gql_core::{ComparisonChoice, DegradationClass, GroundTruth, SeverityLevel};

/// How the tags and braces of a constructed response look.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Tags and braces in order.
    Good,
    /// Tags in order but the answer body has no braces.
    NoBraces,
    /// `</think>` missing.
    BrokenTags,
}

pub const SHAPES: [Shape; 3] = [Shape::Good, Shape::NoBraces, Shape::BrokenTags];

/// The payload of a constructed response. `None` fields are written as a
/// token outside the label vocabulary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    Rating(Option<f64>),
    Deg(Option<DegradationClass>, Option<SeverityLevel>),
    Comp(Option<ComparisonChoice>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constructed {
    pub shape: Shape,
    pub payload: Payload,
}

fn class_text(c: Option<DegradationClass>) -> &'static str {
    match c {
        Some(DegradationClass::Noise) => "noise",
        Some(DegradationClass::Blur) => "blur",
        Some(DegradationClass::Jpeg) => "jpeg",
        Some(DegradationClass::Darken) => "darken",
        Some(DegradationClass::Null) => "null",
        None => "sharpness",
    }
}

fn severity_text(s: Option<SeverityLevel>) -> &'static str {
    match s {
        Some(SeverityLevel::Slight) => "slight",
        Some(SeverityLevel::Moderate) => "moderate",
        Some(SeverityLevel::Obvious) => "obvious",
        Some(SeverityLevel::Serious) => "serious",
        Some(SeverityLevel::Catastrophic) => "catastrophic",
        Some(SeverityLevel::Null) => "null",
        None => "mild",
    }
}

fn choice_text(c: Option<ComparisonChoice>) -> &'static str {
    match c {
        Some(ComparisonChoice::A) => "Image A",
        Some(ComparisonChoice::B) => "Image B",
        Some(ComparisonChoice::Similar) => "Similar",
        None => "Image C",
    }
}

impl Constructed {
    pub fn text(&self) -> String {
        let inner = match self.payload {
            Payload::Rating(Some(v)) => format!("\"rating\": {v}"),
            Payload::Rating(None) => "\"rating\": high".to_string(),
            Payload::Deg(c, s) => format!(
                "\"distortion_class\": \"{}\", \"severity\": \"{}\"",
                class_text(c),
                severity_text(s)
            ),
            Payload::Comp(c) => format!("\"choice\": \"{}\"", choice_text(c)),
        };
        match self.shape {
            Shape::Good => format!("<think>looks fine</think><answer>{{{inner}}}</answer>"),
            Shape::NoBraces => format!("<think>looks fine</think><answer>{inner}</answer>"),
            Shape::BrokenTags => format!("<think>looks fine<answer>{{{inner}}}</answer>"),
        }
    }
}

/// Reward components and total, `(fmt, scr, deg, lev, comp, total)`.
pub type OracleRewards = (u8, u8, u8, u8, u8, f64);

/// Straight-line reward rules evaluated on the structured description.
pub fn oracle_rewards(r: &Constructed, truth: &GroundTruth, eps: f64, alpha1: f64, alpha2: f64) -> OracleRewards {
    let fmt = u8::from(r.shape == Shape::Good);
    let readable = r.shape != Shape::BrokenTags;
    let (mut scr, mut deg, mut lev, mut comp) = (0u8, 0u8, 0u8, 0u8);
    if readable {
        match (r.payload, *truth) {
            (Payload::Rating(Some(p)), GroundTruth::Mos(g)) => {
                let hit = if eps == 0.0 { p == g } else { (p - g).abs() < eps };
                scr = u8::from(hit);
            }
            (Payload::Deg(Some(c), Some(s)), GroundTruth::Deg(gc, gs)) => {
                let null_c = c == DegradationClass::Null;
                let null_s = s == SeverityLevel::Null;
                if null_c == null_s {
                    deg = u8::from(c == gc);
                    lev = u8::from(c == gc && s == gs);
                }
            }
            (Payload::Comp(Some(c)), GroundTruth::Comp(g)) => comp = u8::from(c == g),
            _ => {}
        }
    }
    let total = match truth {
        GroundTruth::Mos(_) => fmt as f64 + scr as f64,
        GroundTruth::Deg(..) => fmt as f64 + alpha1 * deg as f64 + alpha2 * lev as f64,
        GroundTruth::Comp(_) => fmt as f64 + comp as f64,
    };
    (fmt, scr, deg, lev, comp, total)
}

pub fn all_degradation_truths() -> Vec<GroundTruth> {
    let mut v = vec![GroundTruth::Deg(DegradationClass::Null, SeverityLevel::Null)];
    for c in DegradationClass::DISTORTED {
        for s in SeverityLevel::RANKED {
            v.push(GroundTruth::Deg(c, s));
        }
    }
    v
}

/// Every degradation prediction: (5 classes + unknown) × (6 severities + unknown) × 3 shapes.
pub fn all_degradation_responses() -> Vec<Constructed> {
    let classes: Vec<Option<DegradationClass>> =
        DegradationClass::ALL.iter().copied().map(Some).chain([None]).collect();
    let sevs: Vec<Option<SeverityLevel>> = SeverityLevel::ALL.iter().copied().map(Some).chain([None]).collect();
    let mut v = Vec::new();
    for shape in SHAPES {
        for c in &classes {
            for s in &sevs {
                v.push(Constructed {
                    shape,
                    payload: Payload::Deg(*c, *s),
                });
            }
        }
    }
    v
}

pub fn all_comparison_responses() -> Vec<Constructed> {
    let mut v = Vec::new();
    for shape in SHAPES {
        for c in ComparisonChoice::ALL.iter().copied().map(Some).chain([None]) {
            v.push(Constructed {
                shape,
                payload: Payload::Comp(c),
            });
        }
    }
    v
}

/// Textbook Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Mid-ranks by counting, O(n²).
pub fn count_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let below = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&count_ranks(x), &count_ranks(y))
}

/// Per-position log-softmax read directly from the flat parameter vector
/// (segments `enc_w`, `enc_b`, `head_w`, `head_b`, `embed`, row-major).
pub fn oracle_log_probs(params: &PolicyParams, ctx: &[f64], tokens: &[usize]) -> Vec<Vec<f64>> {
    let PolicyDims {
        context: f,
        hidden: h,
        embed: e,
        max_len: l,
        vocab: v,
    } = params.dims();
    let p = params.as_slice();
    let enc_w = &p[..h * f];
    let enc_b = &p[h * f..h * f + h];
    let head_w0 = h * f + h;
    let head_b0 = head_w0 + l * v * (h + e);
    let embed0 = head_b0 + l * v;
    assert_eq!(embed0 + v * e, p.len());

    let hid: Vec<f64> = (0..h)
        .map(|j| (enc_b[j] + (0..f).map(|k| enc_w[j * f + k] * ctx[k]).sum::<f64>()).tanh())
        .collect();
    let mut out = Vec::new();
    for t in 0..tokens.len() {
        let mut mean = vec![0.0; e];
        for &tok in &tokens[..t] {
            for k in 0..e {
                mean[k] += p[embed0 + tok * e + k] / t as f64;
            }
        }
        let input: Vec<f64> = hid.iter().chain(mean.iter()).copied().collect();
        let logits: Vec<f64> = (0..v)
            .map(|y| {
                let row = head_w0 + (t * v + y) * (h + e);
                p[head_b0 + t * v + y] + (0..h + e).map(|k| p[row + k] * input[k]).sum::<f64>()
            })
            .collect();
        let z: f64 = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        out.push(logits.iter().map(|x| x - z).collect());
    }
    out
}

/// Σ_t Σ_v π(v) ln(π(v)/π_ref(v)) along the given prefix positions.
pub fn brute_force_kl(new: &PolicyParams, reference: &PolicyParams, ctx: &[f64], tokens: &[usize]) -> f64 {
    let a = oracle_log_probs(new, ctx, tokens);
    let b = oracle_log_probs(reference, ctx, tokens);
    let mut kl = 0.0;
    for (pa, pb) in a.iter().zip(&b) {
        for (x, y) in pa.iter().zip(pb) {
            kl += x.exp() * (x - y);
        }
    }
    kl
}

/// Central difference of `f` along every coordinate of `params`.
pub fn numeric_grad(params: &PolicyParams, step: f64, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.as_slice().len())
        .map(|i| {
            let x = p.as_slice()[i];
            p.as_mut_slice()[i] = x + step;
            let up = f(&p);
            p.as_mut_slice()[i] = x - step;
            let down = f(&p);
            p.as_mut_slice()[i] = x;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − n‖∞ / max(‖n‖∞, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(floor, f64::max);
    diff / scale
}
