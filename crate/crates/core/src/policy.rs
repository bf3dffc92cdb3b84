//! Toy autoregressive token policy.
//!
//! ```text
//! h       = tanh(W_enc · ctx + b_enc)
//! m_t     = mean(embed[y_0..y_{t-1}])        (zero at t = 0)
//! logit_t = W_t · [h ; m_t] + b_t            (one head per position)
//! ```
//!
//! Log-probabilities are exact and gradients are closed-form, which is all
//! the optimizer needs. Token 0 is always `<eos>`.

use crate::env::FeatureNorm;
use crate::labels::{ComparisonChoice, DegradationClass, SeverityLevel, TaskKind};
use crate::vocab::{Vocabulary, EOS};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

pub const EOS_ID: usize = 0;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    #[serde(rename = "F")]
    pub context: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(rename = "E")]
    pub embed: usize,
    #[serde(rename = "L")]
    pub max_len: usize,
    #[serde(rename = "V")]
    pub vocab: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        Self {
            context: 16 + TaskKind::ALL.len(),
            hidden: 32,
            embed: 16,
            max_len: 16,
            vocab: 48,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    enc_w: usize,
    enc_b: usize,
    head_w: usize,
    head_b: usize,
    embed: usize,
    total: usize,
}

impl PolicyDims {
    fn layout(&self) -> Layout {
        let d = self.hidden + self.embed;
        let enc_w = 0;
        let enc_b = enc_w + self.hidden * self.context;
        let head_w = enc_b + self.hidden;
        let head_b = head_w + self.max_len * self.vocab * d;
        let embed = head_b + self.max_len * self.vocab;
        let total = embed + self.vocab * self.embed;
        Layout {
            enc_w,
            enc_b,
            head_w,
            head_b,
            embed,
            total,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn head_input(&self) -> usize {
        self.hidden + self.embed
    }

    pub fn validate(&self) -> Result<()> {
        if self.context == 0 || self.hidden == 0 || self.embed == 0 || self.max_len == 0 || self.vocab < 2 {
            return Err(Error::Config(format!("degenerate policy dimensions {self:?}")));
        }
        Ok(())
    }
}

/// Named arrays in checkpoint order.
const ARRAY_NAMES: [&str; 5] = ["enc_w", "enc_b", "head_w", "head_b", "embed"];

/// Live parameters of the policy. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dims: PolicyDims,
    data: Vec<f64>,
}

/// Sequence of vocabulary indices, ended by `<eos>` or by reaching `L`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<usize>);

impl Deref for TokenSeq {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub tokens: TokenSeq,
    pub token_log_probs: Vec<f64>,
    pub log_prob: f64,
}

/// Forward activations along one token sequence.
#[derive(Debug, Clone)]
pub struct Trace {
    pub(crate) h: Vec<f64>,
    pub(crate) inputs: Vec<Vec<f64>>,
    pub(crate) log_probs: Vec<Vec<f64>>,
}

impl Trace {
    /// Log-softmax over the vocabulary at each emitted position.
    pub fn log_probs(&self) -> &[Vec<f64>] {
        &self.log_probs
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PolicyParams {
    pub fn zeros(dims: PolicyDims) -> Self {
        Self {
            data: vec![0.0; dims.param_count()],
            dims,
        }
    }

    /// Weights from N(0, scale²), biases zero.
    pub fn random<R: Rng + ?Sized>(dims: PolicyDims, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let l = dims.layout();
        for range in [l.enc_w..l.enc_b, l.head_w..l.head_b, l.embed..l.total] {
            for x in &mut p.data[range] {
                *x = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn axpy(&mut self, alpha: f64, other: &PolicyParams) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    fn array_ranges(&self) -> [(&'static str, std::ops::Range<usize>); 5] {
        let l = self.dims.layout();
        [
            (ARRAY_NAMES[0], l.enc_w..l.enc_b),
            (ARRAY_NAMES[1], l.enc_b..l.head_w),
            (ARRAY_NAMES[2], l.head_w..l.head_b),
            (ARRAY_NAMES[3], l.head_b..l.embed),
            (ARRAY_NAMES[4], l.embed..l.total),
        ]
    }

    /// Index of the output-bias entry for (`position`, `token`).
    pub fn head_bias_index(&self, position: usize, token: usize) -> usize {
        self.dims.layout().head_b + position * self.dims.vocab + token
    }

    /// Raises by `strength` nats the logit of every token that is legal at
    /// its slot of the canonical layouts
    ///
    /// ```text
    /// <think> w w </think> <answer> { "rating": d . d d } </answer> <eos>
    /// <think> w w </think> <answer> { "distortion_class": c , "severity": s } </answer> <eos>
    /// <think> w w </think> <answer> { "choice": x } </answer> <eos>
    /// ```
    ///
    /// Task-independent slots go into the output biases. Hidden unit `i`
    /// is rewired to follow the one-hot slot of task `i` alone, and the
    /// task-specific slots go into head weights on that unit, so the boost
    /// applies only to queries of that task. Positions beyond `L` are skipped.
    pub fn apply_template_prior(&mut self, vocab: &Vocabulary, strength: f64) -> Result<()> {
        let d = self.dims;
        if vocab.len() != d.vocab {
            return Err(Error::Config("vocabulary size does not match the policy".into()));
        }
        let n_tasks = TaskKind::ALL.len();
        if d.hidden < n_tasks || d.context < n_tasks {
            return Err(Error::Config(format!(
                "the template prior needs H and F of at least {n_tasks}"
            )));
        }
        let slots = template_slots(vocab)?;
        let l = d.layout();
        let di = d.head_input();
        for (pos, ids) in &slots.shared {
            if *pos >= d.max_len {
                continue;
            }
            for &id in ids {
                let i = self.head_bias_index(*pos, id);
                self.data[i] += strength;
            }
        }
        let gate = TASK_GATE_GAIN.tanh();
        for task in TaskKind::ALL {
            let unit = task.index();
            let row = l.enc_w + unit * d.context;
            self.data[row..row + d.context].fill(0.0);
            self.data[row + d.context - n_tasks + unit] = TASK_GATE_GAIN;
            self.data[l.enc_b + unit] = 0.0;
            for (pos, ids) in &slots.per_task[unit] {
                if *pos >= d.max_len {
                    continue;
                }
                for &id in ids {
                    self.data[l.head_w + (pos * d.vocab + id) * di + unit] += strength / gate;
                }
            }
        }
        Ok(())
    }

    fn hidden(&self, ctx: &[f64]) -> Vec<f64> {
        let d = self.dims;
        let l = d.layout();
        (0..d.hidden)
            .map(|j| {
                let row = &self.data[l.enc_w + j * d.context..l.enc_w + (j + 1) * d.context];
                (dot(row, ctx) + self.data[l.enc_b + j]).tanh()
            })
            .collect()
    }

    fn logits(&self, t: usize, z: &[f64]) -> Vec<f64> {
        let d = self.dims;
        let l = d.layout();
        let di = d.head_input();
        let w0 = l.head_w + t * d.vocab * di;
        let b0 = l.head_b + t * d.vocab;
        (0..d.vocab)
            .map(|v| dot(&self.data[w0 + v * di..w0 + (v + 1) * di], z) + self.data[b0 + v])
            .collect()
    }

    fn head_input(&self, h: &[f64], emb_sum: &[f64], t: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(h.len() + emb_sum.len());
        z.extend_from_slice(h);
        if t == 0 {
            z.extend(std::iter::repeat_n(0.0, emb_sum.len()));
        } else {
            let inv = 1.0 / t as f64;
            z.extend(emb_sum.iter().map(|e| e * inv));
        }
        z
    }

    fn add_embedding(&self, emb_sum: &mut [f64], token: usize) {
        let d = self.dims;
        let e0 = d.layout().embed + token * d.embed;
        for (s, e) in emb_sum.iter_mut().zip(&self.data[e0..e0 + d.embed]) {
            *s += e;
        }
    }

    fn check_ctx(&self, ctx: &[f64]) -> Result<()> {
        if ctx.len() != self.dims.context {
            return Err(Error::Config(format!(
                "context has dimension {}, policy expects {}",
                ctx.len(),
                self.dims.context
            )));
        }
        Ok(())
    }

    /// Valid sequences have `1..=L` in-vocabulary tokens with `<eos>` at most once, last.
    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        let d = self.dims;
        if tokens.is_empty() || tokens.len() > d.max_len {
            return Err(Error::Config(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                d.max_len
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= d.vocab) {
            return Err(Error::Config(format!("token {bad} outside vocabulary of {}", d.vocab)));
        }
        if tokens[..tokens.len() - 1].contains(&EOS_ID) {
            return Err(Error::Config("<eos> before the end of the sequence".into()));
        }
        Ok(())
    }

    /// Forward pass along `tokens` (assumed valid).
    pub fn trace(&self, ctx: &[f64], tokens: &[usize]) -> Trace {
        let h = self.hidden(ctx);
        let mut emb_sum = vec![0.0; self.dims.embed];
        let mut inputs = Vec::with_capacity(tokens.len());
        let mut log_probs = Vec::with_capacity(tokens.len());
        for (t, &tok) in tokens.iter().enumerate() {
            let z = self.head_input(&h, &emb_sum, t);
            log_probs.push(log_softmax(&self.logits(t, &z)));
            inputs.push(z);
            self.add_embedding(&mut emb_sum, tok);
        }
        Trace { h, inputs, log_probs }
    }

    /// Exact log-probability of `tokens` given `ctx`.
    pub fn sequence_log_prob(&self, ctx: &[f64], tokens: &[usize]) -> f64 {
        let tr = self.trace(ctx, tokens);
        tokens.iter().zip(&tr.log_probs).map(|(&y, lp)| lp[y]).sum()
    }

    /// Draws one response at temperature 1.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, ctx: &[f64], rng: &mut R) -> Result<SampledSequence> {
        self.check_ctx(ctx)?;
        self.decode(ctx, |lp| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (v, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    return v;
                }
            }
            lp.len() - 1
        })
    }

    /// Most likely token at every step. Evaluation only.
    pub fn greedy_sequence(&self, ctx: &[f64]) -> Result<SampledSequence> {
        self.check_ctx(ctx)?;
        self.decode(ctx, |lp| {
            let mut best = 0;
            for (v, l) in lp.iter().enumerate() {
                if *l > lp[best] {
                    best = v;
                }
            }
            best
        })
    }

    fn decode(&self, ctx: &[f64], mut pick: impl FnMut(&[f64]) -> usize) -> Result<SampledSequence> {
        let h = self.hidden(ctx);
        let mut emb_sum = vec![0.0; self.dims.embed];
        let mut tokens = Vec::new();
        let mut token_log_probs = Vec::new();
        for t in 0..self.dims.max_len {
            let z = self.head_input(&h, &emb_sum, t);
            let logits = self.logits(t, &z);
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::NonFinite(format!("non-finite logits at position {t}")));
            }
            let lp = log_softmax(&logits);
            let tok = pick(&lp);
            tokens.push(tok);
            token_log_probs.push(lp[tok]);
            if tok == EOS_ID {
                break;
            }
            self.add_embedding(&mut emb_sum, tok);
        }
        let log_prob = token_log_probs.iter().sum();
        Ok(SampledSequence {
            tokens: TokenSeq(tokens),
            token_log_probs,
            log_prob,
        })
    }

    /// Accumulates `Σ_t dlogits[t] · ∂logit_t/∂θ` into `grad`.
    pub(crate) fn backprop(
        &self,
        ctx: &[f64],
        tokens: &[usize],
        tr: &Trace,
        dlogits: &[Vec<f64>],
        grad: &mut PolicyParams,
    ) {
        let d = self.dims;
        let l = d.layout();
        let di = d.head_input();
        let g = &mut grad.data;
        let mut dh = vec![0.0; d.hidden];
        let mut dm: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
        for (t, dl) in dlogits.iter().enumerate() {
            let z = &tr.inputs[t];
            let w0 = l.head_w + t * d.vocab * di;
            let b0 = l.head_b + t * d.vocab;
            let mut dz = vec![0.0; di];
            for (v, &c) in dl.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                g[b0 + v] += c;
                let row = w0 + v * di;
                for k in 0..di {
                    g[row + k] += c * z[k];
                    dz[k] += c * self.data[row + k];
                }
            }
            for k in 0..d.hidden {
                dh[k] += dz[k];
            }
            dm.push(dz.split_off(d.hidden));
        }
        // token j feeds the mean at every later position t with weight 1/t
        let mut acc = vec![0.0; d.embed];
        for t in (1..dlogits.len()).rev() {
            let inv = 1.0 / t as f64;
            for (a, x) in acc.iter_mut().zip(&dm[t]) {
                *a += x * inv;
            }
            let e0 = l.embed + tokens[t - 1] * d.embed;
            for (k, a) in acc.iter().enumerate() {
                g[e0 + k] += a;
            }
        }
        for j in 0..d.hidden {
            let dpre = dh[j] * (1.0 - tr.h[j] * tr.h[j]);
            if dpre == 0.0 {
                continue;
            }
            g[l.enc_b + j] += dpre;
            let row = l.enc_w + j * d.context;
            for (k, c) in ctx.iter().enumerate() {
                g[row + k] += dpre * c;
            }
        }
    }

    /// `d/dθ log π(tokens | ctx)`.
    pub fn log_prob_grad(&self, ctx: &[f64], tokens: &[usize]) -> PolicyParams {
        let tr = self.trace(ctx, tokens);
        let dlogits: Vec<Vec<f64>> = tokens
            .iter()
            .zip(&tr.log_probs)
            .map(|(&y, lp)| {
                let mut g: Vec<f64> = lp.iter().map(|l| -l.exp()).collect();
                g[y] += 1.0;
                g
            })
            .collect();
        let mut grad = self.zeros_like();
        self.backprop(ctx, tokens, &tr, &dlogits, &mut grad);
        grad
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(Arc::new(self.clone()))
    }

    pub fn to_checkpoint(&self, vocab: &Vocabulary) -> Checkpoint {
        let arrays = self
            .array_ranges()
            .into_iter()
            .map(|(name, r)| (name.to_string(), self.data[r].to_vec()))
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            vocab: vocab.tokens().to_vec(),
            arrays,
        }
    }

    /// Rebuilds parameters, checking version, shapes and vocabulary.
    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: &Vocabulary) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        ckpt.dims.validate()?;
        if ckpt.vocab != vocab.tokens() {
            return Err(Error::Config(
                "checkpoint vocabulary differs from the expected vocabulary".into(),
            ));
        }
        if ckpt.dims.vocab != vocab.len() {
            return Err(Error::Config("checkpoint V does not match its vocabulary".into()));
        }
        let mut p = Self::zeros(ckpt.dims);
        if ckpt.arrays.len() != ARRAY_NAMES.len() {
            return Err(Error::Config("checkpoint has unexpected arrays".into()));
        }
        for (name, r) in p.array_ranges() {
            let a = ckpt
                .arrays
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks array {name}")))?;
            if a.len() != r.len() {
                return Err(Error::Config(format!(
                    "array {name} has {} entries, dims imply {}",
                    a.len(),
                    r.len()
                )));
            }
            p.data[r].copy_from_slice(a);
        }
        if !p.is_finite() {
            return Err(Error::Config("checkpoint holds non-finite values".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        let bytes = serde_json::to_vec(&self.to_checkpoint(vocab)).expect("checkpoint serializes");
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ckpt, vocab)
    }
}

/// Frozen copy of the parameters, cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Snapshot(Arc<PolicyParams>);

impl Deref for Snapshot {
    type Target = PolicyParams;
    fn deref(&self) -> &PolicyParams {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: PolicyDims,
    pub vocab: Vec<String>,
    pub arrays: BTreeMap<String, Vec<f64>>,
}

/// Pre-activation of the task-gate hidden units set by the template prior.
pub const TASK_GATE_GAIN: f64 = 3.0;

/// Token ids favoured at each position by [`PolicyParams::apply_template_prior`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSlots {
    pub shared: Vec<(usize, Vec<usize>)>,
    /// Indexed by [`TaskKind::index`].
    pub per_task: [Vec<(usize, Vec<usize>)>; 3],
}

impl TemplateSlots {
    /// Tokens favoured at `pos` for queries of `task`.
    pub fn allowed(&self, task: TaskKind, pos: usize) -> Vec<usize> {
        self.shared
            .iter()
            .chain(&self.per_task[task.index()])
            .filter(|(p, _)| *p == pos)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect()
    }
}

pub fn template_slots(vocab: &Vocabulary) -> Result<TemplateSlots> {
    let digits: Vec<String> = (0..10).map(|d| d.to_string()).collect();
    let digits: Vec<&str> = digits.iter().map(String::as_str).collect();
    let classes: Vec<&str> = DegradationClass::ALL.iter().map(|c| c.name()).collect();
    let levels: Vec<&str> = SeverityLevel::ALL.iter().map(|s| s.name()).collect();
    let choices: Vec<&str> = ComparisonChoice::ALL.iter().map(|c| c.answer_text()).collect();
    let fillers: Vec<&str> = vocab
        .tokens()
        .iter()
        .enumerate()
        .filter(|(i, _)| vocab.surface(*i).ends_with(' '))
        .map(|(_, t)| t.as_str())
        .collect();
    let ids = |slots: Vec<(usize, Vec<&str>)>| -> Result<Vec<(usize, Vec<usize>)>> {
        slots
            .into_iter()
            .map(|(pos, toks)| {
                let mut v: Vec<usize> = toks
                    .iter()
                    .map(|t| {
                        vocab
                            .id(t)
                            .ok_or_else(|| Error::Config(format!("vocabulary lacks {t}")))
                    })
                    .collect::<Result<_>>()?;
                v.sort_unstable();
                v.dedup();
                Ok((pos, v))
            })
            .collect()
    };
    Ok(TemplateSlots {
        shared: ids(vec![
            (0, vec!["<think>"]),
            (1, fillers.clone()),
            (2, fillers),
            (3, vec!["</think>"]),
            (4, vec!["<answer>"]),
            (5, vec!["{"]),
            (11, vec!["}"]),
            (12, vec!["</answer>"]),
            (13, vec![EOS]),
        ])?,
        per_task: [
            ids(vec![
                (6, vec!["\"rating\":"]),
                (7, digits.clone()),
                (8, vec!["."]),
                (9, digits.clone()),
                (10, digits),
            ])?,
            ids(vec![
                (6, vec!["\"distortion_class\":"]),
                (7, classes),
                (8, vec![","]),
                (9, vec!["\"severity\":"]),
                (10, levels),
            ])?,
            ids(vec![
                (6, vec!["\"choice\":"]),
                (7, choices),
                (8, vec!["}"]),
                (9, vec!["</answer>"]),
                (10, vec![EOS]),
            ])?,
        ],
    })
}

/// Policy input: standardized features (difference of the pair for a
/// comparison) followed by a one-hot task indicator.
pub fn encode_context(
    features: &[f64],
    features_b: Option<&[f64]>,
    task: TaskKind,
    norm: &FeatureNorm,
) -> Result<Vec<f64>> {
    let dim = norm.mean.len();
    let bad = |n: usize| Error::Config(format!("feature vector has dimension {n}, expected {dim}"));
    if features.len() != dim {
        return Err(bad(features.len()));
    }
    let mut ctx = norm.apply(features);
    if let Some(fb) = features_b {
        if fb.len() != dim {
            return Err(bad(fb.len()));
        }
        for (c, b) in ctx.iter_mut().zip(norm.apply(fb)) {
            *c -= b;
        }
    }
    let mut onehot = [0.0; 3];
    onehot[task.index()] = 1.0;
    ctx.extend_from_slice(&onehot);
    Ok(ctx)
}
