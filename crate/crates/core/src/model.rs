//! The system under study: token embeddings, a mean-pooled two-layer
//! tanh encoder, and three softmax heads sharing that encoder.
//!
//! Parameters live in one flat `Vec<f64>` addressed through a `Layout`,
//! so the optimizer, the gradient-projection strategy, and the
//! finite-difference checks all see plain vectors. All math is f64;
//! checkpoints narrow to f32 only on disk.
//!
//! Head indexing is fixed: 0 = veridical, 1 = lexical-relation (NLI),
//! 2 = compositional. Each head reads its own input sequence (the
//! matching probe, premise `[SEP]` hypothesis) through the shared
//! encoder.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::Label;
use crate::error::{Error, Result};
use crate::lexicon::SEP;
use crate::stream::Supervision;
use crate::synth::CompInstance;
use crate::util::mix_seed;

pub const HEAD_V: usize = 0;
pub const HEAD_N: usize = 1;
pub const HEAD_C: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnConfig {
    pub d_emb: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub init_range: f64,
    /// Use summed (not per-instance mean) loss reduction.
    pub sum_reduction: bool,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            d_emb: 32,
            hidden: 64,
            lr: 1e-3,
            batch: 8,
            init_range: 0.1,
            sum_reduction: false,
        }
    }
}

/// Closed token vocabulary. Unknown tokens are an error, never a bucket.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_dataset(dataset: &[CompInstance]) -> Vocab {
        let mut set: BTreeSet<&str> = BTreeSet::new();
        set.insert(SEP);
        for inst in dataset {
            for seq in [
                &inst.premise,
                &inst.hypothesis,
                &inst.ver.premise,
                &inst.ver.hypothesis,
                &inst.nli.premise,
                &inst.nli.hypothesis,
            ] {
                set.extend(seq.iter().map(String::as_str));
            }
        }
        Vocab::from_tokens(set.into_iter().map(str::to_string))
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Vocab {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            v.add(t);
        }
        v
    }

    pub fn add(&mut self, token: String) -> usize {
        if let Some(&i) = self.index.get(&token) {
            return i;
        }
        let i = self.tokens.len();
        self.index.insert(token.clone(), i);
        self.tokens.push(token);
        i
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Eval(format!("out-of-vocabulary token {token:?}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `premise [SEP] hypothesis` as ids.
    pub fn input_ids(&self, premise: &[String], hypothesis: &[String]) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(premise.len() + hypothesis.len() + 1);
        for t in premise {
            ids.push(self.id(t)?);
        }
        ids.push(self.id(SEP)?);
        for t in hypothesis {
            ids.push(self.id(t)?);
        }
        Ok(ids)
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub vocab: usize,
    pub d_emb: usize,
    pub hidden: usize,
    pub off_emb: usize,
    pub off_w1: usize,
    pub off_b1: usize,
    pub off_w2: usize,
    pub off_b2: usize,
    pub off_head_w: [usize; 3],
    pub off_head_b: [usize; 3],
    pub total: usize,
}

impl Layout {
    pub fn new(vocab: usize, d_emb: usize, hidden: usize) -> Layout {
        let off_emb = 0;
        let off_w1 = off_emb + vocab * d_emb;
        let off_b1 = off_w1 + hidden * d_emb;
        let off_w2 = off_b1 + hidden;
        let off_b2 = off_w2 + hidden * hidden;
        let mut cursor = off_b2 + hidden;
        let mut off_head_w = [0; 3];
        let mut off_head_b = [0; 3];
        for k in 0..3 {
            off_head_w[k] = cursor;
            cursor += 3 * hidden;
            off_head_b[k] = cursor;
            cursor += 3;
        }
        Layout {
            vocab,
            d_emb,
            hidden,
            off_emb,
            off_w1,
            off_b1,
            off_w2,
            off_b2,
            off_head_w,
            off_head_b,
            total: cursor,
        }
    }

    /// (name, shape, flat range) for every tensor, in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, std::ops::Range<usize>)> {
        let l = self;
        let names = ["w_v", "b_v", "w_n", "b_n", "w_c", "b_c"];
        let mut out = vec![
            (
                "emb",
                vec![l.vocab, l.d_emb],
                l.off_emb..l.off_emb + l.vocab * l.d_emb,
            ),
            (
                "w1",
                vec![l.hidden, l.d_emb],
                l.off_w1..l.off_w1 + l.hidden * l.d_emb,
            ),
            ("b1", vec![l.hidden], l.off_b1..l.off_b1 + l.hidden),
            (
                "w2",
                vec![l.hidden, l.hidden],
                l.off_w2..l.off_w2 + l.hidden * l.hidden,
            ),
            ("b2", vec![l.hidden], l.off_b2..l.off_b2 + l.hidden),
        ];
        for k in 0..3 {
            out.push((
                names[2 * k],
                vec![3, l.hidden],
                l.off_head_w[k]..l.off_head_w[k] + 3 * l.hidden,
            ));
            out.push((names[2 * k + 1], vec![3], l.off_head_b[k]..l.off_head_b[k] + 3));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: Layout,
    pub theta: Vec<f64>,
}

/// Intermediate activations of one encode, kept for backprop.
pub struct Cache {
    pub x: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

impl ModelParams {
    /// Uniform init in `[-init_range, init_range]` for embeddings and
    /// weights, zero biases. Deterministic per seed.
    pub fn init(layout: Layout, init_range: f64, seed: u64) -> ModelParams {
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, "init"));
        let mut theta = vec![0.0; layout.total];
        for (name, _, range) in layout.tensors() {
            if name.starts_with('b') {
                continue;
            }
            for i in range {
                theta[i] = rng.gen_range(-init_range..=init_range);
            }
        }
        ModelParams { layout, theta }
    }

    pub fn emb_row(&self, token_id: usize) -> &[f64] {
        let l = &self.layout;
        assert!(token_id < l.vocab, "token id {token_id} out of vocabulary");
        let start = l.off_emb + token_id * l.d_emb;
        &self.theta[start..start + l.d_emb]
    }

    /// Mean-pool embeddings, two tanh layers.
    pub fn encode(&self, ids: &[usize]) -> Cache {
        let l = &self.layout;
        assert!(!ids.is_empty(), "cannot encode an empty sequence");
        let mut x = vec![0.0; l.d_emb];
        for &id in ids {
            for (xi, e) in x.iter_mut().zip(self.emb_row(id)) {
                *xi += e;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for xi in &mut x {
            *xi *= inv;
        }

        let mut h1 = vec![0.0; l.hidden];
        for i in 0..l.hidden {
            let row = l.off_w1 + i * l.d_emb;
            let mut z = self.theta[l.off_b1 + i];
            for d in 0..l.d_emb {
                z += self.theta[row + d] * x[d];
            }
            h1[i] = z.tanh();
        }
        let mut h2 = vec![0.0; l.hidden];
        for i in 0..l.hidden {
            let row = l.off_w2 + i * l.hidden;
            let mut z = self.theta[l.off_b2 + i];
            for j in 0..l.hidden {
                z += self.theta[row + j] * h1[j];
            }
            h2[i] = z.tanh();
        }
        Cache { x, h1, h2 }
    }

    pub fn head_logits(&self, head: usize, h2: &[f64]) -> [f64; 3] {
        let l = &self.layout;
        let mut logits = [0.0; 3];
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = l.off_head_w[head] + c * l.hidden;
            let mut z = self.theta[l.off_head_b[head] + c];
            for j in 0..l.hidden {
                z += self.theta[row + j] * h2[j];
            }
            *logit = z;
        }
        logits
    }

    /// One sequence through the encoder and all three heads.
    pub fn forward(&self, ids: &[usize]) -> (Vec<f64>, [[f64; 3]; 3]) {
        let cache = self.encode(ids);
        let logits = [
            self.head_logits(HEAD_V, &cache.h2),
            self.head_logits(HEAD_N, &cache.h2),
            self.head_logits(HEAD_C, &cache.h2),
        ];
        (cache.h2, logits)
    }

    /// New params with `extra` embedding rows appended (freshly
    /// initialized, untrained); all other tensors are copied verbatim.
    pub fn with_extra_rows(&self, extra: usize, init_range: f64, seed: u64) -> ModelParams {
        let old = &self.layout;
        let layout = Layout::new(old.vocab + extra, old.d_emb, old.hidden);
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, "extend"));
        let mut theta = vec![0.0; layout.total];
        let old_emb = old.vocab * old.d_emb;
        theta[..old_emb].copy_from_slice(&self.theta[..old_emb]);
        for slot in theta
            .iter_mut()
            .take(layout.off_w1)
            .skip(old_emb)
        {
            *slot = rng.gen_range(-init_range..=init_range);
        }
        theta[layout.off_w1..].copy_from_slice(&self.theta[old.off_w1..]);
        ModelParams { layout, theta }
    }
}

/// One instance converted to per-head id sequences and gold codes.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Input ids per head: veridical probe, NLI probe, compositional pair.
    pub ids: [Vec<usize>; 3],
    pub golds: [Label; 3],
    /// Index of the source instance in its dataset, for provenance.
    pub src: usize,
}

pub fn prepare(vocab: &Vocab, inst: &CompInstance, src: usize) -> Result<Prepared> {
    Ok(Prepared {
        ids: [
            vocab.input_ids(&inst.ver.premise, &inst.ver.hypothesis)?,
            vocab.input_ids(&inst.nli.premise, &inst.nli.hypothesis)?,
            vocab.input_ids(&inst.premise, &inst.hypothesis)?,
        ],
        golds: [inst.ver.gold, inst.nli.gold, inst.gold_ci],
        src,
    })
}

pub fn softmax(logits: &[f64; 3]) -> [f64; 3] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = [
        (logits[0] - m).exp(),
        (logits[1] - m).exp(),
        (logits[2] - m).exp(),
    ];
    let z = exps[0] + exps[1] + exps[2];
    [exps[0] / z, exps[1] / z, exps[2] / z]
}

pub fn cross_entropy(logits: &[f64; 3], gold: Label) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    -(logits[gold.code()] - m - z)
}

/// Argmax with ties broken toward the lower label code.
pub fn argmax_label(logits: &[f64; 3]) -> Label {
    let mut best = 0;
    for c in 1..3 {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    Label::from_code(best).unwrap()
}

/// Soft-target distillation distance for one head pair: cross-entropy of
/// the student's softened distribution under the teacher's, minus the
/// teacher's entropy. Zero when the logits agree.
pub fn kd_head(teacher: &[f64; 3], student: &[f64; 3], tau: f64) -> f64 {
    let t = [teacher[0] / tau, teacher[1] / tau, teacher[2] / tau];
    let s = [student[0] / tau, student[1] / tau, student[2] / tau];
    let p = softmax(&t);
    let tm = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tz = t.iter().map(|l| (l - tm).exp()).sum::<f64>().ln();
    let sm = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sz = s.iter().map(|l| (l - sm).exp()).sum::<f64>().ln();
    let mut out = 0.0;
    for c in 0..3 {
        let ln_p = t[c] - tm - tz;
        let ln_q = s[c] - sm - sz;
        out += p[c] * (ln_p - ln_q);
    }
    out
}

/// Distillation distance summed over the three heads.
pub fn kd_loss(teacher: &[[f64; 3]; 3], student: &[[f64; 3]; 3], tau: f64) -> f64 {
    (0..3).map(|k| kd_head(&teacher[k], &student[k], tau)).sum()
}

fn supervised_heads(s: Supervision) -> &'static [usize] {
    match s {
        Supervision::Full => &[HEAD_V, HEAD_N, HEAD_C],
        Supervision::PrimOnly => &[HEAD_V, HEAD_N],
        Supervision::CompOnly => &[HEAD_C],
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub cr: f64,
    pub prim: f64,
}

impl LossParts {
    fn add_head(&mut self, head: usize, value: f64) {
        self.total += value;
        if head == HEAD_C {
            self.cr += value;
        } else {
            self.prim += value;
        }
    }
}

/// Backpropagate `dlogits` for one (input, head) through the shared
/// encoder into `grad`.
fn backprop_head(
    params: &ModelParams,
    ids: &[usize],
    cache: &Cache,
    head: usize,
    dlogits: &[f64; 3],
    grad: &mut [f64],
) {
    let l = &params.layout;
    let mut dh2 = vec![0.0; l.hidden];
    for c in 0..3 {
        let row = l.off_head_w[head] + c * l.hidden;
        grad[l.off_head_b[head] + c] += dlogits[c];
        for j in 0..l.hidden {
            grad[row + j] += dlogits[c] * cache.h2[j];
            dh2[j] += dlogits[c] * params.theta[row + j];
        }
    }
    let mut dh1 = vec![0.0; l.hidden];
    for i in 0..l.hidden {
        let dz2 = dh2[i] * (1.0 - cache.h2[i] * cache.h2[i]);
        if dz2 == 0.0 {
            continue;
        }
        let row = l.off_w2 + i * l.hidden;
        grad[l.off_b2 + i] += dz2;
        for j in 0..l.hidden {
            grad[row + j] += dz2 * cache.h1[j];
            dh1[j] += dz2 * params.theta[row + j];
        }
    }
    let mut dx = vec![0.0; l.d_emb];
    for i in 0..l.hidden {
        let dz1 = dh1[i] * (1.0 - cache.h1[i] * cache.h1[i]);
        if dz1 == 0.0 {
            continue;
        }
        let row = l.off_w1 + i * l.d_emb;
        grad[l.off_b1 + i] += dz1;
        for d in 0..l.d_emb {
            grad[row + d] += dz1 * cache.x[d];
            dx[d] += dz1 * params.theta[row + d];
        }
    }
    let inv = 1.0 / ids.len() as f64;
    for &id in ids {
        let start = l.off_emb + id * l.d_emb;
        for d in 0..l.d_emb {
            grad[start + d] += dx[d] * inv;
        }
    }
}

/// Cross-entropy loss of one instance on the supervised heads, scaled by
/// `scale`, with gradients accumulated into `grad` when provided.
pub fn accumulate_ce(
    params: &ModelParams,
    prep: &Prepared,
    supervision: Supervision,
    scale: f64,
    mut grad: Option<&mut [f64]>,
) -> LossParts {
    let mut parts = LossParts::default();
    for &head in supervised_heads(supervision) {
        let ids = &prep.ids[head];
        let cache = params.encode(ids);
        let logits = params.head_logits(head, &cache.h2);
        parts.add_head(head, scale * cross_entropy(&logits, prep.golds[head]));
        if let Some(grad) = grad.as_deref_mut() {
            let p = softmax(&logits);
            let mut dlogits = [0.0; 3];
            for c in 0..3 {
                let onehot = if c == prep.golds[head].code() { 1.0 } else { 0.0 };
                dlogits[c] = scale * (p[c] - onehot);
            }
            backprop_head(params, ids, &cache, head, &dlogits, grad);
        }
    }
    parts
}

/// Distillation loss of one instance against stored teacher logits, all
/// three heads, scaled by `scale`; gradients accumulated when provided.
pub fn accumulate_kd(
    params: &ModelParams,
    prep: &Prepared,
    teacher: &[[f64; 3]; 3],
    tau: f64,
    scale: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let mut total = 0.0;
    for head in 0..3 {
        let ids = &prep.ids[head];
        let cache = params.encode(ids);
        let logits = params.head_logits(head, &cache.h2);
        total += scale * kd_head(&teacher[head], &logits, tau);
        if let Some(grad) = grad.as_deref_mut() {
            let p = softmax(&[
                teacher[head][0] / tau,
                teacher[head][1] / tau,
                teacher[head][2] / tau,
            ]);
            let q = softmax(&[logits[0] / tau, logits[1] / tau, logits[2] / tau]);
            let mut dlogits = [0.0; 3];
            for c in 0..3 {
                dlogits[c] = scale * (q[c] - p[c]) / tau;
            }
            backprop_head(params, ids, &cache, head, &dlogits, grad);
        }
    }
    total
}

/// Joint loss over a batch. `sum_reduction` keeps the plain sum; the
/// default divides by the batch size.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[&Prepared],
    supervision: Supervision,
    sum_reduction: bool,
) -> LossParts {
    let scale = if sum_reduction {
        1.0
    } else {
        1.0 / batch.len().max(1) as f64
    };
    let mut parts = LossParts::default();
    for prep in batch {
        let p = accumulate_ce(params, prep, supervision, scale, None);
        parts.total += p.total;
        parts.cr += p.cr;
        parts.prim += p.prim;
    }
    parts
}

/// Joint loss and gradient over a batch.
pub fn batch_grad(
    params: &ModelParams,
    batch: &[&Prepared],
    supervision: Supervision,
    sum_reduction: bool,
    grad: &mut [f64],
) -> LossParts {
    let scale = if sum_reduction {
        1.0
    } else {
        1.0 / batch.len().max(1) as f64
    };
    let mut parts = LossParts::default();
    for prep in batch {
        let p = accumulate_ce(params, prep, supervision, scale, Some(grad));
        parts.total += p.total;
        parts.cr += p.cr;
        parts.prim += p.prim;
    }
    parts
}

/// Per-head argmax predictions: (veridical, NLI, compositional).
pub fn predict(params: &ModelParams, prep: &Prepared) -> [Label; 3] {
    let mut out = [Label::Entailment; 3];
    for head in 0..3 {
        let cache = params.encode(&prep.ids[head]);
        out[head] = argmax_label(&params.head_logits(head, &cache.h2));
    }
    out
}

/// Prediction of one head on a standalone probe input.
pub fn predict_probe(params: &ModelParams, ids: &[usize], head: usize) -> Label {
    let cache = params.encode(ids);
    argmax_label(&params.head_logits(head, &cache.h2))
}

/// All three heads' logits for an instance, for teacher stamping.
pub fn instance_logits(params: &ModelParams, prep: &Prepared) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for head in 0..3 {
        let cache = params.encode(&prep.ids[head]);
        out[head] = params.head_logits(head, &cache.h2);
    }
    out
}
