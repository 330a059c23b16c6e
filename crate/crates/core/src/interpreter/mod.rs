//! Label interpretation: the word-to-type correlation matrix and every loss
//! defined on it.
//!
//! Row `y` of the matrix scores how strongly each vocabulary token indicates
//! label `y`. A column softmax turns column `w` into p(y | w), and a token
//! distribution at the typing mask is mapped to labels by
//! `p(y | h) = Σ_w p(y | w) p(w | h)`.

mod adam;
mod checkpoint;
mod grad;

use std::collections::BTreeSet;

use crate::backend::{TokenId, TokenProvider};
use crate::error::{Error, Result};
use crate::hierarchy::{LabelHierarchy, LabelPath};

pub use self::adam::AdamState;
pub use self::checkpoint::{BestSnapshot, Checkpoint, CHECKPOINT_VERSION};
pub use self::grad::{loss_and_grad, loss_value, Batch, LabeledExample, LossBreakdown, LossWeights, SoftExample};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Trainable |labels| × |vocab| matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    labels: Vec<LabelPath>,
    vocab_size: usize,
    data: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn from_parts(labels: Vec<LabelPath>, vocab_size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != labels.len() * vocab_size {
            return Err(Error::Contract(format!(
                "matrix data has {} values, expected {}×{}",
                data.len(),
                labels.len(),
                vocab_size
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("matrix contains non-finite values".into()));
        }
        Ok(Self { labels, vocab_size, data })
    }

    pub fn zeros(labels: Vec<LabelPath>, vocab_size: usize) -> Self {
        let n = labels.len() * vocab_size;
        Self { labels, vocab_size, data: vec![0.0; n] }
    }

    /// Label-name initialization. `name_ids[y]` holds the distinct token ids
    /// of label `y`'s names; with `n = |name_ids[y]|`, name entries get
    /// `(1-α)/n + α/(|V|-n)` and every other entry `α/(|V|-n)`. A label
    /// without name tokens gets the uniform row `α/|V|`.
    pub fn init_with_names(
        labels: Vec<LabelPath>,
        vocab_size: usize,
        name_ids: &[BTreeSet<TokenId>],
        alpha: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if name_ids.len() != labels.len() {
            return Err(Error::Contract("one name set per label required".into()));
        }
        let mut m = Self::zeros(labels, vocab_size);
        for (y, names) in name_ids.iter().enumerate() {
            let n = names.len();
            if n >= vocab_size && n > 0 {
                return Err(Error::Config(format!("label {} names cover the whole vocabulary", m.labels[y])));
            }
            let base = alpha / (vocab_size - n) as f64;
            let row = m.row_mut(y);
            row.fill(base);
            for &w in names {
                if w >= vocab_size {
                    return Err(Error::Contract(format!("name token {w} outside vocabulary")));
                }
                row[w] = (1.0 - alpha) / n as f64 + base;
            }
        }
        Ok(m)
    }

    /// Resolves label names through the provider's tokenizer, then
    /// initializes. Names that tokenize to special tokens (e.g. unknown
    /// characters) are dropped with a warning.
    pub fn init(h: &LabelHierarchy, provider: &dyn TokenProvider, alpha: f64) -> Result<Self> {
        let name_ids = resolve_names(h, provider)?;
        Self::init_with_names(h.labels().to_vec(), provider.vocab().len(), &name_ids, alpha)
    }

    pub fn labels(&self) -> &[LabelPath] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, w: TokenId) -> f64 {
        self.data[y * self.vocab_size + w]
    }

    pub fn set(&mut self, y: usize, w: TokenId, v: f64) {
        self.data[y * self.vocab_size + w] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.vocab_size..(y + 1) * self.vocab_size]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [f64] {
        &mut self.data[y * self.vocab_size..(y + 1) * self.vocab_size]
    }

    /// p(y | w) for one token: softmax over column `w`.
    pub fn word_to_type(&self, w: TokenId) -> Vec<f64> {
        let col: Vec<f64> = (0..self.n_labels()).map(|y| self.get(y, w)).collect();
        softmax(&col)
    }

    /// All of p(y | w) at once, laid out like the matrix.
    pub fn column_softmax(&self) -> Vec<f64> {
        let (l, v) = (self.n_labels(), self.vocab_size);
        let mut out = vec![0.0; l * v];
        for w in 0..v {
            let max = (0..l).map(|y| self.data[y * v + w]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for y in 0..l {
                let e = (self.data[y * v + w] - max).exp();
                out[y * v + w] = e;
                z += e;
            }
            for y in 0..l {
                out[y * v + w] /= z;
            }
        }
        out
    }

    /// Label distribution for a token distribution.
    pub fn map_to_labels(&self, token_probs: &[f64]) -> Vec<f64> {
        map_with(&self.column_softmax(), self.n_labels(), token_probs)
    }

    /// Index of the most probable label; ties go to the lowest index, which
    /// is the lexicographically smallest path.
    pub fn predict_index(&self, token_probs: &[f64]) -> usize {
        argmax(&self.map_to_labels(token_probs))
    }
}

/// `p(y | h)` given precomputed column softmaxes `p_yw` (|labels| × |V|).
pub fn map_with(p_yw: &[f64], n_labels: usize, token_probs: &[f64]) -> Vec<f64> {
    let v = token_probs.len();
    debug_assert_eq!(p_yw.len(), n_labels * v);
    (0..n_labels).map(|y| p_yw[y * v..(y + 1) * v].iter().zip(token_probs).map(|(p, d)| p * d).sum()).collect()
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Token ids of each label's names, in label order.
pub fn resolve_names(h: &LabelHierarchy, provider: &dyn TokenProvider) -> Result<Vec<BTreeSet<TokenId>>> {
    let vocab = provider.vocab();
    let mut out = Vec::with_capacity(h.len());
    for y in 0..h.len() {
        let mut ids = BTreeSet::new();
        for name in h.names(y) {
            let toks = provider.tokenize(name)?;
            if toks.is_empty() || toks.iter().any(|&t| vocab.is_special(t)) {
                log::warn!("label {}: name {name:?} has no usable tokens; dropped", h.label(y));
                continue;
            }
            ids.extend(toks);
        }
        if ids.is_empty() {
            log::warn!("label {} has no resolvable names; using a uniform row", h.label(y));
        }
        out.push(ids);
    }
    Ok(out)
}

/// Cosine similarity; 0 when either vector has zero norm. Identical
/// vectors give exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let aa = a.iter().map(|x| x * x).sum::<f64>();
    let bb = b.iter().map(|x| x * x).sum::<f64>();
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (aa * bb).sqrt()
}

/// Σ over labels with a parent of `1 - cos(child row, parent row)`.
pub fn inclusive_loss(u: &CorrelationMatrix, h: &LabelHierarchy) -> f64 {
    h.parent_edges().into_iter().map(|(c, p)| 1.0 - cosine(u.row(c), u.row(p))).sum()
}

/// Σ over unordered sibling pairs of `cos(row a, row b)`.
pub fn exclusive_loss(u: &CorrelationMatrix, h: &LabelHierarchy) -> f64 {
    h.sibling_pairs().into_iter().map(|(a, b)| cosine(u.row(a), u.row(b))).sum()
}

/// `-ln pred[gold]`, floored.
pub fn ce_loss(pred: &[f64], gold: usize) -> f64 {
    -pred[gold].max(PROB_FLOOR).ln()
}

/// KL(target || pred) with floors; zero-target terms contribute nothing.
pub fn kl_loss(target: &[f64], pred: &[f64]) -> f64 {
    target
        .iter()
        .zip(pred)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| t * (t.max(PROB_FLOOR).ln() - p.max(PROB_FLOOR).ln()))
        .sum()
}

/// `ce + λ·exc + λ·inc + β·λ_n·new`.
pub fn total_loss(parts: &LossBreakdown, w: &LossWeights) -> f64 {
    parts.ce + w.lambda * parts.exc + w.lambda * parts.inc + w.beta * w.lambda_new * parts.new
}
