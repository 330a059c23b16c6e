//! Same-type instance generation by multi-mask infilling.
//!
//! The typing prompt yields a type word `t` for a mention. The generation
//! prompt "`m`, as well as [MASK] … [MASK], is a `t`." is then filled one
//! mask at a time, left to right, each step conditioned on the fills so
//! far. Candidates are ranked by the pseudo log-likelihood `Σ ln s_i`.
//! Scores of different lengths are compared raw, which favours short
//! candidates.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::backend::{Filled, RenderedPrompt, TokenId, TokenProvider};
use crate::error::{Error, ProviderError, Result};
use crate::interpreter::CorrelationMatrix;
use crate::prompts::TemplateSpec;
use crate::trainer::MentionExample;

pub const DEFAULT_BEAM_WIDTH: usize = 10;

/// A complete fill of every mask in a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub token_ids: Vec<TokenId>,
    /// `s_i`: probability of the i-th fill given the earlier ones, after
    /// special tokens are removed and the rest renormalized.
    pub per_step_prob: Vec<f64>,
    pub score: f64,
    pub mask_count: usize,
}

impl Candidate {
    fn empty(k: usize) -> Self {
        Self { token_ids: Vec::with_capacity(k), per_step_prob: Vec::with_capacity(k), score: 0.0, mask_count: k }
    }

    fn extend(&self, id: TokenId, prob: f64) -> Self {
        let mut next = self.clone();
        next.token_ids.push(id);
        next.per_step_prob.push(prob);
        next.score += prob.ln();
        next
    }

    fn filled(&self) -> Filled {
        self.token_ids.iter().copied().enumerate().collect()
    }
}

/// Best score first; equal scores order by token ids.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.token_ids.cmp(&b.token_ids))
}

/// The `n` most probable token ids, ties to the lowest id, zero-probability
/// tokens excluded.
fn top_tokens(probs: &[f64], n: usize) -> Vec<(TokenId, f64)> {
    let mut ids: Vec<(TokenId, f64)> = probs.iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect();
    ids.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ids.truncate(n);
    ids
}

/// Beam search over the masks of `prompt`, leftmost unfilled mask first.
///
/// Each partial fill expands with its `beam_width` most probable tokens and
/// the pool is cut back to `beam_width` by partial score. The greedy path
/// (best token at every step) is never pruned, so it is always among the
/// results; with `beam_width = 1` the search is exactly greedy. Returns at
/// most `beam_width` candidates, best first.
pub fn fill_masks(
    provider: &dyn TokenProvider,
    prompt: &RenderedPrompt,
    beam_width: usize,
) -> std::result::Result<Vec<Candidate>, ProviderError> {
    let k = prompt.mask_count();
    if k == 0 {
        return Err(ProviderError::protocol("prompt contains no mask"));
    }
    let width = beam_width.max(1);
    let vocab = provider.vocab();
    let mut beam = vec![Candidate::empty(k)];
    let mut greedy = 0usize;

    for _step in 0..k {
        let queries: Vec<(RenderedPrompt, Filled)> = beam.iter().map(|c| (prompt.clone(), c.filled())).collect();
        let answers = provider.mask_distributions_many(&queries);
        let mut pool = Vec::new();
        let mut greedy_next = None;
        for (i, (cand, answer)) in beam.iter().zip(answers).enumerate() {
            let dists = answer?;
            let first = dists.first().ok_or_else(|| ProviderError::protocol("provider returned no distribution"))?;
            let probs = first.without_specials(vocab);
            for (rank, (id, p)) in top_tokens(&probs, width).into_iter().enumerate() {
                let next = cand.extend(id, p);
                if i == greedy && rank == 0 {
                    greedy_next = Some(next.clone());
                }
                pool.push(next);
            }
        }
        pool.sort_by(candidate_order);
        pool.truncate(width);
        match greedy_next {
            Some(g) => {
                if !pool.contains(&g) {
                    pool.pop();
                    pool.push(g.clone());
                    pool.sort_by(candidate_order);
                }
                greedy = pool.iter().position(|c| *c == g).expect("greedy path retained");
            }
            None => return Ok(Vec::new()),
        }
        beam = pool;
    }
    Ok(beam)
}

/// Type word for an example plus the label distribution of its typing
/// prompt. The type word is the most probable non-special token, ties to
/// the lowest id.
pub fn predict_type_word(
    provider: &dyn TokenProvider,
    u: &CorrelationMatrix,
    spec: &TemplateSpec,
    ex: &MentionExample,
) -> Result<(TokenId, Vec<f64>)> {
    let prompt = spec.render_typing(&ex.text, ex.mention())?;
    let dists = provider.mask_distributions(&prompt, &Filled::new())?;
    let dist = dists.into_iter().next().ok_or_else(|| ProviderError::protocol("no distribution returned"))?;
    let probs = dist.without_specials(provider.vocab());
    let t = top_tokens(&probs, 1)
        .first()
        .map(|(id, _)| *id)
        .ok_or_else(|| Error::Contract("typing distribution has no mass on ordinary tokens".into()))?;
    Ok((t, u.map_to_labels(dist.probs())))
}

/// A new mention of the source's type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstance {
    pub source_id: String,
    pub type_word: String,
    pub surface: String,
    pub score: f64,
    pub k: usize,
    pub token_ids: Vec<TokenId>,
}

/// Fills the generation prompt with `k = 1..=l` masks (`l` = subword length
/// of the mention), pools the candidates, keeps one per case-insensitive
/// surface, drops the source mention and every surface in `exclude`
/// (lowercased), and returns the `m` best by score. Fewer than `m` may come
/// back.
#[allow(clippy::too_many_arguments)]
pub fn generate_instances(
    provider: &dyn TokenProvider,
    spec: &TemplateSpec,
    ex: &MentionExample,
    type_word: &str,
    m: usize,
    beam_width: usize,
    exclude: &HashSet<String>,
) -> Result<Vec<GeneratedInstance>> {
    if m == 0 {
        return Err(Error::Config("instances per source must be at least 1".into()));
    }
    let l = provider.tokenize(ex.mention())?.len();
    if l == 0 {
        return Err(Error::Contract(format!("mention {:?} tokenizes to nothing", ex.mention())));
    }
    let source_key = ex.mention().trim().to_lowercase();
    let mut best: BTreeMap<String, GeneratedInstance> = BTreeMap::new();
    for k in 1..=l {
        let prompt = spec.render_generation(&ex.text, ex.mention(), type_word, k)?;
        for cand in fill_masks(provider, &prompt, beam_width)? {
            let surface = provider.detokenize(&cand.token_ids);
            let key = surface.trim().to_lowercase();
            if key.is_empty() || key == source_key || exclude.contains(&key) {
                continue;
            }
            let inst = GeneratedInstance {
                source_id: ex.id.clone(),
                type_word: type_word.to_string(),
                surface: surface.trim().to_string(),
                score: cand.score,
                k,
                token_ids: cand.token_ids,
            };
            match best.get(&key) {
                Some(prev) if prev.score >= inst.score => {}
                _ => {
                    best.insert(key, inst);
                }
            }
        }
    }
    let mut out: Vec<GeneratedInstance> = best.into_values().collect();
    out.sort_by(instance_order);
    out.truncate(m);
    Ok(out)
}

/// Best score first, then surface, then mask count.
pub fn instance_order(a: &GeneratedInstance, b: &GeneratedInstance) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.surface.cmp(&b.surface)).then(a.k.cmp(&b.k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{DistSpec, OracleBuilder, SyntheticOracle};
    use crate::hierarchy::LabelPath;

    fn six_token_oracle() -> SyntheticOracle {
        let mut b = OracleBuilder::new(["[MASK]", "a", "b", "c", "d", "e"], "[MASK]", &[]);
        b.entry_with("q [MASK]", 0, &[], DistSpec::Dense(vec![0.0, 0.1, 0.4, 0.2, 0.2, 0.1]));
        b.build().unwrap()
    }

    #[test]
    fn single_mask_full_beam_is_exhaustive() {
        let o = six_token_oracle();
        let p = RenderedPrompt::new("q [MASK]".into(), "[MASK]");
        let c = fill_masks(&o, &p, o.vocab().len()).unwrap();
        let ids: Vec<_> = c.iter().map(|c| c.token_ids[0]).collect();
        assert_eq!(ids, vec![2, 3, 4, 1, 5]);
        assert!((c[0].score - 0.4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn special_tokens_are_never_generated() {
        let mut b = OracleBuilder::new(["[MASK]", "[SEP]", "a", "b"], "[MASK]", &["[SEP]"]);
        b.entry_with("q [MASK]", 0, &[], DistSpec::Dense(vec![0.5, 0.3, 0.15, 0.05]));
        let o = b.build().unwrap();
        let p = RenderedPrompt::new("q [MASK]".into(), "[MASK]");
        let c = fill_masks(&o, &p, 10).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].token_ids, vec![2]);
        // Renormalized after dropping [MASK] and [SEP].
        assert!((c[0].per_step_prob[0] - 0.75).abs() < 1e-12);
    }

    /// A beam of 2 prunes the greedy path by score but keeps it anyway.
    ///
    /// Step 1: x 0.5, y 0.45. Under x the next mask is flat (0.25 each);
    /// under y it is peaked (p 0.6, q 0.35). Plain pruning would keep y-p
    /// and y-q and drop the greedy x-p.
    #[test]
    fn greedy_path_survives_pruning() {
        let mut b = OracleBuilder::new(["[MASK]", "x", "y", "p", "q", "r", "s"], "[MASK]", &[]);
        let t = "[MASK] [MASK]";
        b.entry_with(t, 0, &[], DistSpec::peaks([("x", 0.5), ("y", 0.45)]));
        b.entry_with(t, 1, &[(0, "x")], DistSpec::peaks([("p", 0.25), ("q", 0.25), ("r", 0.25), ("s", 0.25)]));
        b.entry_with(t, 1, &[(0, "y")], DistSpec::peaks([("p", 0.6), ("q", 0.35)]));
        let o = b.build().unwrap();
        let p = RenderedPrompt::new(t.into(), "[MASK]");
        let greedy = fill_masks(&o, &p, 1).unwrap();
        assert_eq!(greedy.len(), 1);
        assert_eq!(greedy[0].token_ids, vec![1, 3]);
        let beam = fill_masks(&o, &p, 2).unwrap();
        assert_eq!(beam.len(), 2);
        assert_eq!(beam[0].token_ids, vec![2, 3]);
        assert!(beam.iter().any(|c| c.token_ids == greedy[0].token_ids));
    }

    #[test]
    fn candidate_scores_are_consistent() {
        let o = six_token_oracle();
        let p = RenderedPrompt::new("q [MASK]".into(), "[MASK]");
        for c in fill_masks(&o, &p, 3).unwrap() {
            assert_eq!(c.token_ids.len(), c.mask_count);
            let s: f64 = c.per_step_prob.iter().map(|p| p.ln()).sum();
            assert!((s - c.score).abs() < 1e-9);
            assert!(c.score <= 0.0);
        }
    }

    fn uni_oracle(typing: DistSpec) -> (SyntheticOracle, MentionExample) {
        let ex = MentionExample::locate("e1", "Buffalo won", "Buffalo", LabelPath::parse("/org").unwrap()).unwrap();
        let spec = TemplateSpec::default();
        let mut b = OracleBuilder::new(["[MASK]", "[PAD]", "university", "city", "Buffalo"], "[MASK]", &["[PAD]"]);
        b.entry_with(&spec.render_typing(&ex.text, ex.mention()).unwrap().text, 0, &[], typing);
        (b.build().unwrap(), ex)
    }

    #[test]
    fn type_word_is_the_peak() {
        let (o, ex) = uni_oracle(DistSpec::peaks([("university", 0.7), ("city", 0.2)]));
        let u = CorrelationMatrix::zeros(vec![LabelPath::parse("/org").unwrap()], 5);
        let (t, labels) = predict_type_word(&o, &u, &TemplateSpec::default(), &ex).unwrap();
        assert_eq!(o.vocab().token(t), "university");
        assert_eq!(labels, vec![1.0]);
    }

    #[test]
    fn type_word_tie_goes_to_lowest_ordinary_id() {
        let (o, ex) = uni_oracle(DistSpec::Dense(vec![0.2; 5]));
        let u = CorrelationMatrix::zeros(vec![LabelPath::parse("/org").unwrap()], 5);
        let (t, _) = predict_type_word(&o, &u, &TemplateSpec::default(), &ex).unwrap();
        assert_eq!(t, 2);
    }

    #[test]
    fn single_token_mention_only_uses_one_mask() {
        let (o, ex) = uni_oracle(DistSpec::uniform());
        let out = generate_instances(&o, &TemplateSpec::default(), &ex, "university", 10, 10, &HashSet::new()).unwrap();
        assert!(out.iter().all(|i| i.k == 1));
        // The source mention "Buffalo" is a candidate but never returned.
        assert!(out.iter().all(|i| i.surface != "Buffalo"));
        assert_eq!(out.len(), 2);
    }
}
