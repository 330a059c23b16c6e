//! Masked-token distribution providers.
//!
//! A provider owns a vocabulary and answers "what is p(w | prompt) at each
//! unfilled mask". The model behind it is frozen. Two providers ship here:
//! a table-driven [`SyntheticOracle`] and an [`HttpProvider`] speaking the
//! JSON wire protocol in [`wire`].

#[cfg(feature = "http")]
mod http;
mod oracle;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ProviderError;

#[cfg(feature = "http")]
pub use self::http::HttpProvider;
pub use self::oracle::{DistSpec, OracleBuilder, OracleFile, SyntheticOracle};

pub type TokenId = usize;

/// Fills applied to a prompt, keyed by mask index (0-based, left to right).
pub type Filled = BTreeMap<usize, TokenId>;

/// Tolerance on the sum of a token distribution.
pub const NORMALIZATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub tokens: Vec<String>,
    pub mask_token: String,
    #[serde(default)]
    pub special_ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    mask_token: String,
    mask_id: TokenId,
    special: BTreeSet<TokenId>,
}

impl Vocab {
    pub fn new(spec: VocabSpec) -> Result<Self, ProviderError> {
        let VocabSpec { tokens, mask_token, special_ids } = spec;
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ProviderError::protocol(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let mask_id = *index
            .get(&mask_token)
            .ok_or_else(|| ProviderError::protocol(format!("mask token {mask_token:?} not in vocabulary")))?;
        let mut special: BTreeSet<TokenId> = special_ids.into_iter().collect();
        if let Some(&bad) = special.iter().find(|&&id| id >= tokens.len()) {
            return Err(ProviderError::protocol(format!("special id {bad} out of range")));
        }
        special.insert(mask_id);
        Ok(Self { tokens, index, mask_token, mask_id, special })
    }

    pub fn spec(&self) -> VocabSpec {
        VocabSpec {
            tokens: self.tokens.clone(),
            mask_token: self.mask_token.clone(),
            special_ids: self.special.iter().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn mask_token(&self) -> &str {
        &self.mask_token
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.contains(&id)
    }

    pub fn special_ids(&self) -> &BTreeSet<TokenId> {
        &self.special
    }

    /// Hex SHA-256 over the id-ordered token list. Checkpoints record it so a
    /// matrix is never loaded against a different vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex(&h.finalize())
    }

    /// Joins subword tokens back into text. Understands WordPiece (`##x`
    /// continues a word) and byte-level BPE / SentencePiece (`Ġx`, `▁x`
    /// start a word) conventions.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let bpe = self.tokens.iter().any(|t| t.starts_with('Ġ') || t.starts_with('▁'));
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id);
            if let Some(rest) = tok.strip_prefix("##") {
                out.push_str(rest);
            } else if let Some(rest) = tok.strip_prefix('Ġ').or_else(|| tok.strip_prefix('▁')) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(rest);
            } else if bpe {
                out.push_str(tok);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out.trim().to_string()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A prompt string with mask sentinels. `mask_positions` are the mask
/// occurrence indices, `0..n` left to right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub mask_positions: Vec<usize>,
}

impl RenderedPrompt {
    pub fn new(text: String, mask_token: &str) -> Self {
        let n = count_masks(&text, mask_token);
        Self { text, mask_positions: (0..n).collect() }
    }

    pub fn mask_count(&self) -> usize {
        self.mask_positions.len()
    }
}

pub fn count_masks(text: &str, mask_token: &str) -> usize {
    if mask_token.is_empty() {
        return 0;
    }
    text.matches(mask_token).count()
}

/// Replaces the filled mask occurrences of `text` with their token strings.
pub fn apply_fills(text: &str, vocab: &Vocab, filled: &Filled) -> String {
    let mask = vocab.mask_token();
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut i = 0;
    while let Some(pos) = rest.find(mask) {
        out.push_str(&rest[..pos]);
        match filled.get(&i) {
            Some(&id) => out.push_str(vocab.token(id)),
            None => out.push_str(mask),
        }
        rest = &rest[pos + mask.len()..];
        i += 1;
    }
    out.push_str(rest);
    out
}

/// Checks the query contract shared by every provider. Returns the unfilled
/// mask indices in order.
pub fn check_query(text: &str, vocab: &Vocab, filled: &Filled) -> Result<Vec<usize>, ProviderError> {
    let n = count_masks(text, vocab.mask_token());
    if n == 0 {
        return Err(ProviderError::protocol("prompt contains no mask"));
    }
    if let Some((&pos, _)) = filled.iter().find(|(&pos, _)| pos >= n) {
        return Err(ProviderError::protocol(format!("filled position {pos} but prompt has {n} masks")));
    }
    if let Some((_, &id)) = filled.iter().find(|(_, &id)| id >= vocab.len()) {
        return Err(ProviderError::protocol(format!("filled token id {id} out of range")));
    }
    let open: Vec<usize> = (0..n).filter(|i| !filled.contains_key(i)).collect();
    if open.is_empty() {
        return Err(ProviderError::protocol("every mask is already filled"));
    }
    Ok(open)
}

/// Probability vector over the whole vocabulary at one mask position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, ProviderError> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(ProviderError::protocol(format!("invalid probability {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(ProviderError::protocol(format!("distribution sums to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }

    /// Zeroes special tokens and renormalizes. All-special mass yields an
    /// all-zero vector, which callers treat as "no candidates".
    pub fn without_specials(&self, vocab: &Vocab) -> Vec<f64> {
        let mut p = self.probs.clone();
        for &id in vocab.special_ids() {
            if id < p.len() {
                p[id] = 0.0;
            }
        }
        let z: f64 = p.iter().sum();
        if z > 0.0 {
            p.iter_mut().for_each(|v| *v /= z);
        }
        p
    }
}

/// A frozen masked language model, seen only through its output
/// distributions. Implementations must be safe for concurrent queries.
pub trait TokenProvider: Send + Sync {
    /// Stable for the provider's lifetime.
    fn vocab(&self) -> &Vocab;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError>;

    /// One distribution per unfilled mask, left to right, conditioned on the
    /// prompt with `filled` substituted.
    fn mask_distributions(
        &self,
        prompt: &RenderedPrompt,
        filled: &Filled,
    ) -> Result<Vec<TokenDistribution>, ProviderError>;

    /// Answers many independent queries. Results come back in input order.
    fn mask_distributions_many(
        &self,
        queries: &[(RenderedPrompt, Filled)],
    ) -> Vec<Result<Vec<TokenDistribution>, ProviderError>> {
        queries.iter().map(|(p, f)| self.mask_distributions(p, f)).collect()
    }

    fn detokenize(&self, ids: &[TokenId]) -> String {
        self.vocab().detokenize(ids)
    }
}

impl<P: TokenProvider + ?Sized> TokenProvider for &P {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        (**self).tokenize(text)
    }

    fn mask_distributions(
        &self,
        prompt: &RenderedPrompt,
        filled: &Filled,
    ) -> Result<Vec<TokenDistribution>, ProviderError> {
        (**self).mask_distributions(prompt, filled)
    }

    fn mask_distributions_many(
        &self,
        queries: &[(RenderedPrompt, Filled)],
    ) -> Vec<Result<Vec<TokenDistribution>, ProviderError>> {
        (**self).mask_distributions_many(queries)
    }
}

impl<P: TokenProvider + ?Sized> TokenProvider for Box<P> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        (**self).tokenize(text)
    }

    fn mask_distributions(
        &self,
        prompt: &RenderedPrompt,
        filled: &Filled,
    ) -> Result<Vec<TokenDistribution>, ProviderError> {
        (**self).mask_distributions(prompt, filled)
    }

    fn mask_distributions_many(
        &self,
        queries: &[(RenderedPrompt, Filled)],
    ) -> Vec<Result<Vec<TokenDistribution>, ProviderError>> {
        (**self).mask_distributions_many(queries)
    }
}
