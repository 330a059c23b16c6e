//! Table-driven provider with deterministic, fully specified outputs.
//!
//! Every answer is looked up by `(prompt id, mask index, fill fingerprint)`:
//! the prompt id is a hash of the prompt text with masks unfilled, and the
//! fingerprint lists the already-filled masks as `pos=id` pairs. Queries
//! without an entry get the fallback distribution.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_query, hex, Filled, RenderedPrompt, TokenDistribution, TokenId, TokenProvider, Vocab, VocabSpec};
use crate::error::{Error, ProviderError, Result};

/// A distribution as written in an oracle file: either a dense vector over
/// the vocabulary, or a few named peaks with the remaining mass spread
/// evenly over the other non-special tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistSpec {
    Dense(Vec<f64>),
    Peaks { peaks: BTreeMap<String, f64> },
}

impl DistSpec {
    pub fn peaks<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        DistSpec::Peaks { peaks: pairs.into_iter().map(|(t, p)| (t.to_string(), p)).collect() }
    }

    pub fn uniform() -> Self {
        DistSpec::Peaks { peaks: BTreeMap::new() }
    }

    fn resolve(&self, vocab: &Vocab) -> std::result::Result<Vec<f64>, ProviderError> {
        let probs = match self {
            DistSpec::Dense(p) => {
                if p.len() != vocab.len() {
                    return Err(ProviderError::protocol(format!(
                        "dense distribution has {} entries, vocabulary has {}",
                        p.len(),
                        vocab.len()
                    )));
                }
                p.clone()
            }
            DistSpec::Peaks { peaks } => {
                let mut p = vec![0.0; vocab.len()];
                let mut mass = 0.0;
                for (tok, &v) in peaks {
                    let id = vocab
                        .id(tok)
                        .ok_or_else(|| ProviderError::protocol(format!("peak token {tok:?} not in vocabulary")))?;
                    p[id] += v;
                    mass += v;
                }
                let rest: Vec<TokenId> = (0..vocab.len())
                    .filter(|&id| !vocab.is_special(id) && !peaks.contains_key(vocab.token(id)))
                    .collect();
                let remainder = 1.0 - mass;
                if remainder < -super::NORMALIZATION_TOL {
                    return Err(ProviderError::protocol(format!("peaks sum to {mass} > 1")));
                }
                if remainder > 1e-12 {
                    if rest.is_empty() {
                        return Err(ProviderError::protocol("peaks leave mass but no token to hold it"));
                    }
                    let share = remainder / rest.len() as f64;
                    rest.iter().for_each(|&id| p[id] += share);
                }
                p
            }
        };
        Ok(TokenDistribution::new(probs)?.into_inner())
    }
}

/// On-disk form of a [`SyntheticOracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFile {
    pub vocab: VocabSpec,
    /// Token that stands in for characters the vocabulary cannot spell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unk_token: Option<String>,
    /// Answer for unlisted queries; uniform over non-special tokens if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<DistSpec>,
    pub entries: BTreeMap<String, DistSpec>,
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    vocab: Vocab,
    unk: Option<TokenId>,
    entries: HashMap<String, Vec<f64>>,
    fallback: Vec<f64>,
    file: OracleFile,
}

impl SyntheticOracle {
    pub fn from_file_spec(file: OracleFile) -> std::result::Result<Self, ProviderError> {
        let vocab = Vocab::new(file.vocab.clone())?;
        let unk = match &file.unk_token {
            Some(t) => {
                Some(vocab.id(t).ok_or_else(|| ProviderError::protocol(format!("unk token {t:?} not in vocabulary")))?)
            }
            None => None,
        };
        let fallback = file.fallback.clone().unwrap_or_else(DistSpec::uniform).resolve(&vocab)?;
        let mut entries = HashMap::with_capacity(file.entries.len());
        for (key, spec) in &file.entries {
            let probs =
                spec.resolve(&vocab).map_err(|e| ProviderError::protocol(format!("entry {key}: {}", e.message)))?;
            entries.insert(key.clone(), probs);
        }
        Ok(Self { vocab, unk, entries, fallback, file })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: OracleFile = serde_json::from_str(&text)?;
        Ok(Self::from_file_spec(file)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.file)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn file_spec(&self) -> &OracleFile {
        &self.file
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    /// Table key for one mask of one prompt under the given fills.
    pub fn key(text: &str, mask_index: usize, filled: &Filled) -> String {
        format!("{}|{}|{}", prompt_id(text), mask_index, fingerprint(filled))
    }
}

/// First 16 hex digits of SHA-256 over the unfilled prompt text.
pub fn prompt_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex(&digest[..8])
}

fn fingerprint(filled: &Filled) -> String {
    if filled.is_empty() {
        return "-".into();
    }
    filled.iter().map(|(pos, id)| format!("{pos}={id}")).collect::<Vec<_>>().join(",")
}

impl TokenProvider for SyntheticOracle {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Whitespace words that are vocabulary tokens map to themselves; other
    /// words are spelled out character by character, WordPiece style
    /// (`Kauai` → `K ##a ##u ##a ##i`).
    fn tokenize(&self, text: &str) -> std::result::Result<Vec<TokenId>, ProviderError> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            if let Some(id) = self.vocab.id(word) {
                ids.push(id);
                continue;
            }
            for (n, c) in word.chars().enumerate() {
                let piece = if n == 0 { c.to_string() } else { format!("##{c}") };
                match self.vocab.id(&piece).or(self.unk) {
                    Some(id) => ids.push(id),
                    None => {
                        return Err(ProviderError::protocol(format!(
                            "cannot tokenize {word:?}: no token for {piece:?}"
                        )))
                    }
                }
            }
        }
        Ok(ids)
    }

    fn mask_distributions(
        &self,
        prompt: &RenderedPrompt,
        filled: &Filled,
    ) -> std::result::Result<Vec<TokenDistribution>, ProviderError> {
        let open = check_query(&prompt.text, &self.vocab, filled)?;
        let fp = fingerprint(filled);
        let pid = prompt_id(&prompt.text);
        open.into_iter()
            .map(|i| {
                let key = format!("{pid}|{i}|{fp}");
                let probs = self.entries.get(&key).unwrap_or(&self.fallback).clone();
                TokenDistribution::new(probs)
            })
            .collect()
    }
}

/// Incremental construction of an oracle in code.
#[derive(Debug, Clone)]
pub struct OracleBuilder {
    file: OracleFile,
}

impl OracleBuilder {
    pub fn new<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>, mask_token: &str, special: &[&str]) -> Self {
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.as_ref().to_string()).collect();
        let special_ids = special.iter().filter_map(|s| tokens.iter().position(|t| t == s)).collect();
        Self {
            file: OracleFile {
                vocab: VocabSpec { tokens, mask_token: mask_token.to_string(), special_ids },
                unk_token: None,
                fallback: None,
                entries: BTreeMap::new(),
            },
        }
    }

    pub fn unk(mut self, token: &str) -> Self {
        self.file.unk_token = Some(token.to_string());
        self
    }

    pub fn fallback(mut self, dist: DistSpec) -> Self {
        self.file.fallback = Some(dist);
        self
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.file.vocab.tokens.iter().position(|t| t == token)
    }

    /// Sets the answer for mask `mask_index` of `text` under `filled`.
    pub fn entry(&mut self, text: &str, mask_index: usize, filled: &Filled, dist: DistSpec) -> &mut Self {
        self.file.entries.insert(SyntheticOracle::key(text, mask_index, filled), dist);
        self
    }

    /// Like [`Self::entry`] with fills given as token strings.
    pub fn entry_with(&mut self, text: &str, mask_index: usize, fills: &[(usize, &str)], dist: DistSpec) -> &mut Self {
        let filled: Filled = fills
            .iter()
            .map(|(pos, tok)| (*pos, self.token_id(tok).unwrap_or_else(|| panic!("unknown token {tok:?}"))))
            .collect();
        self.entry(text, mask_index, &filled, dist)
    }

    pub fn build(self) -> std::result::Result<SyntheticOracle, ProviderError> {
        SyntheticOracle::from_file_spec(self.file)
    }
}
