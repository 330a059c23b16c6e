//! JSON bodies of the inference-service protocol.
//!
//! - `GET  /v1/vocab`      → [`VocabResponse`]
//! - `POST /v1/tokenize`   [`TokenizeRequest`] → [`TokenizeResponse`]
//! - `POST /v1/mask_probs` [`MaskProbsRequest`] → [`MaskProbsResponse`]
//!
//! Errors come back as [`ErrorResponse`] with a 4xx/5xx status.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Filled, TokenId};

pub const VOCAB_PATH: &str = "/v1/vocab";
pub const TOKENIZE_PATH: &str = "/v1/tokenize";
pub const MASK_PROBS_PATH: &str = "/v1/mask_probs";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabResponse {
    pub tokens: Vec<String>,
    pub mask_token: String,
    pub special_ids: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub ids: Vec<TokenId>,
}

/// `filled` keys are mask indices rendered as decimal strings, since JSON
/// object keys are strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskProbsRequest {
    pub text: String,
    #[serde(default)]
    pub filled: BTreeMap<String, TokenId>,
}

impl MaskProbsRequest {
    pub fn new(text: &str, filled: &Filled) -> Self {
        Self { text: text.to_string(), filled: filled.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    pub fn filled(&self) -> Result<Filled, String> {
        self.filled
            .iter()
            .map(|(k, v)| {
                k.parse::<usize>().map(|k| (k, *v)).map_err(|_| format!("filled key {k:?} is not a mask index"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskProbsResponse {
    pub distributions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
