use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    MaskProbsRequest, MaskProbsResponse, TokenizeRequest, TokenizeResponse, VocabResponse, MASK_PROBS_PATH,
    TOKENIZE_PATH, VOCAB_PATH,
};
use super::{check_query, Filled, RenderedPrompt, TokenDistribution, TokenId, TokenProvider, Vocab, VocabSpec};
use crate::error::ProviderError;

/// Full-vocabulary float arrays get large for real models.
const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

/// Client for a remote inference service speaking the [`super::wire`]
/// protocol. The vocabulary is fetched once at connect time.
pub struct HttpProvider {
    base: String,
    agent: ureq::Agent,
    vocab: Vocab,
    max_in_flight: usize,
}

impl HttpProvider {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

    pub fn connect(base_url: &str) -> Result<Self, ProviderError> {
        Self::connect_with(base_url, Self::DEFAULT_MAX_IN_FLIGHT, Duration::from_secs(60))
    }

    pub fn connect_with(base_url: &str, max_in_flight: usize, timeout: Duration) -> Result<Self, ProviderError> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        let base = base_url.trim_end_matches('/').to_string();
        let mut client = Self {
            base,
            agent,
            vocab: Vocab::new(VocabSpec {
                tokens: vec!["[MASK]".into()],
                mask_token: "[MASK]".into(),
                special_ids: vec![],
            })?,
            max_in_flight: max_in_flight.max(1),
        };
        let v: VocabResponse = client.get_json(VOCAB_PATH)?;
        client.vocab =
            Vocab::new(VocabSpec { tokens: v.tokens, mask_token: v.mask_token, special_ids: v.special_ids })?;
        Ok(client)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, ProviderError> {
        let resp =
            self.agent.get(&self.url(path)).call().map_err(|e| ProviderError::transport(format!("GET {path}: {e}")))?;
        Self::decode(path, resp)
    }

    fn post_json<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ProviderError> {
        let resp = self
            .agent
            .post(&self.url(path))
            .send_json(body)
            .map_err(|e| ProviderError::transport(format!("POST {path}: {e}")))?;
        Self::decode(path, resp)
    }

    fn decode<T: DeserializeOwned>(path: &str, mut resp: ureq::http::Response<ureq::Body>) -> Result<T, ProviderError> {
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(|e| ProviderError::transport(format!("{path}: reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&body)
                .map_err(|e| ProviderError::protocol(format!("{path}: malformed response: {e}"))),
            // Overload and server faults may clear up on retry.
            429 | 500..=599 => Err(ProviderError::transport(format!("{path}: HTTP {status}: {body}"))),
            _ => Err(ProviderError::protocol(format!("{path}: HTTP {status}: {body}"))),
        }
    }
}

impl TokenProvider for HttpProvider {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        let resp: TokenizeResponse = self.post_json(TOKENIZE_PATH, &TokenizeRequest { text: text.to_string() })?;
        if let Some(bad) = resp.ids.iter().find(|&&id| id >= self.vocab.len()) {
            return Err(ProviderError::protocol(format!("tokenize returned id {bad} outside vocabulary")));
        }
        Ok(resp.ids)
    }

    fn mask_distributions(
        &self,
        prompt: &RenderedPrompt,
        filled: &Filled,
    ) -> Result<Vec<TokenDistribution>, ProviderError> {
        let open = check_query(&prompt.text, &self.vocab, filled)?;
        let resp: MaskProbsResponse = self.post_json(MASK_PROBS_PATH, &MaskProbsRequest::new(&prompt.text, filled))?;
        if resp.distributions.len() != open.len() {
            return Err(ProviderError::protocol(format!(
                "expected {} distributions, got {}",
                open.len(),
                resp.distributions.len()
            )));
        }
        resp.distributions
            .into_iter()
            .map(|p| {
                if p.len() != self.vocab.len() {
                    return Err(ProviderError::protocol(format!(
                        "distribution has {} entries, vocabulary has {}",
                        p.len(),
                        self.vocab.len()
                    )));
                }
                TokenDistribution::new(p)
            })
            .collect()
    }

    /// Issues queries on up to `max_in_flight` threads at a time.
    fn mask_distributions_many(
        &self,
        queries: &[(RenderedPrompt, Filled)],
    ) -> Vec<Result<Vec<TokenDistribution>, ProviderError>> {
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(self.max_in_flight) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> =
                    chunk.iter().map(|(p, f)| s.spawn(move || self.mask_distributions(p, f))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(ProviderError::transport("query thread panicked"))))
                    .collect()
            });
            out.extend(results);
        }
        out
    }
}
