//! Client for denoisers served over HTTP.
//!
//! `POST /v1/denoise` takes the full token sequence and returns one logit
//! row per masked position; `GET /v1/models` lists served models with
//! their special-token ids.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserOutput};
use crate::error::{Error, Result};
use crate::http::{JsonClient, DEFAULT_TIMEOUT};
use crate::state::MaskedState;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub model_id: String,
    pub tokens: Vec<TokenId>,
    pub mask_id: TokenId,
    pub prompt_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub positions: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub vocab_size: usize,
    pub mask_id: TokenId,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelList {
    pub models: Vec<ModelInfo>,
}

impl ModelInfo {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.id.as_str(), self.vocab_size, self.mask_id, self.eos_id, self.pad_id)
    }
}

pub fn list_models(client: &JsonClient) -> Result<Vec<ModelInfo>> {
    Ok(client.get::<ModelList>("/v1/models")?.models)
}

#[derive(Debug)]
pub struct RemoteDenoiser {
    client: JsonClient,
    model_id: String,
    vocab: Vocabulary,
}

impl RemoteDenoiser {
    /// Looks `model_id` up on the server and adopts its vocabulary.
    pub fn connect(endpoint: &str, model_id: &str) -> Result<Self> {
        Self::connect_with_timeout(endpoint, model_id, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(endpoint: &str, model_id: &str, timeout: Duration) -> Result<Self> {
        let client = JsonClient::new(endpoint, timeout);
        let info = list_models(&client)?
            .into_iter()
            .find(|m| m.id == model_id)
            .ok_or_else(|| Error::RemoteProtocol(format!("server does not list model `{model_id}`")))?;
        let vocab = info.vocabulary().map_err(|e| Error::RemoteProtocol(e.to_string()))?;
        Ok(Self { client, model_id: model_id.to_string(), vocab })
    }

    /// Skips the model lookup; `vocab` must match what the server uses.
    pub fn with_vocab(endpoint: &str, model_id: &str, vocab: Vocabulary, timeout: Duration) -> Self {
        Self { client: JsonClient::new(endpoint, timeout), model_id: model_id.to_string(), vocab }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    fn request(&self, state: &MaskedState) -> DenoiseRequest {
        DenoiseRequest {
            model_id: self.model_id.clone(),
            tokens: state.tokens(),
            mask_id: state.mask_id(),
            prompt_len: state.prompt_len(),
        }
    }
}

impl Denoiser for RemoteDenoiser {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, state: &MaskedState) -> Result<DenoiserOutput> {
        let resp: DenoiseResponse = self.client.post("/v1/denoise", &self.request(state))?;
        let expected = state.masked_positions();
        if resp.positions != expected {
            return Err(Error::RemoteProtocol(format!(
                "server returned positions {:?}, expected {:?}",
                resp.positions, expected
            )));
        }
        if resp.logits.len() != expected.len() {
            return Err(Error::RemoteProtocol(format!(
                "server returned {} logit rows for {} masked positions",
                resp.logits.len(),
                expected.len()
            )));
        }
        if let Some(row) = resp.logits.iter().find(|r| r.len() != self.vocab.size) {
            return Err(Error::RemoteProtocol(format!(
                "logit row of width {} for vocabulary size {}",
                row.len(),
                self.vocab.size
            )));
        }
        DenoiserOutput::new(resp.positions, resp.logits).map_err(|e| Error::RemoteProtocol(e.to_string()))
    }
}
