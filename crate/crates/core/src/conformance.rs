//! Wire-protocol conformance checks for denoiser servers.
//!
//! Run against any endpoint that claims to speak the protocol; every check
//! goes through the same client code the engine uses.

use std::time::Duration;

use serde::Serialize;

use crate::denoiser::remote::{list_models, DenoiseRequest, ModelInfo};
use crate::denoiser::{Denoiser, RemoteDenoiser};
use crate::error::Result;
use crate::http::JsonClient;
use crate::state::MaskedState;
use crate::tokmap::{Codec, RemoteCodec};
use crate::vocab::Vocabulary;

pub const ROUND_TRIP_TEXT: &str = "def f(x):\n    return x + 1  # ok";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub model: Option<String>,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub endpoint: String,
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, model: Option<&str>, outcome: Result<(), String>) {
        let (passed, detail) = match outcome {
            Ok(()) => (true, String::new()),
            Err(e) => (false, e),
        };
        self.checks.push(ConformanceCheck { name, model: model.map(str::to_string), passed, detail });
    }
}

/// Any token that is not special.
fn ordinary_token(v: &Vocabulary) -> Option<u32> {
    (0..v.size as u32).find(|&t| !v.is_special(t) && v.contains(t))
}

fn check_shape(endpoint: &str, info: &ModelInfo, vocab: &Vocabulary, timeout: Duration) -> Result<(), String> {
    let t = ordinary_token(vocab).ok_or("vocabulary has no ordinary token")?;
    let m = vocab.mask_id;
    let state = MaskedState::new(vocab, vec![t], vec![m, t, m, m]).map_err(|e| e.to_string())?;
    let remote = RemoteDenoiser::with_vocab(endpoint, &info.id, vocab.clone(), timeout);
    let out = remote.forward(&state).map_err(|e| e.to_string())?;
    if out.positions() != [1, 3, 4] {
        return Err(format!("positions {:?}, expected [1, 3, 4]", out.positions()));
    }
    Ok(())
}

fn check_round_trip(endpoint: &str, info: &ModelInfo, timeout: Duration) -> Result<(), String> {
    let codec = RemoteCodec::connect(endpoint, &info.id, timeout).map_err(|e| e.to_string())?;
    let ids = codec.encode(ROUND_TRIP_TEXT).map_err(|e| e.to_string())?;
    let back = codec.decode(&ids).map_err(|e| e.to_string())?;
    if back != ROUND_TRIP_TEXT {
        return Err(format!("decode(encode(text)) = {back:?}"));
    }
    Ok(())
}

fn expect_status(client: &JsonClient, body: &DenoiseRequest, want: u16) -> Result<(), String> {
    match client.post_status("/v1/denoise", body) {
        Ok(s) if s == want => Ok(()),
        Ok(s) => Err(format!("HTTP {s}, expected {want}")),
        Err(e) => Err(e.to_string()),
    }
}

pub fn run_conformance(endpoint: &str, timeout: Duration) -> ConformanceReport {
    let client = JsonClient::new(endpoint, timeout);
    let mut report = ConformanceReport { endpoint: endpoint.to_string(), checks: Vec::new() };
    let models = match list_models(&client) {
        Ok(m) if !m.is_empty() => m,
        Ok(_) => {
            report.push("models_listed", None, Err("no models listed".into()));
            return report;
        }
        Err(e) => {
            report.push("models_listed", None, Err(e.to_string()));
            return report;
        }
    };
    report.push("models_listed", None, Ok(()));
    for info in &models {
        let id = Some(info.id.as_str());
        let vocab = match info.vocabulary() {
            Ok(v) => v,
            Err(e) => {
                report.push("special_tokens", id, Err(e.to_string()));
                continue;
            }
        };
        report.push("special_tokens", id, Ok(()));
        report.push("denoise_shape", id, check_shape(endpoint, info, &vocab, timeout));
        report.push("encode_decode_round_trip", id, check_round_trip(endpoint, info, timeout));
        let t = ordinary_token(&vocab).unwrap_or(vocab.eos_id);
        let unmasked = DenoiseRequest { model_id: info.id.clone(), tokens: vec![t, t], mask_id: vocab.mask_id, prompt_len: 1 };
        report.push("zero_masked_is_400", id, expect_status(&client, &unmasked, 400));
    }
    let first = &models[0];
    let unknown = DenoiseRequest {
        model_id: format!("{}-does-not-exist", first.id),
        tokens: vec![first.mask_id],
        mask_id: first.mask_id,
        prompt_len: 0,
    };
    report.push("unknown_model_is_404", None, expect_status(&client, &unknown, 404));
    report
}
