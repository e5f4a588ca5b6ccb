//! In-process stub of a denoiser/codec/scoring server.

#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

pub const MODEL: &str = "stub";
/// ids 2..=129 are ASCII 0..=127.
pub const VOCAB_SIZE: u32 = 130;
pub const MASK: u32 = 130;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    None,
    /// One logit row too few.
    ShortRows,
    /// Rows one column too narrow.
    NarrowRows,
    /// HTTP 500 for every denoise call.
    ServerError,
    /// Response body is not JSON.
    Garbage,
    /// Sleeps past any sensible client timeout.
    Slow,
    /// Accepts requests without masked positions and unknown models.
    Lenient,
    /// Reports a reward outside [0, 1].
    RewardOutOfRange,
}

pub struct Stub {
    pub endpoint: String,
    pub denoise_calls: Arc<AtomicU64>,
}

fn encode(text: &str) -> Vec<u32> {
    text.bytes().map(|b| b as u32 + 2).collect()
}

fn decode(ids: &[u32]) -> String {
    ids.iter().map(|&t| char::from((t - 2) as u8)).collect()
}

fn logits_row(tokens: &[u32], pos: usize) -> Vec<f64> {
    (0..VOCAB_SIZE)
        .map(|v| ((v as usize * 31 + pos * 17 + tokens.len()) % 97) as f64 / 10.0)
        .collect()
}

fn denoise(body: &Value, fault: Fault) -> (u16, String) {
    if body["model_id"] != MODEL && fault != Fault::Lenient {
        return (404, json!({"error": "unknown model"}).to_string());
    }
    let tokens: Vec<u32> = serde_json::from_value(body["tokens"].clone()).unwrap_or_default();
    let mask = body["mask_id"].as_u64().unwrap_or(MASK as u64) as u32;
    let prompt_len = body["prompt_len"].as_u64().unwrap_or(0) as usize;
    let positions: Vec<usize> = (prompt_len..tokens.len()).filter(|&i| tokens[i] == mask).collect();
    if positions.is_empty() && fault != Fault::Lenient {
        return (400, json!({"error": "no masked positions"}).to_string());
    }
    let mut logits: Vec<Vec<f64>> = positions.iter().map(|&p| logits_row(&tokens, p)).collect();
    match fault {
        Fault::ShortRows => {
            logits.pop();
        }
        Fault::NarrowRows => logits.iter_mut().for_each(|r| {
            r.pop();
        }),
        Fault::ServerError => return (500, "{}".into()),
        Fault::Garbage => return (200, "not json".into()),
        Fault::Slow => thread::sleep(Duration::from_millis(600)),
        _ => {}
    }
    (200, json!({"positions": positions, "logits": logits}).to_string())
}

pub fn spawn(fault: Fault) -> Stub {
    let server = Server::http("127.0.0.1:0").expect("bind stub");
    let port = server.server_addr().to_ip().expect("ip listener").port();
    let calls = Arc::new(AtomicU64::new(0));
    let counter = calls.clone();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut raw = String::new();
            let _ = req.as_reader().read_to_string(&mut raw);
            let body: Value = serde_json::from_str(&raw).unwrap_or(Value::Null);
            let (status, text) = match (req.method().as_str(), req.url()) {
                ("GET", "/v1/models") => (
                    200,
                    json!({"models": [{"id": MODEL, "vocab_size": VOCAB_SIZE, "mask_id": MASK, "eos_id": 0, "pad_id": 1}]})
                        .to_string(),
                ),
                ("POST", "/v1/denoise") => {
                    let out = denoise(&body, fault);
                    if out.0 == 200 {
                        counter.fetch_add(1, Ordering::SeqCst);
                    }
                    out
                }
                ("POST", "/v1/encode") => (200, json!({"tokens": encode(body["text"].as_str().unwrap_or(""))}).to_string()),
                ("POST", "/v1/decode") => {
                    let ids: Vec<u32> = serde_json::from_value(body["tokens"].clone()).unwrap_or_default();
                    (200, json!({"text": decode(&ids)}).to_string())
                }
                ("POST", "/v1/score") => {
                    let text = body["text"].as_str().unwrap_or("");
                    let r = if fault == Fault::RewardOutOfRange { 1.5 } else { text.len() as f64 / 10.0 };
                    (200, json!({"reward": r}).to_string())
                }
                _ => (404, "{}".into()),
            };
            let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
            let _ = req.respond(Response::from_string(text).with_status_code(status).with_header(header));
        }
    });
    Stub { endpoint: format!("http://127.0.0.1:{port}"), denoise_calls: calls }
}
