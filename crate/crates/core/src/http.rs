//! Blocking JSON-over-HTTP client shared by the remote denoiser, codec,
//! and reward backends. Every failure maps to [`Error::RemoteProtocol`].

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone)]
pub struct JsonClient {
    agent: Agent,
    base: String,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient").field("base", &self.base).finish()
    }
}

impl JsonClient {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, base: endpoint.trim_end_matches('/').to_string() }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let resp = self
            .agent
            .get(&self.url(path))
            .call()
            .map_err(|e| Error::RemoteProtocol(format!("GET {path}: {e}")))?;
        Self::decode(path, resp)
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self
            .agent
            .post(&self.url(path))
            .send_json(body)
            .map_err(|e| Error::RemoteProtocol(format!("POST {path}: {e}")))?;
        Self::decode(path, resp)
    }

    /// Status code of a POST, without interpreting the body.
    pub fn post_status<B: Serialize>(&self, path: &str, body: &B) -> Result<u16> {
        let resp = self
            .agent
            .post(&self.url(path))
            .send_json(body)
            .map_err(|e| Error::RemoteProtocol(format!("POST {path}: {e}")))?;
        Ok(resp.status().as_u16())
    }

    fn decode<T: DeserializeOwned>(path: &str, mut resp: ureq::http::Response<ureq::Body>) -> Result<T> {
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Error::RemoteProtocol(format!("{path} returned HTTP {status}")));
        }
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| Error::RemoteProtocol(format!("{path}: malformed response: {e}")))
    }
}
