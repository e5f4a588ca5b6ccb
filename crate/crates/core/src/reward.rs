//! Terminal-state scoring. Every provider returns a reward in `[0, 1]`.

use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::JsonClient;
use crate::state::MaskedState;
use crate::tokmap::CodecRegistry;
use crate::vocab::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub reward: f64,
    /// Set when the score is a documented fallback (e.g. a crashed test
    /// command scored as 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl RewardOutcome {
    pub fn new(reward: f64) -> Self {
        Self { reward, flag: None }
    }
}

pub trait RewardProvider: Send + Sync {
    fn score(&self, terminal: &MaskedState) -> Result<RewardOutcome>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Fraction of generation positions equal to the target.
    Fraction,
    /// 1 if every position matches, else 0.
    All,
}

#[derive(Clone, Debug)]
pub struct ExactMatchReward {
    target: Vec<TokenId>,
    mode: MatchMode,
}

impl ExactMatchReward {
    pub fn new(target: Vec<TokenId>, mode: MatchMode) -> Self {
        Self { target, mode }
    }

    pub fn fraction(target: Vec<TokenId>) -> Self {
        Self::new(target, MatchMode::Fraction)
    }
}

impl RewardProvider for ExactMatchReward {
    fn score(&self, terminal: &MaskedState) -> Result<RewardOutcome> {
        if !terminal.is_terminal() {
            return Err(Error::NotTerminal);
        }
        if terminal.gen_len() != self.target.len() {
            return Err(Error::InvalidState(format!(
                "terminal has {} generated tokens, target has {}",
                terminal.gen_len(),
                self.target.len()
            )));
        }
        let hits = terminal.gen().iter().zip(&self.target).filter(|(a, b)| a == b).count();
        let reward = match self.mode {
            MatchMode::Fraction => hits as f64 / self.target.len() as f64,
            MatchMode::All => f64::from(u8::from(hits == self.target.len())),
        };
        Ok(RewardOutcome::new(reward))
    }
}

/// Bounds how many external commands run at once.
#[derive(Debug)]
pub struct ConcurrencyLimit {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl ConcurrencyLimit {
    pub fn new(slots: usize) -> Arc<Self> {
        Arc::new(Self { slots: Mutex::new(slots.max(1)), freed: Condvar::new() })
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut n = self.slots.lock().expect("limit lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("limit lock");
        }
        *n -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a ConcurrencyLimit);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("limit lock") += 1;
        self.0.freed.notify_one();
    }
}

/// Parses the last `PASS <passed>/<total>` line of `stdout`.
pub fn parse_pass_line(stdout: &str) -> Option<(u64, u64)> {
    let re = Regex::new(r"^\s*PASS\s+(\d+)/(\d+)\s*$").expect("static regex");
    stdout.lines().rev().find_map(|line| {
        let c = re.captures(line)?;
        Some((c[1].parse().ok()?, c[2].parse().ok()?))
    })
}

/// Runs an external test command with the decoded terminal on stdin and
/// scores it as `passed / total` from its `PASS p/t` line. `{problem_id}`
/// in the argument list is substituted.
pub struct TestCommandReward {
    command: Vec<String>,
    problem_id: String,
    codecs: CodecRegistry,
    limit: Arc<ConcurrencyLimit>,
}

impl TestCommandReward {
    pub fn new(command: Vec<String>, problem_id: &str, codecs: CodecRegistry, limit: Arc<ConcurrencyLimit>) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidArgument("test command is empty".into()));
        }
        Ok(Self { command, problem_id: problem_id.to_string(), codecs, limit })
    }

    /// Scores raw text; exposed for callers that already decoded.
    pub fn score_text(&self, text: &str) -> Result<RewardOutcome> {
        let args: Vec<String> = self.command.iter().map(|a| a.replace("{problem_id}", &self.problem_id)).collect();
        let _slot = self.limit.acquire();
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::CommandFailed(format!("cannot start `{}`: {e}", args[0])))?;
        if let Some(mut stdin) = child.stdin.take() {
            // a command that exits without reading closes the pipe early
            let _ = stdin.write_all(text.as_bytes());
        }
        let out = child.wait_with_output()?;
        let stdout = String::from_utf8_lossy(&out.stdout);
        match parse_pass_line(&stdout) {
            Some((_, 0)) => Err(Error::Parse("test command reported zero tests".into())),
            Some((passed, total)) if passed > total => {
                Err(Error::Parse(format!("test command reported {passed}/{total}")))
            }
            Some((passed, total)) => Ok(RewardOutcome::new(passed as f64 / total as f64)),
            None if !out.status.success() => Ok(RewardOutcome {
                reward: 0.0,
                flag: Some(format!("command_failed: {}", out.status)),
            }),
            None => Err(Error::Parse("no `PASS <int>/<int>` line in test command output".into())),
        }
    }
}

impl RewardProvider for TestCommandReward {
    fn score(&self, terminal: &MaskedState) -> Result<RewardOutcome> {
        if !terminal.is_terminal() {
            return Err(Error::NotTerminal);
        }
        self.score_text(&self.codecs.decode_generation(terminal)?)
    }
}

#[derive(Serialize, Deserialize)]
pub struct ScoreRequest {
    pub text: String,
    pub problem_id: String,
}

#[derive(Serialize, Deserialize)]
pub struct ScoreResponse {
    pub reward: f64,
}

/// Scores via `POST /v1/score`. Out-of-range rewards are protocol errors,
/// not clamped.
pub struct RemoteReward {
    client: JsonClient,
    problem_id: String,
    codecs: CodecRegistry,
    retries: u32,
}

impl RemoteReward {
    pub fn new(endpoint: &str, problem_id: &str, codecs: CodecRegistry, timeout: Duration, retries: u32) -> Self {
        Self { client: JsonClient::new(endpoint, timeout), problem_id: problem_id.to_string(), codecs, retries }
    }

    pub fn score_text(&self, text: &str) -> Result<RewardOutcome> {
        let req = ScoreRequest { text: text.to_string(), problem_id: self.problem_id.clone() };
        let mut attempt = 0;
        loop {
            match self.client.post::<_, ScoreResponse>("/v1/score", &req) {
                Ok(resp) if (0.0..=1.0).contains(&resp.reward) => return Ok(RewardOutcome::new(resp.reward)),
                Ok(resp) => {
                    return Err(Error::RemoteProtocol(format!("reward {} is outside [0, 1]", resp.reward)))
                }
                Err(e) if attempt >= self.retries => return Err(e),
                Err(_) => attempt += 1,
            }
        }
    }
}

impl RewardProvider for RemoteReward {
    fn score(&self, terminal: &MaskedState) -> Result<RewardOutcome> {
        if !terminal.is_terminal() {
            return Err(Error::NotTerminal);
        }
        self.score_text(&self.codecs.decode_generation(terminal)?)
    }
}
