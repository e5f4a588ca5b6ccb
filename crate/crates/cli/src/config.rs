//! Experiment configuration: one JSON document, validated up front.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use umf_core::action::DEFAULT_EOS_PENALTY;
use umf_core::baselines::DtsConfig;
use umf_core::reward::MatchMode;
use umf_core::{RatioSchedule, RemaskStrategy, TokenId};

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub name: Option<String>,
    pub vocabularies: Vec<VocabConfig>,
    pub denoisers: Vec<DenoiserConfig>,
    pub problems: Vec<ProblemConfig>,
    pub actions: Vec<ActionConfig>,
    pub methods: Vec<MethodEntry>,
    pub budgets: Vec<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub schedule: Option<Vec<f64>>,
    #[serde(default = "default_true")]
    pub cache: bool,
    pub reward: RewardConfig,
    #[serde(default)]
    pub heldout: Option<RewardConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VocabConfig {
    /// Plain ids with no text form: eos 0, pad 1, mask appended.
    Toy { tag: String, size: usize },
    /// One token per character of `alphabet`.
    Chars { tag: String, alphabet: String },
    /// Token table from a codec file (path relative to the config).
    CodecFile { path: PathBuf },
    /// Tokenizer served next to a remote model.
    Remote {
        endpoint: String,
        model: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserConfig {
    /// Knows each problem's target inside `band = [lo, hi]` of mask ratio.
    Planted {
        id: String,
        vocab: String,
        band: (f64, f64),
        #[serde(default)]
        salt: Option<u64>,
    },
    /// True posterior; a point mass on each problem's target unless
    /// `support` is given.
    Exact {
        id: String,
        vocab: String,
        #[serde(default)]
        support: Option<Vec<(Vec<TokenId>, f64)>>,
    },
    Remote {
        id: String,
        endpoint: String,
        model: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

impl DenoiserConfig {
    pub fn id(&self) -> &str {
        match self {
            Self::Planted { id, .. } | Self::Exact { id, .. } | Self::Remote { id, .. } => id,
        }
    }

    fn vocab(&self) -> Option<&str> {
        match self {
            Self::Planted { vocab, .. } | Self::Exact { vocab, .. } => Some(vocab),
            Self::Remote { .. } => None,
        }
    }
}

/// Token ids, text (needs a codec), or a random draw over a toy vocabulary.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum TokensConfig {
    Ids(Vec<TokenId>),
    Text { text: String },
    Random { random: RandomTokens },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomTokens {
    pub seed: u64,
    pub len: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub id: String,
    pub vocab: String,
    #[serde(default)]
    pub prompt: Option<TokensConfig>,
    #[serde(default)]
    pub target: Option<TokensConfig>,
    #[serde(default)]
    pub gen_len: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub id: String,
    pub denoiser: String,
    pub temperature: f64,
    pub remask: RemaskStrategy,
    #[serde(default)]
    pub eos_suppression: bool,
    #[serde(default = "default_penalty")]
    pub eos_penalty: f64,
}

fn default_penalty() -> f64 {
    DEFAULT_EOS_PENALTY
}

/// A method is either a bare selector (`"umf"`) or an object with options.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(String),
    Full(MethodConfig),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: String,
    /// Column label; defaults to `kind`.
    #[serde(default)]
    pub label: Option<String>,
    /// Action ids: the action set for umf/dts_like, `[a]` for bon, `[a, b]`
    /// for pair. Defaults to all actions, the first, or the first two.
    #[serde(default)]
    pub actions: Option<Vec<String>>,
    #[serde(default)]
    pub cache: Option<bool>,
    #[serde(default)]
    pub c_exp: Option<f64>,
    #[serde(default)]
    pub width: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardConfig {
    /// Agreement with the problem target.
    ExactMatch {
        #[serde(default = "default_mode")]
        mode: MatchMode,
    },
    /// External test runner; `{problem_id}` in any argument is substituted.
    TestCommand {
        command: Vec<String>,
        #[serde(default = "default_concurrency")]
        concurrency: usize,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        retries: u32,
    },
}

fn default_mode() -> MatchMode {
    MatchMode::Fraction
}

fn default_concurrency() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Umf,
    Bon,
    Pair,
    DtsLike,
}

impl MethodKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "umf" => Some(Self::Umf),
            "bon" => Some(Self::Bon),
            "pair" => Some(Self::Pair),
            "dts_like" => Some(Self::DtsLike),
            _ => None,
        }
    }
}

/// A method with defaults filled in and action ids resolved to indices.
#[derive(Clone, Debug)]
pub struct Method {
    pub label: String,
    pub kind: MethodKind,
    pub actions: Vec<usize>,
    pub cache: bool,
    pub c_exp: f64,
    pub dts: DtsConfig,
}

/// Diagnostics collected during validation, each prefixed by its field path.
#[derive(Default)]
struct Diagnostics(Vec<String>);

impl Diagnostics {
    fn push(&mut self, path: impl std::fmt::Display, msg: impl std::fmt::Display) {
        self.0.push(format!("{path}: {msg}"));
    }
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    ids.filter(|id| !seen.insert(*id)).collect()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(vec![format!("{}: {}", if path == "." { "config" } else { &path }, e.inner())])
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn schedule(&self) -> RatioSchedule {
        match &self.schedule {
            Some(r) => RatioSchedule::new(r.clone()).expect("validated"),
            None => RatioSchedule::default(),
        }
    }

    pub fn vocab_tags(&self) -> Vec<Option<String>> {
        self.vocabularies
            .iter()
            .map(|v| match v {
                VocabConfig::Toy { tag, .. } | VocabConfig::Chars { tag, .. } => Some(tag.clone()),
                // known once the file or server has been read
                VocabConfig::CodecFile { .. } | VocabConfig::Remote { .. } => None,
            })
            .collect()
    }

    fn validate(&self) -> Result<(), CliError> {
        let mut d = Diagnostics::default();
        for (field, empty) in [
            ("vocabularies", self.vocabularies.is_empty()),
            ("denoisers", self.denoisers.is_empty()),
            ("problems", self.problems.is_empty()),
            ("actions", self.actions.is_empty()),
            ("methods", self.methods.is_empty()),
            ("budgets", self.budgets.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                d.push(field, "must not be empty");
            }
        }
        if let Some(r) = &self.schedule {
            if let Err(e) = RatioSchedule::new(r.clone()) {
                d.push("schedule", e);
            }
        }
        for (i, b) in self.budgets.iter().enumerate() {
            if *b == 0 {
                d.push(format!("budgets[{i}]"), "must be positive");
            }
        }
        let tags = self.vocab_tags();
        let open_tags = tags.iter().any(Option::is_none);
        let known = |tag: &str| open_tags || tags.iter().flatten().any(|t| t == tag);
        for (i, v) in self.vocabularies.iter().enumerate() {
            if let VocabConfig::Toy { size, .. } = v {
                if *size < 3 {
                    d.push(format!("vocabularies[{i}].size"), "a toy vocabulary needs at least 3 tokens");
                }
            }
        }
        for dup in duplicates(tags.iter().flatten().map(String::as_str)) {
            d.push("vocabularies", format!("duplicate tag `{dup}`"));
        }

        for (i, den) in self.denoisers.iter().enumerate() {
            if let Some(v) = den.vocab() {
                if !known(v) {
                    d.push(format!("denoisers[{i}].vocab"), format!("unknown vocabulary `{v}`"));
                }
            }
            if let DenoiserConfig::Planted { band: (lo, hi), .. } = den {
                if !(0.0 <= *lo && lo < hi && *hi <= 1.0) {
                    d.push(format!("denoisers[{i}].band"), "needs 0 <= lo < hi <= 1");
                }
            }
        }
        for dup in duplicates(self.denoisers.iter().map(DenoiserConfig::id)) {
            d.push("denoisers", format!("duplicate id `{dup}`"));
        }
        let needs_target = self.denoisers.iter().any(|x| matches!(x, DenoiserConfig::Planted { .. } | DenoiserConfig::Exact { support: None, .. }))
            || matches!(self.reward, RewardConfig::ExactMatch { .. })
            || matches!(self.heldout, Some(RewardConfig::ExactMatch { .. }));

        for (i, p) in self.problems.iter().enumerate() {
            if !known(&p.vocab) {
                d.push(format!("problems[{i}].vocab"), format!("unknown vocabulary `{}`", p.vocab));
            }
            match (&p.target, p.gen_len) {
                (None, None) => d.push(format!("problems[{i}]"), "needs `target` or `gen_len`"),
                (None, Some(_)) if needs_target => {
                    d.push(format!("problems[{i}].target"), "required by the planted/exact denoisers or the exact_match reward")
                }
                (_, Some(0)) => d.push(format!("problems[{i}].gen_len"), "must be positive"),
                _ => {}
            }
            if let Some(TokensConfig::Random { random }) = &p.target {
                if random.len == 0 {
                    d.push(format!("problems[{i}].target.random.len"), "must be positive");
                }
            }
        }
        for dup in duplicates(self.problems.iter().map(|p| p.id.as_str())) {
            d.push("problems", format!("duplicate id `{dup}`"));
        }

        for (i, a) in self.actions.iter().enumerate() {
            if !self.denoisers.iter().any(|x| x.id() == a.denoiser) {
                d.push(format!("actions[{i}].denoiser"), format!("unknown denoiser `{}`", a.denoiser));
            }
            if !(a.temperature >= 0.0 && a.temperature.is_finite()) {
                d.push(format!("actions[{i}].temperature"), "must be finite and >= 0");
            }
            if !(0.0..=1.0).contains(&a.eos_penalty) {
                d.push(format!("actions[{i}].eos_penalty"), "must lie in [0, 1]");
            }
        }
        for dup in duplicates(self.actions.iter().map(|a| a.id.as_str())) {
            d.push("actions", format!("duplicate id `{dup}`"));
        }

        let mut labels = Vec::new();
        for (i, m) in self.methods.iter().enumerate() {
            match self.resolve_method(m) {
                Ok(m) => labels.push(m.label),
                Err(msg) => d.push(format!("methods[{i}]"), msg),
            }
        }
        for dup in duplicates(labels.iter().map(String::as_str)) {
            d.push("methods", format!("duplicate label `{dup}`"));
        }
        match &self.reward {
            RewardConfig::TestCommand { command, concurrency } => {
                if command.is_empty() {
                    d.push("reward.command", "must not be empty");
                }
                if *concurrency == 0 {
                    d.push("reward.concurrency", "must be at least 1");
                }
            }
            RewardConfig::ExactMatch { .. } | RewardConfig::Remote { .. } => {}
        }
        if d.0.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(d.0))
        }
    }

    fn action_index(&self, id: &str) -> Result<usize, String> {
        self.actions.iter().position(|a| a.id == id).ok_or_else(|| format!("unknown action `{id}`"))
    }

    pub fn resolve_method(&self, entry: &MethodEntry) -> Result<Method, String> {
        let full = match entry {
            MethodEntry::Name(kind) => {
                MethodConfig { kind: kind.clone(), label: None, actions: None, cache: None, c_exp: None, width: None }
            }
            MethodEntry::Full(m) => m.clone(),
        };
        let kind = MethodKind::parse(&full.kind)
            .ok_or_else(|| format!("unknown method `{}` (expected umf, bon, pair or dts_like)", full.kind))?;
        let n = self.actions.len();
        let actions = match &full.actions {
            Some(ids) => ids.iter().map(|id| self.action_index(id)).collect::<Result<Vec<_>, _>>()?,
            None => match kind {
                MethodKind::Umf | MethodKind::DtsLike => (0..n).collect(),
                MethodKind::Bon => vec![0],
                MethodKind::Pair => (0..n.min(2)).collect(),
            },
        };
        match kind {
            MethodKind::Bon if actions.len() != 1 => return Err("bon takes exactly one action".into()),
            MethodKind::Pair if actions.len() != 2 => return Err("pair takes exactly two actions".into()),
            _ if actions.is_empty() => return Err("needs at least one action".into()),
            _ => {}
        }
        let c_exp = full.c_exp.unwrap_or(1.0);
        if !(c_exp >= 0.0 && c_exp.is_finite()) {
            return Err("c_exp must be finite and >= 0".into());
        }
        let width = full.width.unwrap_or(DtsConfig::default().width);
        if width == 0 {
            return Err("width must be at least 1".into());
        }
        Ok(Method {
            label: full.label.unwrap_or_else(|| full.kind.clone()),
            kind,
            actions,
            cache: full.cache.unwrap_or(self.cache),
            c_exp,
            dts: DtsConfig { width, c_exp, seed: 0 },
        })
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.iter().map(|m| self.resolve_method(m).expect("validated")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "vocabularies": [{"kind": "toy", "tag": "planted", "size": 8}],
        "denoisers": [
            {"kind": "planted", "id": "A", "vocab": "planted", "band": [0.5, 1.0]},
            {"kind": "planted", "id": "B", "vocab": "planted", "band": [0.0, 0.5]}
        ],
        "problems": [{"id": "p0", "vocab": "planted", "target": {"random": {"seed": 1, "len": 12}}}],
        "actions": [
            {"id": "A", "denoiser": "A", "temperature": 0.0, "remask": "entropy"},
            {"id": "B", "denoiser": "B", "temperature": 0.0, "remask": "entropy"}
        ],
        "methods": ["umf", "bon", {"kind": "pair", "actions": ["A", "B"]}],
        "budgets": [48, 96],
        "reward": {"kind": "exact_match"}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert!(c.cache);
        let m = c.methods();
        assert_eq!(m[0].actions, vec![0, 1]);
        assert_eq!(m[1].actions, vec![0]);
        assert_eq!(m[2].label, "pair");
    }

    fn errors(text: &str) -> Vec<String> {
        match Config::parse(text) {
            Err(CliError::Config(e)) => e,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn type_errors_name_the_field() {
        let bad = MINIMAL.replace(r#""temperature": 0.0, "remask": "entropy"}"#, r#""temperature": "hot", "remask": "entropy"}"#);
        let e = errors(&bad);
        assert!(e[0].starts_with("actions[0].temperature"), "{e:?}");
        let bad = MINIMAL.replace(r#""remask": "entropy"}"#, r#""remask": "sideways"}"#);
        assert!(errors(&bad)[0].starts_with("actions[0].remask"));
    }

    #[test]
    fn semantic_errors_are_collected() {
        let bad = MINIMAL
            .replace(r#""denoiser": "B""#, r#""denoiser": "C""#)
            .replace(r#""budgets": [48, 96]"#, r#""budgets": [0]"#)
            .replace(r#""band": [0.0, 0.5]"#, r#""band": [0.5, 0.5]"#);
        let e = errors(&bad);
        assert!(e.iter().any(|m| m.starts_with("actions[1].denoiser: unknown denoiser `C`")), "{e:?}");
        assert!(e.iter().any(|m| m.starts_with("budgets[0]")));
        assert!(e.iter().any(|m| m.starts_with("denoisers[1].band")));
    }

    #[test]
    fn method_arity_is_checked() {
        let bad = MINIMAL.replace(r#"{"kind": "pair", "actions": ["A", "B"]}"#, r#"{"kind": "pair", "actions": ["A"]}"#);
        assert!(errors(&bad).iter().any(|m| m.contains("pair takes exactly two actions")));
        let bad = MINIMAL.replace(r#""bon""#, r#""beam""#);
        assert!(errors(&bad).iter().any(|m| m.contains("unknown method `beam`")));
    }
}
