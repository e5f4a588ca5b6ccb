//! Moving states between vocabularies.
//!
//! Special tokens (mask, EoS, pad) map id-to-id. Maximal runs of committed
//! ordinary tokens are decoded to text by the source codec and re-encoded
//! by the target codec. The generation segment keeps its length: a run that
//! re-encodes shorter leaves its freed slots masked (directly after the
//! run, joining any masked run that follows), and a run that re-encodes
//! longer borrows slots from the masked run right after it. If there are
//! not enough masked slots to borrow, mapping fails with
//! [`Error::CodecMismatch`]; nothing is ever truncated.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::denoiser::remote::list_models;
use crate::error::{Error, Result};
use crate::http::JsonClient;
use crate::state::MaskedState;
use crate::vocab::{TokenId, VocabTag, Vocabulary};

pub trait Codec: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Text of a run of ordinary (non-special) tokens.
    fn decode(&self, ids: &[TokenId]) -> Result<String>;

    fn encode(&self, text: &str) -> Result<Vec<TokenId>>;
}

/// On-disk toy codec: token id → text piece, plus special ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecFile {
    pub vocab: String,
    pub tokens: HashMap<TokenId, String>,
    pub special: SpecialIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub mask: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
}

/// Table-driven codec. Encoding is greedy longest-match over the pieces.
#[derive(Clone, Debug)]
pub struct ToyCodec {
    vocab: Vocabulary,
    pieces: Vec<Option<String>>,
    by_text: HashMap<String, TokenId>,
    longest: usize,
}

impl ToyCodec {
    pub fn from_file_contents(file: CodecFile) -> Result<Self> {
        let max_id = file
            .tokens
            .keys()
            .copied()
            .chain([file.special.eos, file.special.pad])
            .max()
            .unwrap_or(0);
        let size = (max_id as usize + 1).max(file.special.mask as usize);
        let vocab = Vocabulary::new(file.vocab.as_str(), size, file.special.mask, file.special.eos, file.special.pad)?;
        let mut pieces = vec![None; size];
        let mut by_text = HashMap::new();
        for (&id, text) in &file.tokens {
            if vocab.is_special(id) {
                return Err(Error::InvalidVocabulary(format!("special token {id} also has a text piece")));
            }
            if text.is_empty() {
                return Err(Error::InvalidVocabulary(format!("token {id} has an empty piece")));
            }
            if by_text.insert(text.clone(), id).is_some() {
                return Err(Error::InvalidVocabulary(format!("piece {text:?} is listed twice")));
            }
            pieces[id as usize] = Some(text.clone());
        }
        let longest = by_text.keys().map(|t| t.chars().count()).max().unwrap_or(0);
        Ok(Self { vocab, pieces, by_text, longest })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CodecFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file_contents(file)
    }

    /// One token per character of `alphabet`, after eos (0) and pad (1);
    /// mask appended at the end.
    pub fn chars(name: &str, alphabet: &str) -> Result<Self> {
        Self::with_pieces(name, alphabet.chars().map(String::from))
    }

    /// Codec over the given pieces, after eos (0) and pad (1).
    pub fn with_pieces(name: &str, pieces: impl IntoIterator<Item = String>) -> Result<Self> {
        let tokens: HashMap<TokenId, String> = pieces.into_iter().enumerate().map(|(i, p)| (i as TokenId + 2, p)).collect();
        let mask = tokens.len() as TokenId + 2;
        Self::from_file_contents(CodecFile {
            vocab: name.to_string(),
            tokens,
            special: SpecialIds { mask, eos: 0, pad: 1 },
        })
    }
}

impl Codec for ToyCodec {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            match self.pieces.get(id as usize).and_then(Option::as_ref) {
                Some(p) => out.push_str(p),
                None => return Err(Error::UndeclaredSpecialToken(id)),
            }
        }
        Ok(out)
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < chars.len() {
            let max = self.longest.min(chars.len() - i);
            for n in (1..=max).rev() {
                let start = chars[i].0;
                let end = chars.get(i + n).map_or(text.len(), |c| c.0);
                if let Some(&id) = self.by_text.get(&text[start..end]) {
                    out.push(id);
                    i += n;
                    continue 'outer;
                }
            }
            return Err(Error::CodecMismatch(format!(
                "vocabulary `{}` cannot encode {:?}",
                self.vocab.tag, chars[i].1
            )));
        }
        Ok(out)
    }
}

/// Codec served by a denoiser server's `/v1/encode` and `/v1/decode`.
#[derive(Debug)]
pub struct RemoteCodec {
    client: JsonClient,
    model_id: String,
    vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
pub struct EncodeRequest {
    pub model_id: String,
    pub text: String,
}

#[derive(Serialize, Deserialize)]
pub struct EncodeResponse {
    pub tokens: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
pub struct DecodeRequest {
    pub model_id: String,
    pub tokens: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
pub struct DecodeResponse {
    pub text: String,
}

impl RemoteCodec {
    pub fn connect(endpoint: &str, model_id: &str, timeout: Duration) -> Result<Self> {
        let client = JsonClient::new(endpoint, timeout);
        let info = list_models(&client)?
            .into_iter()
            .find(|m| m.id == model_id)
            .ok_or_else(|| Error::RemoteProtocol(format!("server does not list model `{model_id}`")))?;
        let vocab = info.vocabulary().map_err(|e| Error::RemoteProtocol(e.to_string()))?;
        Ok(Self { client, model_id: model_id.to_string(), vocab })
    }
}

impl Codec for RemoteCodec {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let req = DecodeRequest { model_id: self.model_id.clone(), tokens: ids.to_vec() };
        Ok(self.client.post::<_, DecodeResponse>("/v1/decode", &req)?.text)
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let req = EncodeRequest { model_id: self.model_id.clone(), text: text.to_string() };
        Ok(self.client.post::<_, EncodeResponse>("/v1/encode", &req)?.tokens)
    }
}

fn map_special(id: TokenId, src: &Vocabulary, dst: &Vocabulary) -> TokenId {
    if id == src.mask_id {
        dst.mask_id
    } else if id == src.eos_id {
        dst.eos_id
    } else {
        dst.pad_id
    }
}

fn remap_run(run: &[TokenId], src: &dyn Codec, dst: &dyn Codec) -> Result<Vec<TokenId>> {
    let text = src.decode(run)?;
    let ids = dst.encode(&text)?;
    if dst.vocab().masked_column().is_some_and(|m| ids.contains(&(m as TokenId)))
        || ids.iter().any(|&t| dst.vocab().is_special(t))
    {
        return Err(Error::CodecMismatch(format!("{text:?} re-encodes to special tokens")));
    }
    let back = dst.decode(&ids)?;
    if back != text {
        return Err(Error::CodecMismatch(format!("{text:?} does not round-trip (got {back:?})")));
    }
    Ok(ids)
}

fn map_prompt(prompt: &[TokenId], src: &dyn Codec, dst: &dyn Codec) -> Result<Vec<TokenId>> {
    let (sv, dv) = (src.vocab(), dst.vocab());
    let mut out = Vec::with_capacity(prompt.len());
    let mut i = 0;
    while i < prompt.len() {
        if sv.is_special(prompt[i]) {
            out.push(map_special(prompt[i], sv, dv));
            i += 1;
            continue;
        }
        let end = (i..prompt.len()).find(|&j| sv.is_special(prompt[j])).unwrap_or(prompt.len());
        out.extend(remap_run(&prompt[i..end], src, dst)?);
        i = end;
    }
    Ok(out)
}

/// Maps `state` from the source codec's vocabulary into the target's.
pub fn map_state(state: &MaskedState, src: &dyn Codec, dst: &dyn Codec) -> Result<MaskedState> {
    let (sv, dv) = (src.vocab(), dst.vocab());
    if state.vocab() != &sv.tag {
        return Err(Error::InvalidState(format!(
            "state is in vocabulary `{}`, source codec is `{}`",
            state.vocab(),
            sv.tag
        )));
    }
    if sv.tag == dv.tag {
        return Ok(state.clone());
    }
    let prompt = map_prompt(state.prompt(), src, dst)?;
    let gen = state.gen();
    let mut out = Vec::with_capacity(gen.len());
    let mut i = 0;
    while i < gen.len() {
        if sv.is_special(gen[i]) {
            out.push(map_special(gen[i], sv, dv));
            i += 1;
            continue;
        }
        let end = (i..gen.len()).find(|&j| sv.is_special(gen[j])).unwrap_or(gen.len());
        let ids = remap_run(&gen[i..end], src, dst)?;
        let slot = end - i;
        if ids.len() <= slot {
            out.extend_from_slice(&ids);
            out.extend(std::iter::repeat(dv.mask_id).take(slot - ids.len()));
            i = end;
        } else {
            let extra = ids.len() - slot;
            let free = gen[end..].iter().take_while(|&&t| t == sv.mask_id).count();
            if free < extra {
                return Err(Error::CodecMismatch(format!(
                    "run at generation offset {i} grows by {extra} tokens but only {free} masked slots follow"
                )));
            }
            out.extend_from_slice(&ids);
            i = end + extra;
        }
    }
    MaskedState::new(dv, prompt, out)
}

/// Codecs by vocabulary.
#[derive(Clone, Default)]
pub struct CodecRegistry {
    codecs: IndexMap<VocabTag, Arc<dyn Codec>>,
}

impl CodecRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, codec: Arc<dyn Codec>) -> &mut Self {
        self.codecs.insert(codec.vocab().tag.clone(), codec);
        self
    }

    pub fn with(mut self, codec: Arc<dyn Codec>) -> Self {
        self.register(codec);
        self
    }

    pub fn get(&self, tag: &VocabTag) -> Result<&Arc<dyn Codec>> {
        self.codecs.get(tag).ok_or_else(|| Error::MissingCodec(tag.to_string()))
    }

    pub fn map(&self, state: &MaskedState, to: &VocabTag) -> Result<MaskedState> {
        if state.vocab() == to {
            return Ok(state.clone());
        }
        map_state(state, self.get(state.vocab())?.as_ref(), self.get(to)?.as_ref())
    }

    /// Text of a terminal's generation segment: stops at the first EoS,
    /// skips pad.
    pub fn decode_generation(&self, state: &MaskedState) -> Result<String> {
        let codec = self.get(state.vocab())?;
        let v = codec.vocab();
        let ids: Vec<TokenId> = state
            .gen()
            .iter()
            .copied()
            .take_while(|&t| t != v.eos_id)
            .filter(|&t| t != v.pad_id)
            .collect();
        if ids.contains(&v.mask_id) {
            return Err(Error::NotTerminal);
        }
        codec.decode(&ids)
    }
}
