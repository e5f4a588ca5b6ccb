use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umf_core::tokmap::{map_state, Codec, CodecFile, SpecialIds, ToyCodec};
use umf_core::{Error, MaskedState, TokenId};

const ALPHABET: &str = "abcdef ():=+\n";

fn codecs() -> (ToyCodec, ToyCodec) {
    let chars = ToyCodec::chars("chars", ALPHABET).unwrap();
    let pieces = [
        "def ", "return", " (", "):\n", "ab", "cd", "ef", "  ", "a", "b", "c", "d", "e", "f", " ", "(", ")", ":", "=", "+", "\n",
        "re", "t", "u", "r", "n",
    ];
    let pieces = ToyCodec::with_pieces("pieces", pieces.iter().map(|s| s.to_string())).unwrap();
    (chars, pieces)
}

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let alphabet: Vec<char> = ALPHABET.chars().collect();
    let len = rng.gen_range(1..=max);
    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

/// Committed runs separated by masked gaps, optionally ended by EoS; every
/// gap is long enough to absorb any growth of the run before it.
fn random_state(codec: &dyn Codec, rng: &mut ChaCha8Rng) -> (MaskedState, Vec<String>) {
    let v = codec.vocab();
    let prompt = codec.encode(&random_text(rng, 6)).unwrap();
    let mut gen: Vec<TokenId> = Vec::new();
    let mut runs = Vec::new();
    for _ in 0..rng.gen_range(1..4) {
        let text = random_text(rng, 8);
        gen.extend(codec.encode(&text).unwrap());
        gen.extend(std::iter::repeat_n(v.mask_id, text.chars().count() + rng.gen_range(0..3)));
        runs.push(text);
    }
    if rng.gen_bool(0.3) {
        gen.push(v.eos_id);
        gen.push(v.pad_id);
    }
    (MaskedState::new(v, prompt, gen).unwrap(), runs)
}

fn committed_text(codec: &dyn Codec, ids: &[TokenId]) -> String {
    let v = codec.vocab();
    let plain: Vec<TokenId> = ids.iter().copied().filter(|&t| !v.is_special(t)).collect();
    codec.decode(&plain).unwrap()
}

fn specials(codec: &dyn Codec, ids: &[TokenId]) -> (usize, usize) {
    let v = codec.vocab();
    (ids.iter().filter(|&&t| t == v.eos_id).count(), ids.iter().filter(|&&t| t == v.pad_id).count())
}

#[test]
fn corpus_of_one_hundred_states_maps_both_ways() {
    let (chars, pieces) = codecs();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let (src, dst): (&dyn Codec, &dyn Codec) = if case % 2 == 0 { (&chars, &pieces) } else { (&pieces, &chars) };
        let (state, runs) = random_state(src, &mut rng);
        let mapped = map_state(&state, src, dst).unwrap_or_else(|e| panic!("case {case}: {e}"));
        assert_eq!(mapped.vocab(), &dst.vocab().tag, "case {case}");
        assert_eq!(mapped.gen_len(), state.gen_len(), "case {case}");
        assert_eq!(committed_text(dst, mapped.prompt()), committed_text(src, state.prompt()), "case {case}");
        assert_eq!(committed_text(dst, mapped.gen()), runs.concat(), "case {case}");
        assert_eq!(specials(dst, mapped.gen()), specials(src, state.gen()), "case {case}");
        // only slots freed by a shorter encoding or borrowed masks change status
        assert!(mapped.masked_count() + mapped.gen().iter().filter(|&&t| !dst.vocab().is_special(t)).count() <= mapped.gen_len());
    }
}

#[test]
fn growth_without_free_slots_is_a_mismatch() {
    let (chars, pieces) = codecs();
    let gen = pieces.encode("def (a):\nfeed").unwrap();
    assert!(gen.len() < "def (a):\nfeed".len());
    let state = MaskedState::new(pieces.vocab(), vec![], gen.clone()).unwrap();
    assert!(matches!(map_state(&state, &pieces, &chars), Err(Error::CodecMismatch(_))));

    // a single trailing mask is not enough either
    let mut short = gen.clone();
    short.push(pieces.vocab().mask_id);
    let state = MaskedState::new(pieces.vocab(), vec![], short).unwrap();
    assert!(matches!(map_state(&state, &pieces, &chars), Err(Error::CodecMismatch(_))));

    // enough masks: the run borrows them
    let mut roomy = gen;
    roomy.extend(std::iter::repeat_n(pieces.vocab().mask_id, 10));
    let state = MaskedState::new(pieces.vocab(), vec![], roomy).unwrap();
    let mapped = map_state(&state, &pieces, &chars).unwrap();
    assert_eq!(committed_text(&chars, mapped.gen()), "def (a):\nfeed");
    assert_eq!(mapped.masked_count(), state.gen_len() - "def (a):\nfeed".len());
}

#[test]
fn text_outside_the_target_alphabet_is_a_mismatch() {
    let (chars, _) = codecs();
    let wide = ToyCodec::chars("wide", "abcxyz").unwrap();
    let gen = wide.encode("axb").unwrap();
    let state = MaskedState::new(wide.vocab(), vec![], gen).unwrap();
    assert!(matches!(map_state(&state, &wide, &chars), Err(Error::CodecMismatch(_))));
}

#[test]
fn codec_files_load_from_json() {
    let file: CodecFile = serde_json::from_str(
        r#"{"vocab": "tiny", "tokens": {"2": "ab", "3": "a", "4": "b"}, "special": {"mask": 5, "eos": 0, "pad": 1}}"#,
    )
    .unwrap();
    assert_eq!(file.special, SpecialIds { mask: 5, eos: 0, pad: 1 });
    let codec = ToyCodec::from_file_contents(file).unwrap();
    assert_eq!(codec.encode("aba").unwrap(), vec![2, 3]);
    assert_eq!(codec.decode(&[4, 2]).unwrap(), "bab");
}
