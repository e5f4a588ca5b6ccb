mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{spawn, Fault, MASK, MODEL};
use umf_core::conformance::run_conformance;
use umf_core::denoiser::{DenoiserRegistry, RemoteDenoiser};
use umf_core::reward::RemoteReward;
use umf_core::tokmap::{map_state, Codec, CodecRegistry, RemoteCodec, ToyCodec};
use umf_core::{Error, MaskedState, NfeLedger};

const T: Duration = Duration::from_secs(5);

fn registry(endpoint: &str, timeout: Duration) -> (DenoiserRegistry, umf_core::Vocabulary) {
    let d = RemoteDenoiser::connect_with_timeout(endpoint, MODEL, timeout).unwrap();
    let v = umf_core::Denoiser::vocab(&d).clone();
    (DenoiserRegistry::new().with("r", Arc::new(d)), v)
}

#[test]
fn three_masked_positions_give_three_rows() {
    let stub = spawn(Fault::None);
    let (reg, v) = registry(&stub.endpoint, T);
    let s = MaskedState::new(&v, vec![5], vec![MASK, 7, MASK, MASK]).unwrap();
    let ledger = NfeLedger::unbounded();
    let out = reg.evaluate("r", &s, &ledger).unwrap();
    assert_eq!(out.positions(), &[1, 3, 4]);
    assert_eq!(out.rows().count(), 3);
    assert_eq!(ledger.consumed(), 1);
    assert_eq!(stub.denoise_calls.load(std::sync::atomic::Ordering::SeqCst), 1);
}

fn failing_call(fault: Fault, timeout: Duration) {
    let stub = spawn(fault);
    let (reg, v) = registry(&stub.endpoint, timeout);
    let s = MaskedState::new(&v, vec![], vec![MASK, MASK, MASK]).unwrap();
    let ledger = NfeLedger::unbounded();
    let err = reg.evaluate("r", &s, &ledger).unwrap_err();
    assert!(matches!(err, Error::RemoteProtocol(_)), "{fault:?}: {err}");
    assert_eq!(ledger.consumed(), 0, "{fault:?}");
}

#[test]
fn short_rows_are_a_protocol_error() {
    failing_call(Fault::ShortRows, T);
}

#[test]
fn narrow_rows_are_a_protocol_error() {
    failing_call(Fault::NarrowRows, T);
}

#[test]
fn server_errors_cost_nothing() {
    failing_call(Fault::ServerError, T);
    failing_call(Fault::Garbage, T);
}

#[test]
fn timeouts_cost_nothing() {
    failing_call(Fault::Slow, Duration::from_millis(150));
}

#[test]
fn unreachable_endpoint_is_a_protocol_error() {
    let err = RemoteDenoiser::connect_with_timeout("http://127.0.0.1:1", MODEL, T).unwrap_err();
    assert!(matches!(err, Error::RemoteProtocol(_)));
}

#[test]
fn remote_codec_round_trips_and_maps() {
    let stub = spawn(Fault::None);
    let remote = RemoteCodec::connect(&stub.endpoint, MODEL, T).unwrap();
    let ids = remote.encode("def f():").unwrap();
    assert_eq!(remote.decode(&ids).unwrap(), "def f():");

    let chars = ToyCodec::chars("chars", "abcdef ():").unwrap();
    let mut gen = chars.encode("def f():").unwrap();
    gen.push(chars.vocab().mask_id);
    let s = MaskedState::new(chars.vocab(), vec![], gen).unwrap();
    let mapped = map_state(&s, &chars, &remote).unwrap();
    assert_eq!(mapped.masked_count(), 1);
    assert_eq!(remote.decode(&mapped.gen()[..8]).unwrap(), "def f():");
}

#[test]
fn remote_reward_passthrough_and_range() {
    let chars = ToyCodec::chars("chars", "abcde").unwrap();
    let v = chars.vocab().clone();
    let codecs = CodecRegistry::new().with(Arc::new(chars.clone()));
    let s = MaskedState::new(&v, vec![], chars.encode("abcde").unwrap()).unwrap();

    let stub = spawn(Fault::None);
    let r = RemoteReward::new(&stub.endpoint, "p", codecs.clone(), T, 0);
    assert_eq!(umf_core::RewardProvider::score(&r, &s).unwrap().reward, 0.5);

    let bad = spawn(Fault::RewardOutOfRange);
    let r = RemoteReward::new(&bad.endpoint, "p", codecs, T, 2);
    assert!(matches!(umf_core::RewardProvider::score(&r, &s), Err(Error::RemoteProtocol(_))));
}

#[test]
fn remote_reward_timeout_is_a_protocol_error() {
    let r = RemoteReward::new("http://127.0.0.1:1", "p", CodecRegistry::new(), Duration::from_millis(100), 1);
    assert!(matches!(r.score_text("x"), Err(Error::RemoteProtocol(_))));
}

#[test]
fn conforming_stub_passes_the_suite() {
    let stub = spawn(Fault::None);
    let report = run_conformance(&stub.endpoint, T);
    assert!(report.all_passed(), "{report:#?}");
    let names: Vec<_> = report.checks.iter().map(|c| c.name).collect();
    for want in ["models_listed", "special_tokens", "denoise_shape", "encode_decode_round_trip", "zero_masked_is_400", "unknown_model_is_404"] {
        assert!(names.contains(&want), "missing {want}");
    }
}

#[test]
fn suite_catches_broken_servers() {
    let failed = |fault| {
        let stub = spawn(fault);
        run_conformance(&stub.endpoint, T).checks.into_iter().filter(|c| !c.passed).map(|c| c.name).collect::<Vec<_>>()
    };
    assert_eq!(failed(Fault::ShortRows), vec!["denoise_shape"]);
    assert_eq!(failed(Fault::Lenient), vec!["zero_masked_is_400", "unknown_model_is_404"]);
    let dead = run_conformance("http://127.0.0.1:1", T);
    assert!(!dead.all_passed());
}
