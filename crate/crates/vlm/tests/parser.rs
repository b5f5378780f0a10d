use mirage_vlm::client::{ChatClientConfig, Sampling};
use mirage_vlm::grammar::{stub_decompose, Decomposition, Pair};
use mirage_vlm::{decompose, ScriptedChatClient, StubChatClient, VlmError};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    instruction: String,
    pairs: Vec<Pair>,
}

fn corpus() -> Vec<Case> {
    serde_json::from_str(include_str!("data/grammar_corpus.json")).unwrap()
}

fn config(max_retries: usize) -> ChatClientConfig {
    ChatClientConfig {
        max_retries,
        escalation: (0..max_retries)
            .map(|i| Sampling {
                temperature: 0.3 + 0.2 * i as f64,
                top_p: 0.9,
            })
            .collect(),
        ..ChatClientConfig::default()
    }
}

/// Wraps a reply the way chat models tend to.
fn dress(i: usize, json: &str) -> String {
    match i % 3 {
        0 => json.to_string(),
        1 => format!("```json\n{json}\n```"),
        _ => format!("Here is the decomposition:\n{json}\nLet me know if you need more."),
    }
}

#[test]
fn corpus_has_fifty_cases() {
    assert_eq!(corpus().len(), 50);
}

#[test]
fn stub_matches_constructed_pairs() {
    for case in corpus() {
        let d = stub_decompose(&case.instruction).unwrap();
        assert_eq!(d.pairs, case.pairs, "{}", case.instruction);
        assert!(d.referents_are_spans_of(&case.instruction));
    }
}

#[test]
fn scripted_mock_agrees_with_stub() {
    let cfg = config(2);
    for (i, case) in corpus().into_iter().enumerate() {
        let reply = serde_json::to_string(&Decomposition { pairs: case.pairs.clone() }).unwrap();
        let mock = ScriptedChatClient::new([dress(i, &reply)]);
        let d = decompose(&case.instruction, &mock, &cfg).unwrap();
        assert_eq!(d.retries(), 0);
        assert_eq!(d.value, stub_decompose(&case.instruction).unwrap());
        assert!(d.value.referents_are_spans_of(&case.instruction));
    }
}

#[test]
fn stub_client_agrees_with_stub_function() {
    let stub = StubChatClient::default();
    let cfg = config(1);
    for case in corpus() {
        let d = decompose(&case.instruction, &stub, &cfg).unwrap();
        assert_eq!(d.value.pairs, case.pairs);
    }
}

#[test]
fn prose_then_valid_records_one_retry() {
    let mock = ScriptedChatClient::new([
        "The instruction edits two cats.".to_string(),
        r#"[{"refer": "the leftmost cat", "edit": "change to a dog"}, {"refer": "the rightmost cat", "edit": "remove"}]"#
            .to_string(),
    ]);
    let cfg = config(3);
    let d = decompose("Change the leftmost cat to a dog; remove the rightmost cat", &mock, &cfg).unwrap();
    assert_eq!(d.retries(), 1);
    assert_eq!(d.value.len(), 2);
    let reqs = mock.requests();
    assert_eq!(reqs.len(), 2);
    assert_eq!(reqs[0].sampling, cfg.base_sampling());
    assert_eq!(reqs[1].sampling, cfg.escalation[0]);
    assert!(reqs[1].last_user_text().contains("The validator reported"));
}

#[test]
fn non_verbatim_referent_is_repaired() {
    let mock = ScriptedChatClient::new([
        r#"[{"refer": "the cat on the left", "edit": "remove"}]"#,
        r#"[{"refer": "the left cat", "edit": "remove"}]"#,
    ]);
    let d = decompose("remove the left cat", &mock, &config(1)).unwrap();
    assert_eq!(d.retries(), 1);
}

#[test]
fn exhausted_retries_carry_last_output() {
    for max_retries in 0..4 {
        let mock = ScriptedChatClient::new((0..10).map(|i| format!("no json here {i}")));
        let err = decompose("remove the left cat", &mock, &config(max_retries)).unwrap_err();
        match err {
            VlmError::Exhausted { attempts, last_output, .. } => {
                assert_eq!(attempts, max_retries + 1);
                assert_eq!(last_output, format!("no json here {max_retries}"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(mock.requests().len(), max_retries + 1);
    }
}

#[test]
fn empty_list_is_an_error() {
    let mock = ScriptedChatClient::new(["[]", "[]"]);
    assert!(matches!(
        decompose("remove the left cat", &mock, &config(1)),
        Err(VlmError::Exhausted { .. })
    ));
    assert!(matches!(decompose("  ", &mock, &config(1)), Err(VlmError::Empty(_))));
}

#[test]
fn sampling_resets_between_operations() {
    let mock = ScriptedChatClient::new([
        "nope",
        r#"[{"refer": "the left cat", "edit": "remove"}]"#,
        r#"[{"refer": "the left cat", "edit": "remove"}]"#,
    ]);
    let cfg = config(2);
    decompose("remove the left cat", &mock, &cfg).unwrap();
    decompose("remove the left cat", &mock, &cfg).unwrap();
    let s: Vec<Sampling> = mock.requests().iter().map(|r| r.sampling).collect();
    assert_eq!(s, vec![cfg.base_sampling(), cfg.escalation[0], cfg.base_sampling()]);
}

proptest! {
    #[test]
    fn retries_never_exceed_budget(max_retries in 0usize..5, bad in 0usize..8) {
        let mut replies: Vec<String> = (0..bad).map(|_| "prose".to_string()).collect();
        replies.push(r#"[{"refer": "the left cat", "edit": "remove"}]"#.into());
        let mock = ScriptedChatClient::new(replies);
        let result = decompose("remove the left cat", &mock, &config(max_retries));
        prop_assert!(mock.requests().len() <= max_retries + 1);
        match result {
            Ok(d) => prop_assert_eq!(d.retries(), bad),
            Err(_) => prop_assert!(bad > max_retries),
        }
    }

    #[test]
    fn stub_is_pure_and_spans_verbatim(i in 0usize..50) {
        let c = &corpus()[i];
        let a = stub_decompose(&c.instruction).unwrap();
        let b = stub_decompose(&c.instruction).unwrap();
        prop_assert_eq!(&a, &b);
        let back: Decomposition = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        prop_assert_eq!(back, a);
    }
}
