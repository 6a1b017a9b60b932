mod common;

use std::sync::Arc;

use catbn::session::{entropy, expected_entropy, information_gain, Session, TerminationRule};
use catbn::{Evidence, InferenceEngine, Role};
use common::{brute_h, brute_ig, brute_posteriors, random_evidence, random_network, two_node};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gains_match_enumeration_and_are_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 300 {
        let net = random_network(&mut rng, 0.15);
        let e = random_evidence(&mut rng, &net);
        if brute_posteriors(&net, &e).0 == 0.0 {
            continue;
        }
        let open: Vec<usize> = (0..net.len()).filter(|v| !e.contains(*v)).collect();
        if open.is_empty() {
            continue;
        }
        let q = open[rng.random_range(0..open.len())];
        let engine = InferenceEngine::new(net.clone()).unwrap();
        let ig = information_gain(&engine, &e, q).unwrap();
        assert!(ig >= -1e-9, "negative gain {ig}");
        assert!((ig - brute_ig(&net, &e, q)).abs() < 1e-9);
        assert!((entropy(&engine, &e).unwrap() - brute_h(&net, &e)).abs() < 1e-9);
        checked += 1;
    }
}

#[test]
fn worked_example_values() {
    let net = two_node();
    let engine = InferenceEngine::new(net.clone()).unwrap();
    let e = Evidence::new();
    let h = entropy(&engine, &e).unwrap();
    assert!((h - 0.673012).abs() < 1e-6);
    assert!((h - brute_h(&net, &e)).abs() < 1e-12);
    assert!((expected_entropy(&engine, &e, 1).unwrap() - 0.40415).abs() < 1e-4);
    assert!((information_gain(&engine, &e, 1).unwrap() - 0.26886).abs() < 1e-4);
}

#[test]
fn full_session_on_reference_model() {
    use catbn::zoo::{build_model, ModelId, TestBlueprint};
    let bp = TestBlueprint::reference();
    let truth = catbn::data::synthetic_truth(ModelId::B3, &bp, 2).unwrap();
    let structure = build_model(&ModelId::B3.spec(), &bp).unwrap();
    assert_eq!(structure.len(), truth.len());
    let engine = Arc::new(InferenceEngine::new(truth).unwrap());
    let mut s = Session::new(engine, Evidence::new(), TerminationRule::MaxQuestions(20)).unwrap();
    let mut asked = Vec::new();
    while let Some(c) = s.select_next().unwrap() {
        assert!(c.ig >= -1e-9);
        assert_eq!(s.engine().network().variables[c.question].role, Role::Question);
        s.submit_answer(c.question, asked.len() % 2).unwrap();
        asked.push(c.question);
    }
    assert_eq!(asked.len(), 20);
    asked.sort_unstable();
    asked.dedup();
    assert_eq!(asked.len(), 20);
    assert_eq!(s.entropy_trace().len(), 21);
    assert_eq!(s.transcript_jsonl().lines().count(), 20);
}
