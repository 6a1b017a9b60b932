mod common;

use catbn::{Error, Evidence, InferenceEngine};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn worked_example_against_enumeration() {
    let net = two_node();
    let (pe, marg) = brute_posteriors(&net, &Evidence::new().with(1, 0));
    assert!((pe - 0.62).abs() < 1e-12);
    let eng = InferenceEngine::new(net).unwrap();
    let d = eng.posterior_marginals(&Evidence::new().with(1, 0), &[0]).unwrap();
    assert!((d[0].probabilities[0] - marg[0][0]).abs() < 1e-12);
    assert!((marg[0][0] - 0.870968).abs() < 1e-6);
}

#[test]
fn random_networks_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let net = random_network(&mut rng, 0.1);
        let eng = InferenceEngine::new(net.clone()).unwrap();
        for _ in 0..5 {
            let e = random_evidence(&mut rng, &net);
            let (pe, marg) = brute_posteriors(&net, &e);
            let targets: Vec<usize> = (0..net.len()).collect();
            match eng.posterior_marginals(&e, &targets) {
                Ok(got) => {
                    assert!(pe > 0.0);
                    for (d, m) in got.iter().zip(&marg) {
                        for (a, b) in d.probabilities.iter().zip(m) {
                            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                        }
                    }
                    let ll = eng.log_likelihood(std::slice::from_ref(&e)).unwrap();
                    assert!((ll.total - pe.ln()).abs() < 1e-9 * pe.ln().abs().max(1.0));
                }
                Err(Error::ImpossibleEvidence) => assert_eq!(pe, 0.0),
                Err(other) => panic!("{other}"),
            }
        }
    }
}

#[test]
fn deterministic_paths_keep_zero_support() {
    // Zero-heavy CPTs: any state the enumeration rules out stays at exactly 0.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let net = random_network(&mut rng, 0.5);
        let eng = InferenceEngine::new(net.clone()).unwrap();
        let e = random_evidence(&mut rng, &net);
        let (pe, marg) = brute_posteriors(&net, &e);
        if pe == 0.0 {
            continue;
        }
        let got = eng.posterior_marginals(&e, &(0..net.len()).collect::<Vec<_>>()).unwrap();
        for (d, m) in got.iter().zip(&marg) {
            for (a, b) in d.probabilities.iter().zip(m) {
                if *b == 0.0 {
                    assert_eq!(*a, 0.0);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marginals_normalize_and_repeat_exactly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, 0.0);
        let e = random_evidence(&mut rng, &net);
        let eng = InferenceEngine::new(net.clone()).unwrap();
        let targets: Vec<usize> = (0..net.len()).collect();
        let a = eng.posterior_marginals(&e, &targets).unwrap();
        let b = eng.posterior_marginals(&e, &targets).unwrap();
        prop_assert_eq!(&a, &b);
        for d in &a {
            let s: f64 = d.probabilities.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
