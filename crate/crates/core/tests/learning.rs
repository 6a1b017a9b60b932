mod common;

use catbn::learning::{em_fit, fit_complete, EmConfig};
use catbn::{Cpt, Evidence, Network, Role, Variable};
use common::{mask_rows, random_network, sample_rows, two_node};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn em_log_likelihood_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let truth = random_network(&mut rng, 0.1);
        let rows = sample_rows(&mut rng, &truth, 80);
        let data = mask_rows(&mut rng, &truth, &rows, 0.2);
        let cfg = EmConfig { max_iterations: 40, ll_tolerance: 1e-12, seed: case, ..Default::default() };
        let fit = em_fit(&truth, &data, &cfg).unwrap();
        for w in fit.ll_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "case {case}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn complete_data_em_is_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..20 {
        let truth = random_network(&mut rng, 0.0);
        let data: Vec<Evidence> = sample_rows(&mut rng, &truth, 60)
            .into_iter()
            .map(|r| r.into_iter().enumerate().collect())
            .collect();
        let cfg = EmConfig { max_iterations: 1, seed: case, ..Default::default() };
        let em = em_fit(&truth, &data, &cfg).unwrap().network;
        assert_eq!(em, fit_complete(&truth, &data, 0.0).unwrap(), "case {case}");
    }
}

/// Best grid log-likelihood of the latent two-node model, whose likelihood
/// only depends on `P(X=1) = a·b + (1−a)·c` (a = P(S=1), b, c = P(X=1 | S)).
fn grid_ll(n1: f64, n2: f64, a: f64, b: f64, c: f64) -> f64 {
    let p = a * b + (1.0 - a) * c;
    if (n1 > 0.0 && p <= 0.0) || (n2 > 0.0 && p >= 1.0) {
        return f64::NEG_INFINITY;
    }
    let mut ll = 0.0;
    if n1 > 0.0 {
        ll += n1 * p.ln();
    }
    if n2 > 0.0 {
        ll += n2 * (1.0 - p).ln();
    }
    ll
}

#[test]
fn latent_two_node_fit_matches_grid_oracle() {
    const STEP: f64 = 0.001;
    const N: i64 = 1000;
    let truth = two_node();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Evidence> = sample_rows(&mut rng, &truth, 500)
            .into_iter()
            .map(|r| Evidence::new().with(1, r[1]))
            .collect();
        let n1 = data.iter().filter(|e| e.get(1) == Some(0)).count() as f64;
        let n2 = data.len() as f64 - n1;
        let fit = em_fit(&truth, &data, &EmConfig { ll_tolerance: 1e-10, seed, ..Default::default() })
            .unwrap()
            .network;

        // Global grid maximum: for each (a, b) the likelihood is unimodal in c,
        // so the neighbours of the continuous optimum are the only candidates.
        let target = n1 / (n1 + n2);
        let mut best = f64::NEG_INFINITY;
        for ia in 0..=N {
            let a = ia as f64 * STEP;
            for ib in 0..=N {
                let b = ib as f64 * STEP;
                let ic = if a < 1.0 { (target - a * b) / (1.0 - a) / STEP } else { 0.0 };
                let lo = (ic.floor() as i64).clamp(0, N);
                let hi = (ic.ceil() as i64).clamp(0, N);
                for k in [0, lo, hi, N] {
                    best = best.max(grid_ll(n1, n2, a, b, k as f64 * STEP));
                }
            }
        }

        let a = fit.cpts[0].table[0];
        let b = fit.cpts[1].table[0];
        let c = fit.cpts[1].table[2];
        let local = |a: f64, b: f64, c: f64| {
            let snap = |x: f64| (x / STEP).round() as i64;
            let mut m = f64::NEG_INFINITY;
            for da in -10..=10 {
                for db in -10..=10 {
                    for dc in -10..=10 {
                        let (ia, ib, ic) = (snap(a) + da, snap(b) + db, snap(c) + dc);
                        if [ia, ib, ic].iter().all(|&i| (0..=N).contains(&i)) {
                            let g = grid_ll(n1, n2, ia as f64 * STEP, ib as f64 * STEP, ic as f64 * STEP);
                            m = m.max(g);
                        }
                    }
                }
            }
            m
        };
        let near = local(a, b, c).max(local(1.0 - a, c, b));
        assert!(near >= best - 1e-6, "seed {seed}: best grid {best}, near EM {near}");
    }
}

#[test]
fn identifiable_latent_model_recovers_parameters() {
    let mut vars = vec![Variable::new("S", Role::Skill, 2)];
    let mut cpts = vec![Cpt { child: 0, parents: vec![], table: vec![0.35, 0.65] }];
    let rows = [[0.85, 0.15, 0.2, 0.8], [0.7, 0.3, 0.1, 0.9], [0.9, 0.1, 0.35, 0.65], [0.75, 0.25, 0.15, 0.85], [0.8, 0.2, 0.3, 0.7]];
    for (i, t) in rows.iter().enumerate() {
        vars.push(Variable::new(format!("Q{i}"), Role::Question, 2));
        cpts.push(Cpt { child: i + 1, parents: vec![0], table: t.to_vec() });
    }
    let truth = Network::new(vars, cpts);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let sampled = sample_rows(&mut rng, &truth, 5000);
    let data = mask_rows(&mut rng, &truth, &sampled, 0.0);
    let fit = em_fit(&truth, &data, &EmConfig { ll_tolerance: 1e-8, max_iterations: 500, seed: rng.random(), ..Default::default() })
        .unwrap()
        .network;
    let swapped = fit.cpts[0].table[0] > 0.5;
    for (t, f) in truth.cpts.iter().zip(&fit.cpts) {
        let mut table = f.table.clone();
        if swapped {
            if f.child == 0 {
                table.swap(0, 1);
            } else {
                table = [&table[2..], &table[..2]].concat();
            }
        }
        for (x, y) in t.table.iter().zip(&table) {
            assert!((x - y).abs() < 0.05, "{:?} vs {:?}", t.table, table);
        }
    }
}
