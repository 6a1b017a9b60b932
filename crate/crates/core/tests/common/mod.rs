//! Test-only oracles. Nothing here calls the junction tree.
#![allow(dead_code)]

use catbn::{Cpt, Evidence, Network, Role, Variable};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Full joint table of `net`, indexed row-major over all variables in
/// declaration order.
pub fn joint(net: &Network) -> Vec<f64> {
    let cards: Vec<usize> = net.variables.iter().map(|v| v.cardinality).collect();
    let size: usize = cards.iter().product();
    let mut out = vec![0.0; size];
    let mut states = vec![0usize; cards.len()];
    for slot in out.iter_mut() {
        let mut p = 1.0;
        for cpt in &net.cpts {
            let parent_states: Vec<usize> = cpt.parents.iter().map(|&q| states[q]).collect();
            p *= cpt.row(net, &parent_states)[states[cpt.child]];
        }
        *slot = p;
        for k in (0..cards.len()).rev() {
            states[k] += 1;
            if states[k] < cards[k] {
                break;
            }
            states[k] = 0;
        }
    }
    out
}

/// `P(e)` and `P(v | e)` for every variable by summing the joint.
pub fn brute_posteriors(net: &Network, e: &Evidence) -> (f64, Vec<Vec<f64>>) {
    let cards: Vec<usize> = net.variables.iter().map(|v| v.cardinality).collect();
    let table = joint(net);
    let mut marg: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
    let mut pe = 0.0;
    let mut states = vec![0usize; cards.len()];
    for &p in &table {
        if e.iter().all(|(&v, &s)| states[v] == s) {
            pe += p;
            for (v, &s) in states.iter().enumerate() {
                marg[v][s] += p;
            }
        }
        for k in (0..cards.len()).rev() {
            states[k] += 1;
            if states[k] < cards[k] {
                break;
            }
            states[k] = 0;
        }
    }
    if pe > 0.0 {
        for m in &mut marg {
            m.iter_mut().for_each(|x| *x /= pe);
        }
    }
    (pe, marg)
}

pub fn brute_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

fn random_row(rng: &mut ChaCha8Rng, width: usize, zero_prob: f64) -> Vec<f64> {
    loop {
        let mut row: Vec<f64> = (0..width)
            .map(|_| if rng.random::<f64>() < zero_prob { 0.0 } else { rng.random::<f64>() + 0.01 })
            .collect();
        let z: f64 = row.iter().sum();
        if z > 0.0 {
            row.iter_mut().for_each(|x| *x /= z);
            return row;
        }
    }
}

/// Random DAG with at most 12 variables, cardinalities 2..=5 and a joint
/// state space of at most 4096 cells.
pub fn random_network(rng: &mut ChaCha8Rng, zero_prob: f64) -> Network {
    let target = rng.random_range(2..=12usize);
    let mut cards = Vec::new();
    let mut size = 1usize;
    for _ in 0..target {
        let c = rng.random_range(2..=5usize);
        if size * c > 4096 {
            if size * 2 <= 4096 {
                cards.push(2);
                size *= 2;
            }
            continue;
        }
        cards.push(c);
        size *= c;
    }
    let n = cards.len();
    let perm = {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            p.swap(i, j);
        }
        p
    };
    let roles = [Role::Skill, Role::Question, Role::Info];
    let variables: Vec<Variable> = (0..n)
        .map(|i| Variable::new(format!("V{i}"), roles[rng.random_range(0..3)], cards[i]))
        .collect();
    let mut cpts = Vec::new();
    for (rank, &child) in perm.iter().enumerate() {
        let mut parents: Vec<usize> = perm[..rank]
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < 0.4)
            .collect();
        parents.truncate(3);
        let rows: usize = parents.iter().map(|&p| cards[p]).product();
        let table = (0..rows).flat_map(|_| random_row(rng, cards[child], zero_prob)).collect();
        cpts.push(Cpt { child, parents, table });
    }
    cpts.sort_by_key(|c| c.child);
    Network::new(variables, cpts)
}

pub fn random_evidence(rng: &mut ChaCha8Rng, net: &Network) -> Evidence {
    let mut e = Evidence::new();
    for v in 0..net.len() {
        if rng.random::<f64>() < 0.35 {
            e.observe(v, rng.random_range(0..net.cardinality(v))).unwrap();
        }
    }
    e
}

/// S (prior 0.6/0.4) -> X with P(X=1|S=1)=0.9, P(X=1|S=2)=0.2.
pub fn two_node() -> Network {
    Network::new(
        vec![
            Variable::new("S", Role::Skill, 2),
            Variable::new("X", Role::Question, 2).with_scale(catbn::Scale::Boolean),
        ],
        vec![
            Cpt { child: 0, parents: vec![], table: vec![0.6, 0.4] },
            Cpt { child: 1, parents: vec![0], table: vec![0.9, 0.1, 0.2, 0.8] },
        ],
    )
}

/// Draws `n` complete rows by ancestral sampling.
pub fn sample_rows(rng: &mut ChaCha8Rng, net: &Network, n: usize) -> Vec<Vec<usize>> {
    let order = net.topological_order().unwrap();
    (0..n)
        .map(|_| {
            let mut states = vec![0; net.len()];
            for &v in &order {
                let cpt = net.cpts.iter().find(|c| c.child == v).unwrap();
                let parents: Vec<usize> = cpt.parents.iter().map(|&p| states[p]).collect();
                let row = cpt.row(net, &parents);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                states[v] = row.len() - 1;
                for (x, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        states[v] = x;
                        break;
                    }
                }
                while row[states[v]] == 0.0 {
                    states[v] -= 1;
                }
            }
            states
        })
        .collect()
}

/// Hides every skill variable and each other cell with probability `missing`;
/// the first row keeps all non-skill cells so each is observed at least once.
pub fn mask_rows(rng: &mut ChaCha8Rng, net: &Network, rows: &[Vec<usize>], missing: f64) -> Vec<Evidence> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut e = Evidence::new();
            for (v, &x) in row.iter().enumerate() {
                let hidden = net.variables[v].role == Role::Skill || (i > 0 && rng.random::<f64>() < missing);
                if !hidden {
                    e.observe(v, x).unwrap();
                }
            }
            e
        })
        .collect()
}

/// Summed entropy of skill and score-group marginals under `e`, by enumeration.
pub fn brute_h(net: &Network, e: &Evidence) -> f64 {
    let (_, marg) = brute_posteriors(net, e);
    net.estimated_vars().iter().map(|&v| brute_entropy(&marg[v])).sum()
}

/// `H(e) − Σ_x P(q=x | e) H(e, q=x)` by enumeration.
pub fn brute_ig(net: &Network, e: &Evidence, q: usize) -> f64 {
    let (_, marg) = brute_posteriors(net, e);
    let mut eh = 0.0;
    for (x, &p) in marg[q].iter().enumerate() {
        if p > 0.0 {
            eh += p * brute_h(net, &e.clone().with(q, x));
        }
    }
    brute_h(net, e) - eh
}
