//! Parameter learning: closed-form counts for complete data and EM when
//! some variables (skills) are never observed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::JunctionTree;
use crate::network::{Evidence, Network, Role};

/// Rows per E-step work unit. Partial sums are merged in chunk order, so
/// results do not depend on the thread count.
const CHUNK: usize = 32;

/// Slack allowed when checking that EM never lowers the log-likelihood.
pub const MONOTONICITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop once the total log-likelihood changes by less than this.
    pub ll_tolerance: f64,
    pub pseudocount: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iterations: 100, ll_tolerance: 1e-4, pseudocount: 0.0, seed: 0 }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Learning("max_iterations must be at least 1".into()));
        }
        if !(self.ll_tolerance > 0.0) {
            return Err(Error::Learning("ll_tolerance must be positive".into()));
        }
        if !(self.pseudocount >= 0.0) {
            return Err(Error::Learning("pseudocount must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub network: Network,
    pub iterations_used: usize,
    /// Log-likelihood of the parameters entering each iteration.
    pub ll_trace: Vec<f64>,
    pub converged: bool,
}

impl FitResult {
    /// `iteration,loglik` CSV, iterations counted from 1.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,loglik\n");
        for (i, ll) in self.ll_trace.iter().enumerate() {
            s.push_str(&format!("{},{:.6}\n", i + 1, ll));
        }
        s
    }
}

fn zero_counts(net: &Network) -> Vec<Vec<f64>> {
    net.cpts.iter().map(|c| vec![0.0; c.table.len()]).collect()
}

fn family_index(net: &Network, var: usize, row: &Evidence) -> Option<usize> {
    let cpt = &net.cpts[var];
    let mut idx = 0;
    for &p in &cpt.parents {
        idx = idx * net.cardinality(p) + row.get(p)?;
    }
    Some(idx * net.cardinality(var) + row.get(var)?)
}

/// Turns (expected) counts into CPTs:
/// `(count + a) / (row_total + a * cardinality)`, and a uniform row when both
/// the total and `a` are zero.
pub fn normalize_counts(structure: &Network, counts: &[Vec<f64>], pseudocount: f64) -> Network {
    let mut net = structure.clone();
    for (cpt, cnt) in net.cpts.iter_mut().zip(counts) {
        let width = structure.cardinality(cpt.child);
        for (dst, src) in cpt.table.chunks_mut(width).zip(cnt.chunks(width)) {
            let total: f64 = src.iter().sum::<f64>() + pseudocount * width as f64;
            if total > 0.0 {
                for (d, &c) in dst.iter_mut().zip(src) {
                    *d = (c + pseudocount) / total;
                }
            } else {
                dst.fill(1.0 / width as f64);
            }
        }
    }
    net
}

/// Maximum-likelihood (or Laplace-smoothed) CPTs from fully observed rows.
pub fn fit_complete(structure: &Network, rows: &[Evidence], pseudocount: f64) -> Result<Network> {
    structure.ensure_valid()?;
    let mut counts = zero_counts(structure);
    for (r, row) in rows.iter().enumerate() {
        structure.check_evidence(row)?;
        for v in 0..structure.len() {
            let j = family_index(structure, v, row).ok_or_else(|| {
                Error::Learning(format!(
                    "row {r} does not observe `{}`; complete data required",
                    structure.variables[v].id
                ))
            })?;
            counts[v][j] += 1.0;
        }
    }
    Ok(normalize_counts(structure, &counts, pseudocount))
}

/// Draws every CPT row from a symmetric Dirichlet(1).
pub fn random_parameters(structure: &Network, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = structure.clone();
    for cpt in &mut net.cpts {
        let width = structure.cardinality(cpt.child);
        for row in cpt.table.chunks_mut(width) {
            for x in row.iter_mut() {
                *x = rng.sample::<f64, _>(Exp1);
            }
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
        }
    }
    net
}

struct Partial {
    counts: Vec<Vec<f64>>,
    ll: f64,
    bad_row: Option<usize>,
}

fn e_step(net: &Network, tree: &JunctionTree, rows: &[Evidence]) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = net.len();
    let partials: Vec<Partial> = rows
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(chunk, block)| {
            let mut counts = zero_counts(net);
            let mut ll = 0.0;
            for (k, row) in block.iter().enumerate() {
                let r = chunk * CHUNK + k;
                if row.len() == n {
                    for v in 0..n {
                        let j = family_index(net, v, row).expect("complete row");
                        let p = net.cpts[v].table[j];
                        if p <= 0.0 {
                            return Partial { counts, ll, bad_row: Some(r) };
                        }
                        ll += p.ln();
                        counts[v][j] += 1.0;
                    }
                    continue;
                }
                let post = match tree.calibrate(row) {
                    Ok(p) => p,
                    Err(_) => return Partial { counts, ll, bad_row: Some(r) },
                };
                ll += post.log_evidence();
                for (v, acc) in counts.iter_mut().enumerate() {
                    post.add_family(v, 1.0, acc);
                }
            }
            Partial { counts, ll, bad_row: None }
        })
        .collect();

    let mut counts = zero_counts(net);
    let mut ll = 0.0;
    for p in partials {
        if let Some(r) = p.bad_row {
            return Err(Error::Learning(format!(
                "row {r} has zero probability under the current parameters"
            )));
        }
        for (acc, part) in counts.iter_mut().zip(&p.counts) {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
        ll += p.ll;
    }
    if !ll.is_finite() {
        return Err(Error::Learning("non-finite log-likelihood".into()));
    }
    Ok((counts, ll))
}

/// Fits CPTs by expectation-maximization.
///
/// Variables with role `skill` may be missing from every row; any other
/// variable that is never observed is treated as a schema error.
pub fn em_fit(structure: &Network, rows: &[Evidence], cfg: &EmConfig) -> Result<FitResult> {
    cfg.validate()?;
    structure.ensure_valid()?;
    for row in rows {
        structure.check_evidence(row)?;
    }
    for v in 0..structure.len() {
        let var = &structure.variables[v];
        if var.role != Role::Skill && !rows.is_empty() && rows.iter().all(|r| !r.contains(v)) {
            return Err(Error::Learning(format!(
                "`{}` is never observed but is not a latent skill",
                var.id
            )));
        }
    }

    let mut net = random_parameters(structure, cfg.seed);
    let mut tree = JunctionTree::compile(&net)?;
    let mut ll_trace = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0;
    for it in 1..=cfg.max_iterations {
        tree.reparameterize(&net);
        let (counts, ll) = e_step(&net, &tree, rows)?;
        ll_trace.push(ll);
        net = normalize_counts(structure, &counts, cfg.pseudocount);
        iterations_used = it;
        if let [.., prev, last] = ll_trace[..] {
            if (last - prev).abs() < cfg.ll_tolerance {
                converged = true;
                break;
            }
        }
    }
    Ok(FitResult { network: net, iterations_used, ll_trace, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sparsity {
    /// Mean count of exactly-zero CPT entries per network.
    pub azt: f64,
    /// Mean over networks of the mean per-row fraction of zero entries.
    #[serde(rename = "as")]
    pub as_: f64,
}

pub fn sparsity_metrics(nets: &[Network]) -> Sparsity {
    if nets.is_empty() {
        return Sparsity { azt: 0.0, as_: 0.0 };
    }
    let mut azt = 0.0;
    let mut as_ = 0.0;
    for net in nets {
        let mut zeros = 0usize;
        let mut frac_sum = 0.0;
        let mut rows = 0usize;
        for cpt in &net.cpts {
            let width = net.cardinality(cpt.child);
            for row in cpt.table.chunks(width) {
                let z = row.iter().filter(|&&x| x == 0.0).count();
                zeros += z;
                frac_sum += z as f64 / width as f64;
                rows += 1;
            }
        }
        azt += zeros as f64;
        if rows > 0 {
            as_ += frac_sum / rows as f64;
        }
    }
    let k = nets.len() as f64;
    Sparsity { azt: azt / k, as_: as_ / k }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Cpt, Variable};

    fn skill_only() -> Network {
        Network::uniform(vec![(Variable::new("S", Role::Skill, 2), vec![])]).unwrap()
    }

    fn rows_for(counts: &[(usize, usize)]) -> Vec<Evidence> {
        counts
            .iter()
            .flat_map(|&(s, n)| std::iter::repeat_n(Evidence::new().with(0, s), n))
            .collect()
    }

    #[test]
    fn relative_frequency() {
        let net = fit_complete(&skill_only(), &rows_for(&[(0, 6), (1, 4)]), 0.0).unwrap();
        assert_eq!(net.cpts[0].table, vec![0.6, 0.4]);
    }

    #[test]
    fn laplace_smoothing() {
        let net = fit_complete(&skill_only(), &rows_for(&[(0, 6), (1, 4)]), 1.0).unwrap();
        assert!((net.cpts[0].table[0] - 7.0 / 12.0).abs() < 1e-15);
        assert!((net.cpts[0].table[1] - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn unseen_parent_configuration_is_uniform() {
        let structure = Network::uniform(vec![
            (Variable::new("S", Role::Skill, 2), vec![]),
            (Variable::new("X", Role::Question, 3), vec!["S".into()]),
        ])
        .unwrap();
        let rows = vec![Evidence::new().with(0, 0).with(1, 2); 5];
        let net = fit_complete(&structure, &rows, 0.0).unwrap();
        assert_eq!(&net.cpts[1].table[..3], &[0.0, 0.0, 1.0]);
        assert_eq!(&net.cpts[1].table[3..], &[1.0 / 3.0; 3]);
    }

    #[test]
    fn incomplete_row_rejected_by_fit_complete() {
        let structure = Network::uniform(vec![
            (Variable::new("S", Role::Skill, 2), vec![]),
            (Variable::new("X", Role::Question, 2), vec!["S".into()]),
        ])
        .unwrap();
        assert!(fit_complete(&structure, &[Evidence::new().with(1, 0)], 0.0).is_err());
    }

    #[test]
    fn complete_data_em_equals_closed_form() {
        let structure = Network::uniform(vec![
            (Variable::new("S", Role::Skill, 2), vec![]),
            (Variable::new("X", Role::Question, 2), vec!["S".into()]),
        ])
        .unwrap();
        let rows: Vec<Evidence> = [(0, 0), (0, 0), (0, 1), (1, 1), (1, 1)]
            .iter()
            .map(|&(s, x)| Evidence::new().with(0, s).with(1, x))
            .collect();
        let cfg = EmConfig { max_iterations: 1, ..Default::default() };
        let fit = em_fit(&structure, &rows, &cfg).unwrap();
        assert_eq!(fit.network, fit_complete(&structure, &rows, 0.0).unwrap());
        assert!(!fit.converged);
        assert_eq!(fit.iterations_used, 1);
    }

    #[test]
    fn never_observed_question_is_an_error() {
        let structure = Network::uniform(vec![
            (Variable::new("S", Role::Skill, 2), vec![]),
            (Variable::new("X", Role::Question, 2), vec!["S".into()]),
            (Variable::new("Y", Role::Question, 2), vec!["S".into()]),
        ])
        .unwrap();
        let rows = vec![Evidence::new().with(1, 0), Evidence::new().with(1, 1)];
        let err = em_fit(&structure, &rows, &EmConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`Y`"));
    }

    #[test]
    fn config_bounds() {
        assert!(EmConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
        assert!(EmConfig { ll_tolerance: 0.0, ..Default::default() }.validate().is_err());
        assert!(EmConfig { pseudocount: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn sparsity_fixture() {
        let net = Network::new(
            vec![Variable::new("S", Role::Skill, 2), Variable::new("X", Role::Question, 2)],
            vec![
                Cpt { child: 0, parents: vec![], table: vec![0.5, 0.5] },
                Cpt { child: 1, parents: vec![0], table: vec![1.0, 0.0, 0.5, 0.5] },
            ],
        );
        let s = sparsity_metrics(&[net]);
        // Three rows in total: (0.5,0.5), (1,0), (0.5,0.5).
        assert_eq!(s.azt, 1.0);
        assert!((s.as_ - 0.5 / 3.0).abs() < 1e-15);

        // A lone two-row table: rows (1,0) and (0.5,0.5).
        let lone = Network::new(
            vec![Variable::new("A", Role::Skill, 2), Variable::new("B", Role::Question, 2)],
            vec![Cpt { child: 1, parents: vec![0], table: vec![1.0, 0.0, 0.5, 0.5] }],
        );
        assert_eq!(sparsity_metrics(&[lone]), Sparsity { azt: 1.0, as_: 0.25 });
        let positive = skill_only();
        assert_eq!(sparsity_metrics(&[positive]), Sparsity { azt: 0.0, as_: 0.0 });
    }

    #[test]
    fn trace_csv_header() {
        let fit = FitResult {
            network: skill_only(),
            iterations_used: 2,
            ll_trace: vec![-3.0, -2.5],
            converged: false,
        };
        assert_eq!(fit.trace_csv(), "iteration,loglik\n1,-3.000000\n2,-2.500000\n");
    }
}
