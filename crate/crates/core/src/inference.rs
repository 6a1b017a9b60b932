//! Exact inference on discrete Bayesian networks with a junction tree.
//!
//! The moral graph is triangulated with the min-fill heuristic (ties go to
//! the lowest variable index), maximal cliques are joined by a maximum-weight
//! spanning tree, and queries run one collect pass toward the root followed
//! by one distribute pass back out. Every message is renormalized as it is
//! produced and the normalizers are accumulated in log space, so the only
//! underflow risk is an individual clique entry falling below `f64::MIN_POSITIVE`
//! (about 2.2e-308) relative to the largest entry of the same clique. Clique
//! tables here hold at most a few thousand entries, far from that bound.

use crate::error::{Error, Result};
use crate::network::{Distribution, Evidence, Network};

/// Largest clique table the compiler accepts.
pub const MAX_CLIQUE_ENTRIES: usize = 1 << 24;

#[derive(Debug, Clone)]
struct Clique {
    vars: Vec<usize>,
    size: usize,
}

/// Compiled junction tree for one network structure.
#[derive(Debug, Clone)]
pub struct JunctionTree {
    cards: Vec<usize>,
    cliques: Vec<Clique>,
    /// Cliques in breadth-first order from the root (`order[0]`).
    order: Vec<usize>,
    parent: Vec<Option<usize>>,
    sep_size: Vec<usize>,
    /// Clique entry -> separator entry, for the separator to the parent.
    up_map: Vec<Vec<u32>>,
    /// Parent clique entry -> separator entry.
    down_map: Vec<Vec<u32>>,
    base: Vec<Vec<f64>>,
    /// Smallest clique containing each variable, and the variable's state at
    /// every entry of that clique.
    home: Vec<usize>,
    state_map: Vec<Vec<u32>>,
    /// Clique holding each variable's family, and clique entry -> CPT index.
    family: Vec<usize>,
    family_map: Vec<Vec<u32>>,
}

impl JunctionTree {
    /// Compiles `net`, which must already be valid.
    pub fn compile(net: &Network) -> Result<Self> {
        let n = net.len();
        let cards: Vec<usize> = net.variables.iter().map(|v| v.cardinality).collect();

        let mut adj = vec![std::collections::BTreeSet::new(); n];
        for cpt in &net.cpts {
            let mut fam = cpt.parents.clone();
            fam.push(cpt.child);
            for &a in &fam {
                for &b in &fam {
                    if a != b {
                        adj[a].insert(b);
                    }
                }
            }
        }

        let mut cliques: Vec<Vec<usize>> = Vec::new();
        let mut eliminated = vec![false; n];
        for _ in 0..n {
            let mut best: Option<(usize, usize)> = None;
            for v in 0..n {
                if eliminated[v] {
                    continue;
                }
                let nb: Vec<usize> = adj[v].iter().copied().collect();
                let mut fill = 0;
                for (i, &a) in nb.iter().enumerate() {
                    for &b in &nb[i + 1..] {
                        if !adj[a].contains(&b) {
                            fill += 1;
                        }
                    }
                }
                if best.is_none_or(|(f, _)| fill < f) {
                    best = Some((fill, v));
                }
            }
            let (_, v) = best.expect("a variable remains");
            let nb: Vec<usize> = adj[v].iter().copied().collect();
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            for &a in &nb {
                adj[a].remove(&v);
            }
            eliminated[v] = true;
            let mut c = nb;
            c.push(v);
            c.sort_unstable();
            cliques.push(c);
        }
        // Keep maximal cliques only.
        let mut maximal: Vec<Vec<usize>> = Vec::new();
        for (i, c) in cliques.iter().enumerate() {
            let subsumed = cliques.iter().enumerate().any(|(j, d)| {
                j != i
                    && d.len() >= c.len()
                    && c.iter().all(|x| d.binary_search(x).is_ok())
                    && (d.len() > c.len() || j < i)
            });
            if !subsumed {
                maximal.push(c.clone());
            }
        }
        if maximal.is_empty() {
            maximal.push(Vec::new());
        }
        let cliques: Vec<Clique> = maximal
            .into_iter()
            .map(|vars| {
                let size = vars.iter().map(|&v| cards[v]).product::<usize>();
                Clique { vars, size }
            })
            .collect();
        if let Some(c) = cliques.iter().find(|c| c.size > MAX_CLIQUE_ENTRIES) {
            return Err(Error::Inference(format!(
                "clique over {} variables needs {} entries",
                c.vars.len(),
                c.size
            )));
        }

        // Maximum spanning tree on separator size; zero-weight edges join
        // disconnected components.
        let k = cliques.len();
        let mut edges = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                let w = intersect(&cliques[i].vars, &cliques[j].vars).len();
                edges.push((w, i, j));
            }
        }
        edges.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut uf: Vec<usize> = (0..k).collect();
        fn find(uf: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while uf[r] != r {
                r = uf[r];
            }
            let mut y = x;
            while uf[y] != r {
                let next = uf[y];
                uf[y] = r;
                y = next;
            }
            r
        }
        let mut tree_adj = vec![Vec::new(); k];
        for (_, i, j) in edges {
            let (a, b) = (find(&mut uf, i), find(&mut uf, j));
            if a != b {
                uf[a] = b;
                tree_adj[i].push(j);
                tree_adj[j].push(i);
            }
        }
        for a in &mut tree_adj {
            a.sort_unstable();
        }

        let mut order = vec![0];
        let mut parent = vec![None; k];
        let mut seen = vec![false; k];
        seen[0] = true;
        let mut head = 0;
        while head < order.len() {
            let c = order[head];
            head += 1;
            for &d in &tree_adj[c] {
                if !seen[d] {
                    seen[d] = true;
                    parent[d] = Some(c);
                    order.push(d);
                }
            }
        }

        let mut sep_size = vec![1; k];
        let mut up_map = vec![Vec::new(); k];
        let mut down_map = vec![Vec::new(); k];
        for c in 0..k {
            if let Some(p) = parent[c] {
                let sep = intersect(&cliques[c].vars, &cliques[p].vars);
                sep_size[c] = sep.iter().map(|&v| cards[v]).product();
                up_map[c] = index_map(&cliques[c].vars, &sep, &cards);
                down_map[c] = index_map(&cliques[p].vars, &sep, &cards);
            }
        }

        let mut home = vec![0; n];
        let mut state_map = vec![Vec::new(); n];
        for v in 0..n {
            let h = (0..k)
                .filter(|&c| cliques[c].vars.binary_search(&v).is_ok())
                .min_by_key(|&c| (cliques[c].size, c))
                .expect("every variable sits in some clique");
            home[v] = h;
            state_map[v] = index_map(&cliques[h].vars, &[v], &cards);
        }

        let mut family = vec![0; n];
        let mut family_map = vec![Vec::new(); n];
        for cpt in &net.cpts {
            let mut fam = cpt.parents.clone();
            fam.push(cpt.child);
            let mut sorted = fam.clone();
            sorted.sort_unstable();
            let c = (0..k)
                .filter(|&c| sorted.iter().all(|x| cliques[c].vars.binary_search(x).is_ok()))
                .min_by_key(|&c| (cliques[c].size, c))
                .expect("triangulation covers every family");
            family[cpt.child] = c;
            family_map[cpt.child] = index_map(&cliques[c].vars, &fam, &cards);
        }
        let base = cliques.iter().map(|c| vec![1.0; c.size]).collect();

        let mut tree = JunctionTree {
            cards,
            cliques,
            order,
            parent,
            sep_size,
            up_map,
            down_map,
            base,
            home,
            state_map,
            family,
            family_map,
        };
        tree.reparameterize(net);
        Ok(tree)
    }

    /// Reloads clique potentials from the CPTs of `net`, which must share
    /// the compiled structure.
    pub fn reparameterize(&mut self, net: &Network) {
        for b in &mut self.base {
            b.fill(1.0);
        }
        for cpt in &net.cpts {
            let c = self.family[cpt.child];
            for (x, &j) in self.base[c].iter_mut().zip(&self.family_map[cpt.child]) {
                *x *= cpt.table[j as usize];
            }
        }
    }
    pub fn clique_count(&self) -> usize {
        self.cliques.len()
    }

    pub fn largest_clique(&self) -> usize {
        self.cliques.iter().map(|c| c.size).max().unwrap_or(1)
    }

    /// Propagates `e` and returns calibrated clique beliefs.
    pub fn calibrate(&self, e: &Evidence) -> Result<Posterior<'_>> {
        let mut pot = self.base.clone();
        for (&v, &s) in e.iter() {
            if v >= self.cards.len() {
                return Err(Error::UnknownVariable(format!("#{v}")));
            }
            if s >= self.cards[v] {
                return Err(Error::StateOutOfRange {
                    variable: format!("#{v}"),
                    state: s,
                    cardinality: self.cards[v],
                });
            }
            let map = &self.state_map[v];
            for (x, &st) in pot[self.home[v]].iter_mut().zip(map) {
                if st as usize != s {
                    *x = 0.0;
                }
            }
        }

        let mut log_evidence = 0.0;
        let mut up: Vec<Vec<f64>> = vec![Vec::new(); self.cliques.len()];
        for &c in self.order.iter().rev() {
            let Some(p) = self.parent[c] else { continue };
            let mut msg = vec![0.0; self.sep_size[c]];
            for (&x, &j) in pot[c].iter().zip(&self.up_map[c]) {
                msg[j as usize] += x;
            }
            let z: f64 = msg.iter().sum();
            if !(z > 0.0) {
                return Err(Error::ImpossibleEvidence);
            }
            msg.iter_mut().for_each(|m| *m /= z);
            log_evidence += z.ln();
            let (dst, map) = (&mut pot[p], &self.down_map[c]);
            for (x, &j) in dst.iter_mut().zip(map) {
                *x *= msg[j as usize];
            }
            up[c] = msg;
        }

        let root = self.order[0];
        let z: f64 = pot[root].iter().sum();
        if !(z > 0.0) {
            return Err(Error::ImpossibleEvidence);
        }
        pot[root].iter_mut().for_each(|x| *x /= z);
        log_evidence += z.ln();

        for &c in self.order.iter().skip(1) {
            let p = self.parent[c].expect("non-root clique has a parent");
            let mut msg = vec![0.0; self.sep_size[c]];
            for (&x, &j) in pot[p].iter().zip(&self.down_map[c]) {
                msg[j as usize] += x;
            }
            for (m, &u) in msg.iter_mut().zip(&up[c]) {
                *m = if u > 0.0 { *m / u } else { 0.0 };
            }
            for (x, &j) in pot[c].iter_mut().zip(&self.up_map[c]) {
                *x *= msg[j as usize];
            }
            let z: f64 = pot[c].iter().sum();
            if !(z > 0.0) {
                return Err(Error::ImpossibleEvidence);
            }
            pot[c].iter_mut().for_each(|x| *x /= z);
        }

        Ok(Posterior { tree: self, beliefs: pot, log_evidence })
    }
}

/// Calibrated beliefs for one evidence set.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    tree: &'a JunctionTree,
    beliefs: Vec<Vec<f64>>,
    log_evidence: f64,
}

impl Posterior<'_> {
    /// `ln P(e)`.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    /// `P(var | e)` as a probability vector.
    pub fn marginal(&self, var: usize) -> Vec<f64> {
        let h = self.tree.home[var];
        let mut out = vec![0.0; self.tree.cards[var]];
        for (&x, &s) in self.beliefs[h].iter().zip(&self.tree.state_map[var]) {
            out[s as usize] += x;
        }
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|x| *x /= z);
        out
    }

    /// Joint posterior of `var` and its parents, laid out like its CPT.
    pub fn family(&self, var: usize) -> Vec<f64> {
        let mut out = Vec::new();
        self.add_family(var, 1.0, &mut out);
        out
    }

    /// Adds `weight * P(family(var) | e)` into `acc` (CPT layout), growing
    /// `acc` to the right length if it is empty.
    pub fn add_family(&self, var: usize, weight: f64, acc: &mut Vec<f64>) {
        let c = self.tree.family[var];
        let map = &self.tree.family_map[var];
        if acc.is_empty() {
            let len = map.iter().map(|&j| j as usize + 1).max().unwrap_or(0);
            acc.resize(len.max(self.tree.cards[var]), 0.0);
        }
        for (&x, &j) in self.beliefs[c].iter().zip(map) {
            acc[j as usize] += weight * x;
        }
    }
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|x| b.binary_search(x).is_ok()).collect()
}

/// For every entry of a table over `src` (row-major, last variable fastest),
/// the index of the matching entry of a table over `dst`. `dst` variables
/// must all appear in `src`; their order in `dst` sets its layout.
fn index_map(src: &[usize], dst: &[usize], cards: &[usize]) -> Vec<u32> {
    let mut dst_stride = vec![0usize; src.len()];
    let mut stride = 1;
    for &v in dst.iter().rev() {
        let pos = src.iter().position(|&s| s == v).expect("dst is a subset of src");
        dst_stride[pos] = stride;
        stride *= cards[v];
    }
    let size: usize = src.iter().map(|&v| cards[v]).product();
    let mut out = Vec::with_capacity(size);
    let mut digits = vec![0usize; src.len()];
    let mut idx = 0usize;
    for _ in 0..size {
        out.push(idx as u32);
        for k in (0..src.len()).rev() {
            digits[k] += 1;
            idx += dst_stride[k];
            if digits[k] < cards[src[k]] {
                break;
            }
            idx -= dst_stride[k] * digits[k];
            digits[k] = 0;
        }
    }
    out
}

/// A validated network together with its compiled junction tree. Immutable
/// and cheap to share across threads.
#[derive(Debug, Clone)]
pub struct InferenceEngine {
    net: Network,
    tree: JunctionTree,
}

impl InferenceEngine {
    pub fn new(net: Network) -> Result<Self> {
        net.ensure_valid()?;
        let tree = JunctionTree::compile(&net)?;
        Ok(InferenceEngine { net, tree })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn tree(&self) -> &JunctionTree {
        &self.tree
    }

    pub fn calibrate(&self, e: &Evidence) -> Result<Posterior<'_>> {
        self.net.check_evidence(e)?;
        self.tree.calibrate(e)
    }

    pub fn posterior_marginals(&self, e: &Evidence, targets: &[usize]) -> Result<Vec<Distribution>> {
        if let Some(&bad) = targets.iter().find(|&&t| t >= self.net.len()) {
            return Err(Error::UnknownVariable(format!("#{bad}")));
        }
        let post = self.calibrate(e)?;
        Ok(targets
            .iter()
            .map(|&t| Distribution {
                variable: self.net.variables[t].id.clone(),
                probabilities: post.marginal(t),
            })
            .collect())
    }

    pub fn log_likelihood(&self, rows: &[Evidence]) -> Result<LogLikelihood> {
        let mut per_row = Vec::with_capacity(rows.len());
        let mut impossible_rows = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            match self.calibrate(row) {
                Ok(p) => per_row.push(p.log_evidence()),
                Err(Error::ImpossibleEvidence) => {
                    per_row.push(f64::NEG_INFINITY);
                    impossible_rows.push(i);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(LogLikelihood { total: per_row.iter().sum(), per_row, impossible_rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLikelihood {
    /// Sum of `per_row`; `-inf` when any row is impossible.
    pub total: f64,
    pub per_row: Vec<f64>,
    pub impossible_rows: Vec<usize>,
}

impl LogLikelihood {
    pub fn is_finite(&self) -> bool {
        self.impossible_rows.is_empty() && self.total.is_finite()
    }
}

/// `P(T | e)` for each target id.
pub fn posterior_marginals(net: &Network, e: &Evidence, targets: &[&str]) -> Result<Vec<Distribution>> {
    let idx = targets
        .iter()
        .map(|t| net.index_of(t))
        .collect::<Result<Vec<_>>>()?;
    InferenceEngine::new(net.clone())?.posterior_marginals(e, &idx)
}

/// Total log-likelihood of `rows`, marginalizing unobserved variables.
pub fn log_likelihood(net: &Network, rows: &[Evidence]) -> Result<LogLikelihood> {
    InferenceEngine::new(net.clone())?.log_likelihood(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Cpt, Role, Variable};

    fn two_node(rows: [f64; 4]) -> Network {
        Network::new(
            vec![Variable::new("S", Role::Skill, 2), Variable::new("X", Role::Question, 2)],
            vec![
                Cpt { child: 0, parents: vec![], table: vec![0.6, 0.4] },
                Cpt { child: 1, parents: vec![0], table: rows.to_vec() },
            ],
        )
    }

    #[test]
    fn worked_posterior() {
        let net = two_node([0.9, 0.1, 0.2, 0.8]);
        let e = Evidence::new().with(1, 0);
        let d = posterior_marginals(&net, &e, &["S"]).unwrap();
        assert!((d[0].probabilities[0] - 0.54 / 0.62).abs() < 1e-12);
        assert!((d[0].probabilities[0] - 0.87097).abs() < 1e-5);
    }

    #[test]
    fn no_evidence_returns_prior() {
        let net = two_node([0.9, 0.1, 0.2, 0.8]);
        let d = posterior_marginals(&net, &Evidence::new(), &["S"]).unwrap();
        assert!((d[0].probabilities[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn independent_child_leaves_prior() {
        let net = two_node([0.3, 0.7, 0.3, 0.7]);
        let d = posterior_marginals(&net, &Evidence::new().with(1, 0), &["S"]).unwrap();
        assert!((d[0].probabilities[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn impossible_evidence_is_an_error() {
        let net = two_node([1.0, 0.0, 1.0, 0.0]);
        let err = posterior_marginals(&net, &Evidence::new().with(1, 1), &["S"]).unwrap_err();
        assert!(matches!(err, Error::ImpossibleEvidence));
    }

    #[test]
    fn unknown_target() {
        let net = two_node([0.9, 0.1, 0.2, 0.8]);
        assert!(matches!(
            posterior_marginals(&net, &Evidence::new(), &["Q"]),
            Err(Error::UnknownVariable(_))
        ));
    }

    #[test]
    fn log_likelihood_examples() {
        let net = two_node([0.9, 0.1, 0.2, 0.8]);
        let ll = log_likelihood(&net, &[Evidence::new().with(0, 0).with(1, 0)]).unwrap();
        assert!((ll.total - 0.54f64.ln()).abs() < 1e-12);
        assert!((ll.total + 0.61619).abs() < 1e-5);
        let ll = log_likelihood(&net, &[Evidence::new().with(1, 0)]).unwrap();
        assert!((ll.total - 0.62f64.ln()).abs() < 1e-12);
        assert!((ll.total + 0.47804).abs() < 1e-5);
        assert_eq!(log_likelihood(&net, &[]).unwrap().total, 0.0);
    }

    #[test]
    fn impossible_row_is_flagged() {
        let net = two_node([1.0, 0.0, 1.0, 0.0]);
        let ll = log_likelihood(&net, &[Evidence::new().with(1, 0), Evidence::new().with(1, 1)]).unwrap();
        assert_eq!(ll.impossible_rows, vec![1]);
        assert_eq!(ll.total, f64::NEG_INFINITY);
        assert!(!ll.is_finite());
    }

    #[test]
    fn family_layout_matches_cpt() {
        let net = two_node([0.9, 0.1, 0.2, 0.8]);
        let eng = InferenceEngine::new(net).unwrap();
        let post = eng.calibrate(&Evidence::new()).unwrap();
        let fam = post.family(1);
        let expect = [0.54, 0.06, 0.08, 0.32];
        for (a, b) in fam.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn index_map_reorders() {
        // src (a:2, b:3); dst (b, a)
        let m = index_map(&[0, 1], &[1, 0], &[2, 3]);
        assert_eq!(m, vec![0, 2, 4, 1, 3, 5]);
    }
}
