//! Discrete Bayesian networks: variables, conditional probability tables,
//! evidence and structural validation.
//!
//! State indices are 0-based everywhere inside the crate. The JSON document
//! produced by [`Network::to_json`] lists state labels in order, and the
//! 1-based convention only applies to wire formats that carry raw state
//! numbers (session transcripts, the HTTP API).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a CPT row or a distribution sums to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Skill,
    Question,
    Info,
    /// Discretized total score, observed while learning and hidden while testing.
    Scoregroup,
}

impl Role {
    /// Variables whose posterior entropy drives question selection.
    pub fn is_estimated(self) -> bool {
        matches!(self, Role::Skill | Role::Scoregroup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Boolean,
    Points,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scale::Boolean => f.write_str("boolean"),
            Scale::Points => f.write_str("points"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub id: String,
    pub name: String,
    pub cardinality: usize,
    pub role: Role,
    #[serde(rename = "states")]
    pub state_labels: Vec<String>,
    /// Grading scale; present on question variables only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
}

impl Variable {
    pub fn new(id: impl Into<String>, role: Role, cardinality: usize) -> Self {
        let id = id.into();
        Variable {
            name: id.clone(),
            id,
            cardinality,
            role,
            state_labels: (1..=cardinality).map(|s| s.to_string()).collect(),
            scale: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.cardinality = labels.len();
        self.state_labels = labels;
        self
    }

    pub fn with_scale(mut self, scale: Scale) -> Self {
        self.scale = Some(scale);
        self
    }
}

/// `P(child | parents)` as a dense row-major table.
///
/// Rows enumerate parent configurations with the first parent most
/// significant; each row has `cardinality(child)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    pub child: usize,
    pub parents: Vec<usize>,
    pub table: Vec<f64>,
}

impl Cpt {
    pub fn row_len(&self, net: &Network) -> usize {
        net.variables[self.child].cardinality
    }

    pub fn row_count(&self, net: &Network) -> usize {
        self.parents
            .iter()
            .map(|&p| net.variables[p].cardinality)
            .product()
    }

    /// Index of the row selected by `parent_states` (one entry per parent).
    pub fn row_index(&self, net: &Network, parent_states: &[usize]) -> usize {
        self.parents
            .iter()
            .zip(parent_states)
            .fold(0, |acc, (&p, &s)| acc * net.variables[p].cardinality + s)
    }

    pub fn row(&self, net: &Network, parent_states: &[usize]) -> &[f64] {
        let w = self.row_len(net);
        let r = self.row_index(net, parent_states);
        &self.table[r * w..(r + 1) * w]
    }
}

/// A structural or numerical defect found by [`Network::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BadCardinality { variable: String, cardinality: usize },
    BadLabels { variable: String },
    DuplicateId { variable: String },
    MissingCpt { variable: String },
    DuplicateCpt { variable: String },
    DanglingParent { variable: String, parent: String },
    Shape { variable: String, expected: usize, found: usize },
    InvalidEntry { variable: String, row: usize, value: f64 },
    RowSum { variable: String, row: usize, sum: f64, deficit: f64 },
    Cycle { variables: Vec<String> },
    ScaleMismatch { variable: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadCardinality { variable, cardinality } => {
                write!(f, "`{variable}` has cardinality {cardinality} (< 2)")
            }
            Violation::BadLabels { variable } => {
                write!(f, "`{variable}` state labels are not unique or do not match cardinality")
            }
            Violation::DuplicateId { variable } => write!(f, "duplicate variable id `{variable}`"),
            Violation::MissingCpt { variable } => write!(f, "`{variable}` has no CPT"),
            Violation::DuplicateCpt { variable } => write!(f, "`{variable}` has more than one CPT"),
            Violation::DanglingParent { variable, parent } => {
                write!(f, "`{variable}` lists unknown parent `{parent}`")
            }
            Violation::Shape { variable, expected, found } => {
                write!(f, "CPT of `{variable}` has {found} entries, expected {expected}")
            }
            Violation::InvalidEntry { variable, row, value } => {
                write!(f, "CPT of `{variable}` row {row} has entry {value} outside [0,1]")
            }
            Violation::RowSum { variable, row, sum, deficit } => write!(
                f,
                "CPT of `{variable}` row {row} sums to {sum} (deficit {deficit:.3e})"
            ),
            Violation::Cycle { variables } => write!(f, "cycle through {{{}}}", variables.join(",")),
            Violation::ScaleMismatch { variable } => write!(
                f,
                "question `{variable}` cardinality does not match its grading scale"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub variables: Vec<Variable>,
    /// `cpts[i].child == i` for a well-formed network.
    pub cpts: Vec<Cpt>,
    index: HashMap<String, usize>,
}

impl Network {
    /// Assembles a network without validating it.
    pub fn new(variables: Vec<Variable>, cpts: Vec<Cpt>) -> Self {
        let index = variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.clone(), i))
            .collect();
        Network { variables, cpts, index }
    }

    /// Builds a network whose CPTs are uniform, from `(variable, parent ids)`
    /// pairs.
    pub fn uniform(spec: Vec<(Variable, Vec<String>)>) -> Result<Self> {
        let ids: HashMap<String, usize> = spec
            .iter()
            .enumerate()
            .map(|(i, (v, _))| (v.id.clone(), i))
            .collect();
        let cards: Vec<usize> = spec.iter().map(|(v, _)| v.cardinality).collect();
        let mut cpts = Vec::with_capacity(spec.len());
        for (child, (v, parents)) in spec.iter().enumerate() {
            let parents = parents
                .iter()
                .map(|p| ids.get(p).copied().ok_or_else(|| Error::UnknownVariable(p.clone())))
                .collect::<Result<Vec<_>>>()?;
            let rows: usize = parents.iter().map(|&p| cards[p]).product();
            let table = vec![1.0 / v.cardinality as f64; rows * v.cardinality];
            cpts.push(Cpt { child, parents, table });
        }
        Ok(Network::new(spec.into_iter().map(|(v, _)| v).collect(), cpts))
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownVariable(id.to_string()))
    }

    pub fn variable(&self, id: &str) -> Result<&Variable> {
        Ok(&self.variables[self.index_of(id)?])
    }

    pub fn cardinality(&self, var: usize) -> usize {
        self.variables[var].cardinality
    }

    pub fn vars_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.variables[i].role == role).collect()
    }

    /// Skill and scoregroup variables, in declaration order.
    pub fn estimated_vars(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.variables[i].role.is_estimated())
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.cpts.iter().map(|c| c.parents.len()).sum()
    }

    pub fn children(&self, var: usize) -> Vec<usize> {
        self.cpts
            .iter()
            .filter(|c| c.parents.contains(&var))
            .map(|c| c.child)
            .collect()
    }

    /// Checks structure and numbers, returning every violation found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.variables.len();
        let mut seen = HashMap::new();
        for v in &self.variables {
            if v.cardinality < 2 {
                out.push(Violation::BadCardinality {
                    variable: v.id.clone(),
                    cardinality: v.cardinality,
                });
            }
            let mut labels = v.state_labels.clone();
            labels.sort();
            labels.dedup();
            if v.state_labels.len() != v.cardinality || labels.len() != v.cardinality {
                out.push(Violation::BadLabels { variable: v.id.clone() });
            }
            if seen.insert(v.id.clone(), ()).is_some() {
                out.push(Violation::DuplicateId { variable: v.id.clone() });
            }
            if v.role == Role::Question {
                let ok = match v.scale {
                    Some(Scale::Boolean) => v.cardinality == 2,
                    _ => true,
                };
                if !ok {
                    out.push(Violation::ScaleMismatch { variable: v.id.clone() });
                }
            }
        }

        let mut per_child = vec![0usize; n];
        for cpt in &self.cpts {
            if cpt.child < n {
                per_child[cpt.child] += 1;
            }
        }
        for (i, &count) in per_child.iter().enumerate() {
            let variable = self.variables[i].id.clone();
            match count {
                0 => out.push(Violation::MissingCpt { variable }),
                1 => {}
                _ => out.push(Violation::DuplicateCpt { variable }),
            }
        }

        let mut structurally_ok = true;
        for cpt in &self.cpts {
            let Some(child) = self.variables.get(cpt.child) else {
                structurally_ok = false;
                continue;
            };
            let mut dangling = false;
            for &p in &cpt.parents {
                if p >= n {
                    dangling = true;
                    out.push(Violation::DanglingParent {
                        variable: child.id.clone(),
                        parent: format!("#{p}"),
                    });
                }
            }
            if dangling {
                structurally_ok = false;
                continue;
            }
            let width = child.cardinality;
            let rows = cpt.row_count(self);
            if cpt.table.len() != rows * width {
                out.push(Violation::Shape {
                    variable: child.id.clone(),
                    expected: rows * width,
                    found: cpt.table.len(),
                });
                continue;
            }
            for (r, row) in cpt.table.chunks(width.max(1)).enumerate() {
                if let Some(&bad) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                    out.push(Violation::InvalidEntry {
                        variable: child.id.clone(),
                        row: r,
                        value: bad,
                    });
                    continue;
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    out.push(Violation::RowSum {
                        variable: child.id.clone(),
                        row: r,
                        sum,
                        deficit: 1.0 - sum,
                    });
                }
            }
        }

        if structurally_ok {
            if let Some(cycle) = self.cyclic_vars() {
                out.push(Violation::Cycle {
                    variables: cycle.iter().map(|&i| self.variables[i].id.clone()).collect(),
                });
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidNetwork(v))
        }
    }

    /// Variables lying on directed cycles, or `None` for a DAG.
    fn cyclic_vars(&self) -> Option<Vec<usize>> {
        let n = self.len();
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for cpt in &self.cpts {
            parents[cpt.child].extend(cpt.parents.iter().copied());
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (c, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        // Peel sources, then sinks; what remains sits on a cycle.
        let mut alive = vec![true; n];
        loop {
            let mut changed = false;
            for v in 0..n {
                if !alive[v] {
                    continue;
                }
                let no_in = parents[v].iter().all(|&p| !alive[p]);
                let no_out = children[v].iter().all(|&c| !alive[c]);
                if no_in || no_out {
                    alive[v] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let rest: Vec<usize> = (0..n).filter(|&v| alive[v]).collect();
        (!rest.is_empty()).then_some(rest)
    }

    /// Variables in an order where every parent precedes its children.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.len();
        let mut indeg = vec![0usize; n];
        for cpt in &self.cpts {
            indeg[cpt.child] += cpt.parents.len();
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&v| indeg[v] == 0).collect();
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for cpt in &self.cpts {
                for &p in &cpt.parents {
                    if p == v {
                        indeg[cpt.child] -= 1;
                        if indeg[cpt.child] == 0 {
                            ready.insert(cpt.child);
                        }
                    }
                }
            }
        }
        if order.len() != n {
            return Err(Error::InvalidNetwork(self.validate()));
        }
        Ok(order)
    }

    /// Checks that every assignment refers to a known variable and an
    /// in-range state.
    pub fn check_evidence(&self, e: &Evidence) -> Result<()> {
        for (&var, &state) in e.iter() {
            let v = self
                .variables
                .get(var)
                .ok_or_else(|| Error::UnknownVariable(format!("#{var}")))?;
            if state >= v.cardinality {
                return Err(Error::StateOutOfRange {
                    variable: v.id.clone(),
                    state,
                    cardinality: v.cardinality,
                });
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            variables: self.variables.clone(),
            cpts: self
                .cpts
                .iter()
                .map(|cpt| {
                    let width = self.variables[cpt.child].cardinality;
                    CptDocument {
                        child: self.variables[cpt.child].id.clone(),
                        parents: cpt.parents.iter().map(|&p| self.variables[p].id.clone()).collect(),
                        rows: cpt.table.chunks(width).map(|r| r.to_vec()).collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn from_document(doc: NetworkDocument) -> Result<Self> {
        let index: HashMap<&str, usize> = doc
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.as_str(), i))
            .collect();
        let mut violations = Vec::new();
        let mut cpts = Vec::new();
        for c in &doc.cpts {
            let Some(&child) = index.get(c.child.as_str()) else {
                return Err(Error::UnknownVariable(c.child.clone()));
            };
            let mut parents = Vec::new();
            for p in &c.parents {
                match index.get(p.as_str()) {
                    Some(&i) => parents.push(i),
                    None => violations.push(Violation::DanglingParent {
                        variable: c.child.clone(),
                        parent: p.clone(),
                    }),
                }
            }
            cpts.push(Cpt {
                child,
                parents,
                table: c.rows.iter().flatten().copied().collect(),
            });
        }
        if !violations.is_empty() {
            return Err(Error::InvalidNetwork(violations));
        }
        cpts.sort_by_key(|c| c.child);
        Ok(Network::new(doc.variables, cpts))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("network document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Network::from_document(serde_json::from_str(s)?)
    }
}

/// Serialized form of a [`Network`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub variables: Vec<Variable>,
    pub cpts: Vec<CptDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CptDocument {
    pub child: String,
    pub parents: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Observed states keyed by variable index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Evidence(BTreeMap<usize, usize>);

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `var = state`; a variable can only be assigned once.
    pub fn observe(&mut self, var: usize, state: usize) -> Result<()> {
        if self.0.contains_key(&var) {
            return Err(Error::DuplicateEvidence(format!("#{var}")));
        }
        self.0.insert(var, state);
        Ok(())
    }

    pub fn with(mut self, var: usize, state: usize) -> Self {
        self.0.insert(var, state);
        self
    }

    pub fn get(&self, var: usize) -> Option<usize> {
        self.0.get(&var).copied()
    }

    pub fn contains(&self, var: usize) -> bool {
        self.0.contains_key(&var)
    }

    pub fn remove(&mut self, var: usize) -> Option<usize> {
        self.0.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &usize)> {
        self.0.iter()
    }

    /// Builds evidence from `(variable id, 0-based state)` pairs.
    pub fn from_ids<'a>(
        net: &Network,
        pairs: impl IntoIterator<Item = (&'a str, usize)>,
    ) -> Result<Self> {
        let mut e = Evidence::new();
        for (id, state) in pairs {
            let var = net.index_of(id)?;
            e.observe(var, state)
                .map_err(|_| Error::DuplicateEvidence(id.to_string()))?;
        }
        net.check_evidence(&e)?;
        Ok(e)
    }
}

impl FromIterator<(usize, usize)> for Evidence {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Evidence(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub variable: String,
    pub probabilities: Vec<f64>,
}

impl Distribution {
    /// Most probable state; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Whether more than one state attains the maximum.
    pub fn is_tied(&self) -> bool {
        let m = self.probabilities[self.argmax()];
        self.probabilities.iter().filter(|&&p| p == m).count() > 1
    }

    /// Shannon entropy in nats, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        entropy_of(&self.probabilities)
    }
}

pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum()
}
