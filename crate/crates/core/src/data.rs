//! Student answer datasets.
//!
//! A dataset CSV has a header `student_id,<info ids…>,<question ids…>` in
//! blueprint order. Question cells hold the points scored (`0..=max_points`,
//! or `0`/`1` on the Boolean scale), info cells hold 1-based category codes,
//! and an empty cell marks a missing value.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{Evidence, Network, Role, Scale};
use crate::zoo::{build_model, ModelId, TestBlueprint};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub student_id: String,
    /// 1-based category codes, one per blueprint info variable.
    pub info: Vec<Option<u32>>,
    /// Points per question, in blueprint order.
    pub answers: Vec<Option<u32>>,
}

impl Record {
    /// Sum of answered cells.
    pub fn total(&self) -> u32 {
        self.answers.iter().flatten().sum()
    }

    pub fn is_complete(&self) -> bool {
        self.answers.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub scale: Scale,
    pub question_ids: Vec<String>,
    pub max_points: Vec<u32>,
    pub info_ids: Vec<String>,
    pub info_cards: Vec<usize>,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BindOptions<'a> {
    /// Insert info columns as evidence (only for variables the network has).
    pub include_info: bool,
    /// Score-group state per record, for networks with a score-group node.
    pub score_groups: Option<&'a [usize]>,
}

impl Dataset {
    pub fn empty(bp: &TestBlueprint, scale: Scale) -> Self {
        Dataset {
            scale,
            question_ids: bp.questions.iter().map(|q| q.id.clone()).collect(),
            max_points: bp.questions.iter().map(|q| q.max_points).collect(),
            info_ids: bp.info_vars.iter().map(|v| v.id.clone()).collect(),
            info_cards: bp.info_vars.iter().map(|v| v.cardinality).collect(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Largest value a question cell may hold on this dataset's scale.
    pub fn cell_max(&self, question: usize) -> u32 {
        match self.scale {
            Scale::Boolean => 1,
            Scale::Points => self.max_points[question],
        }
    }

    pub fn header(&self) -> Vec<String> {
        std::iter::once("student_id".to_string())
            .chain(self.info_ids.iter().cloned())
            .chain(self.question_ids.iter().cloned())
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            records: rows.iter().map(|&r| self.records[r].clone()).collect(),
            ..self.clone_schema()
        }
    }

    fn clone_schema(&self) -> Dataset {
        Dataset {
            scale: self.scale,
            question_ids: self.question_ids.clone(),
            max_points: self.max_points.clone(),
            info_ids: self.info_ids.clone(),
            info_cards: self.info_cards.clone(),
            records: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (r, rec) in self.records.iter().enumerate() {
            if !seen.insert(rec.student_id.as_str()) {
                return Err(Error::Data(format!("duplicate student id `{}`", rec.student_id)));
            }
            for (q, cell) in rec.answers.iter().enumerate() {
                if let Some(v) = *cell {
                    if v > self.cell_max(q) {
                        return Err(Error::Data(format!(
                            "row {} column `{}`: value {v} exceeds maximum {}",
                            r + 1,
                            self.question_ids[q],
                            self.cell_max(q)
                        )));
                    }
                }
            }
            for (i, cell) in rec.info.iter().enumerate() {
                if let Some(v) = *cell {
                    if v < 1 || v as usize > self.info_cards[i] {
                        return Err(Error::Data(format!(
                            "row {} column `{}`: code {v} outside 1..={}",
                            r + 1,
                            self.info_ids[i],
                            self.info_cards[i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        let cell = |v: &Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
        for rec in &self.records {
            let row: Vec<String> = std::iter::once(rec.student_id.clone())
                .chain(rec.info.iter().map(cell))
                .chain(rec.answers.iter().map(cell))
                .collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: std::io::Read>(r: R, bp: &TestBlueprint, scale: Scale) -> Result<Self> {
        bp.validate()?;
        let mut ds = Dataset::empty(bp, scale);
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != ds.header() {
            return Err(Error::Data(format!(
                "header mismatch: expected `{}`, found `{}`",
                ds.header().join(","),
                header.join(",")
            )));
        }
        let n_info = ds.info_ids.len();
        for (r, row) in rdr.records().enumerate() {
            let row = row?;
            let parse = |col: usize| -> Result<Option<u32>> {
                let s = row.get(col).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<u32>().map(Some).map_err(|_| {
                    Error::Data(format!("row {} column `{}`: bad value `{s}`", r + 1, header[col]))
                })
            };
            let student_id = row.get(0).unwrap_or("").trim().to_string();
            if student_id.is_empty() {
                return Err(Error::Data(format!("row {}: empty student id", r + 1)));
            }
            let info = (0..n_info).map(|i| parse(1 + i)).collect::<Result<_>>()?;
            let answers = (0..ds.question_ids.len())
                .map(|q| parse(1 + n_info + q))
                .collect::<Result<_>>()?;
            ds.records.push(Record { student_id, info, answers });
        }
        ds.check()?;
        Ok(ds)
    }

    /// SHA-256 of the CSV serialization.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }

    /// One evidence set per record, keyed by the variables of `net`.
    /// Every question of `net` needs a column of matching scale.
    pub fn evidence_rows(&self, net: &Network, opts: BindOptions<'_>) -> Result<Vec<Evidence>> {
        let mut q_cols = Vec::new();
        for v in net.vars_with_role(Role::Question) {
            let var = &net.variables[v];
            let col = self
                .question_ids
                .iter()
                .position(|q| *q == var.id)
                .ok_or_else(|| Error::Data(format!("no column for question `{}`", var.id)))?;
            if var.scale.is_some_and(|s| s != self.scale) {
                return Err(Error::Data(format!(
                    "question `{}` is graded on the {} scale but the data are {}",
                    var.id,
                    var.scale.unwrap(),
                    self.scale
                )));
            }
            if self.cell_max(col) as usize + 1 != var.cardinality {
                return Err(Error::Data(format!(
                    "question `{}` has {} states but the column allows 0..={}",
                    var.id,
                    var.cardinality,
                    self.cell_max(col)
                )));
            }
            q_cols.push((v, col));
        }
        let mut info_cols = Vec::new();
        if opts.include_info {
            for v in net.vars_with_role(Role::Info) {
                let id = &net.variables[v].id;
                let col = self
                    .info_ids
                    .iter()
                    .position(|i| i == id)
                    .ok_or_else(|| Error::Data(format!("no column for info variable `{id}`")))?;
                info_cols.push((v, col));
            }
        }
        let group_var = net.vars_with_role(Role::Scoregroup).first().copied();
        if let Some(groups) = opts.score_groups {
            if groups.len() != self.records.len() {
                return Err(Error::Data("score groups do not match the row count".into()));
            }
        }
        Ok(self
            .records
            .iter()
            .enumerate()
            .map(|(r, rec)| {
                let mut e = Evidence::new();
                for &(v, col) in &q_cols {
                    if let Some(x) = rec.answers[col] {
                        e = e.with(v, x as usize);
                    }
                }
                for &(v, col) in &info_cols {
                    if let Some(x) = rec.info[col] {
                        e = e.with(v, x as usize - 1);
                    }
                }
                if let (Some(g), Some(groups)) = (group_var, opts.score_groups) {
                    e = e.with(g, groups[r]);
                }
                e
            })
            .collect())
    }
}

pub fn load_csv(path: impl AsRef<Path>, bp: &TestBlueprint, scale: Scale) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    Dataset::read_csv(std::io::BufReader::new(f), bp, scale)
}

/// Full marks become `1`, anything else `0`.
pub fn to_boolean(ds: &Dataset) -> Result<Dataset> {
    if ds.scale == Scale::Boolean {
        return Err(Error::Data("dataset is already on the Boolean scale".into()));
    }
    let mut out = ds.clone();
    out.scale = Scale::Boolean;
    for rec in &mut out.records {
        for (q, cell) in rec.answers.iter_mut().enumerate() {
            *cell = cell.map(|v| u32::from(v == ds.max_points[q]));
        }
    }
    Ok(out)
}

/// Three near-equal score groups (0 = bad, 1 = average, 2 = good).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreGroups {
    /// Group per record, in dataset order.
    pub groups: Vec<usize>,
    /// Sizes of the bad, average and good groups.
    pub sizes: [usize; 3],
    /// True when some totals were computed over incomplete rows.
    pub partial: bool,
}

/// Ranks records by `(total, student id)` and cuts the ranking into thirds;
/// remainders go to the lower groups.
pub fn discretize_scores(ds: &Dataset) -> Result<ScoreGroups> {
    let n = ds.records.len();
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 rows to form score groups, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&ds.records[a], &ds.records[b]);
        ra.total().cmp(&rb.total()).then_with(|| ra.student_id.cmp(&rb.student_id))
    });
    let bad = n.div_ceil(3);
    let average = (n - bad).div_ceil(2);
    let sizes = [bad, average, n - bad - average];
    let mut groups = vec![0; n];
    for (rank, &r) in order.iter().enumerate() {
        groups[r] = if rank < bad {
            0
        } else if rank < bad + average {
            1
        } else {
            2
        };
    }
    Ok(ScoreGroups {
        groups,
        sizes,
        partial: ds.records.iter().any(|r| !r.is_complete()),
    })
}

/// Latent states sampled alongside a synthetic dataset (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentTable {
    pub variables: Vec<String>,
    pub student_ids: Vec<String>,
    pub states: Vec<Vec<usize>>,
}

impl LatentTable {
    /// CSV with 1-based states.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("student_id")
            .chain(self.variables.iter().map(String::as_str))
            .collect();
        w.write_record(&header).expect("in-memory write");
        for (id, row) in self.student_ids.iter().zip(&self.states) {
            let rec: Vec<String> = std::iter::once(id.clone())
                .chain(row.iter().map(|s| (s + 1).to_string()))
                .collect();
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub latent: LatentTable,
}

/// Forward-samples `n` students from `truth`. Skill values are returned in
/// the sidecar table and never appear in the dataset.
pub fn generate_synthetic(truth: &Network, bp: &TestBlueprint, n: usize, seed: u64) -> Result<SyntheticData> {
    if n == 0 {
        return Err(Error::Data("cannot generate an empty dataset".into()));
    }
    truth.ensure_valid()?;
    bp.validate()?;
    let scales: HashSet<Scale> = truth
        .vars_with_role(Role::Question)
        .iter()
        .map(|&q| truth.variables[q].scale.unwrap_or(Scale::Points))
        .collect();
    if scales.len() != 1 {
        return Err(Error::Data("truth network mixes grading scales".into()));
    }
    let scale = *scales.iter().next().expect("one scale");
    let mut ds = Dataset::empty(bp, scale);
    let q_vars = ds
        .question_ids
        .iter()
        .map(|id| truth.index_of(id))
        .collect::<Result<Vec<_>>>()?;
    for (col, &v) in q_vars.iter().enumerate() {
        if truth.cardinality(v) != ds.cell_max(col) as usize + 1 {
            return Err(Error::Data(format!(
                "truth question `{}` cardinality does not match the blueprint",
                ds.question_ids[col]
            )));
        }
    }
    let info_vars: Vec<Option<usize>> = ds.info_ids.iter().map(|id| truth.index_of(id).ok()).collect();
    let latent_vars = truth.vars_with_role(Role::Skill);
    let order = truth.topological_order()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(4);
    let mut latent_states = Vec::with_capacity(n);
    let mut states = vec![0usize; truth.len()];
    for i in 0..n {
        for &v in &order {
            let cpt = &truth.cpts[v];
            let parent_states: Vec<usize> = cpt.parents.iter().map(|&p| states[p]).collect();
            let row = cpt.row(truth, &parent_states);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = row.len() - 1;
            for (k, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            states[v] = pick;
        }
        ds.records.push(Record {
            student_id: format!("s{:0width$}", i + 1),
            info: info_vars.iter().map(|v| v.map(|v| states[v] as u32 + 1)).collect(),
            answers: q_vars.iter().map(|&v| Some(states[v] as u32)).collect(),
        });
        latent_states.push(latent_vars.iter().map(|&v| states[v]).collect());
    }
    let latent = LatentTable {
        variables: latent_vars.iter().map(|&v| truth.variables[v].id.clone()).collect(),
        student_ids: ds.records.iter().map(|r| r.student_id.clone()).collect(),
        states: latent_states,
    };
    Ok(SyntheticData { dataset: ds, latent })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A ground-truth network with the structure of `model` and monotone
/// couplings: higher skill states raise expected points and lower (better)
/// grade codes. Other info variables get random, weakly informative rows.
pub fn synthetic_truth(model: ModelId, bp: &TestBlueprint, seed: u64) -> Result<Network> {
    let mut net = build_model(&model.spec(), bp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subject: BTreeMap<&str, bool> = bp
        .info_vars
        .iter()
        .map(|v| (v.id.as_str(), v.subject.is_some()))
        .collect();
    // Ability on a -1.5..1.5 scale for state s of a k-state skill.
    let ability = |s: usize, k: usize| -1.5 + 3.0 * s as f64 / (k - 1) as f64;
    let snapshot = net.clone();
    for cpt in &mut net.cpts {
        let var = &snapshot.variables[cpt.child];
        let width = var.cardinality;
        let parent_cards: Vec<usize> = cpt.parents.iter().map(|&p| snapshot.cardinality(p)).collect();
        let rows = cpt.table.len() / width;
        match var.role {
            Role::Skill | Role::Scoregroup => {
                let mut row: Vec<f64> = (0..width).map(|_| 0.6 + rng.random::<f64>()).collect();
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= z);
                cpt.table = row;
            }
            Role::Question => {
                let difficulty = rng.random_range(-1.2..1.2);
                let discrimination = rng.random_range(1.5..3.0);
                let mut table = Vec::with_capacity(cpt.table.len());
                for r in 0..rows {
                    let states = decode(r, &parent_cards);
                    let theta = states
                        .iter()
                        .zip(&parent_cards)
                        .map(|(&s, &k)| ability(s, k))
                        .sum::<f64>()
                        / states.len().max(1) as f64;
                    let p = sigmoid(discrimination * (theta - difficulty)).clamp(0.02, 0.98);
                    table.extend(binomial_row(width - 1, p));
                }
                cpt.table = table;
            }
            Role::Info => {
                let k = parent_cards.first().copied().unwrap_or(1);
                let mut table = Vec::with_capacity(cpt.table.len());
                let graded = subject.get(var.id.as_str()).copied().unwrap_or(false);
                for r in 0..rows {
                    let row: Vec<f64> = if graded {
                        // Best grade (code 1, index 0) for the strongest students.
                        let theta = if k > 1 { ability(r, k) } else { 0.0 };
                        let center = (width as f64 - 1.0) * (0.5 - theta / 3.6);
                        (0..width)
                            .map(|g| (-1.2 * (g as f64 - center).powi(2)).exp())
                            .collect()
                    } else {
                        (0..width).map(|_| 0.8 + 0.4 * rng.random::<f64>()).collect()
                    };
                    let z: f64 = row.iter().sum();
                    table.extend(row.iter().map(|x| x / z));
                }
                cpt.table = table;
            }
        }
    }
    net.ensure_valid()?;
    Ok(net)
}

fn decode(mut r: usize, cards: &[usize]) -> Vec<usize> {
    let mut out = vec![0; cards.len()];
    for k in (0..cards.len()).rev() {
        out[k] = r % cards[k];
        r /= cards[k];
    }
    out
}

fn binomial_row(trials: usize, p: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(trials + 1);
    let mut coef = 1.0;
    for j in 0..=trials {
        if j > 0 {
            coef = coef * (trials - j + 1) as f64 / j as f64;
        }
        row.push(coef * p.powi(j as i32) * (1.0 - p).powi((trials - j) as i32));
    }
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= z);
    row
}

/// Pearson correlation between the total score and each subject's grade
/// column. `None` when either side has zero variance.
pub fn grade_correlations(ds: &Dataset, bp: &TestBlueprint) -> Result<BTreeMap<String, Option<f64>>> {
    let mut out = BTreeMap::new();
    let graded: Vec<_> = bp.info_vars.iter().filter(|v| v.subject.is_some()).collect();
    if graded.is_empty() {
        return Err(Error::Data("blueprint declares no grade columns".into()));
    }
    for v in graded {
        let col = ds
            .info_ids
            .iter()
            .position(|id| *id == v.id)
            .ok_or_else(|| Error::Data(format!("no column `{}`", v.id)))?;
        let pairs: Vec<(f64, f64)> = ds
            .records
            .iter()
            .filter_map(|r| r.info[col].map(|g| (r.total() as f64, g as f64)))
            .collect();
        let subject = v.subject.clone().expect("filtered");
        out.insert(subject, pearson(&pairs));
    }
    Ok(out)
}

pub(crate) fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
