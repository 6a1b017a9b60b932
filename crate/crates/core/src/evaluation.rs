//! Cross-validated comparison of student-model structures.
//!
//! For every model and fold, parameters are learned on the other folds and
//! each held-out student takes a simulated adaptive test answered from their
//! record. After every step the model predicts the still-open answers and the
//! share of correct predictions is the step's success ratio.

use std::borrow::Cow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{discretize_scores, to_boolean, BindOptions, Dataset, Record};
use crate::error::{Error, Result};
use crate::inference::InferenceEngine;
use crate::learning::{em_fit, sparsity_metrics, EmConfig, FitResult, Sparsity};
use crate::network::{Evidence, Network, Role, Scale};
use crate::session::{Session, TerminationRule};
use crate::zoo::{build_model, ModelId, TestBlueprint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub folds: usize,
    pub seed: u64,
    pub models: Vec<ModelId>,
    /// Maximum number of questions per simulated test; `None` asks them all.
    pub max_steps: Option<usize>,
    pub em: EmConfig,
    /// Where fitted fold networks are cached, if anywhere.
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 10,
            seed: 0,
            models: vec![ModelId::B2, ModelId::B3],
            max_steps: None,
            em: EmConfig::default(),
            cache_dir: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Evaluation("at least 2 folds are required".into()));
        }
        if self.folds > ds.len() {
            return Err(Error::Evaluation(format!(
                "{} folds requested for {} rows",
                self.folds,
                ds.len()
            )));
        }
        if self.models.is_empty() {
            return Err(Error::Evaluation("no models selected".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Evaluation("max_steps must be at least 1".into()));
        }
        for m in &self.models {
            if m.spec().scale == Scale::Points && ds.scale == Scale::Boolean {
                return Err(Error::Evaluation(format!(
                    "`{m}` grades questions in points but the data are Boolean"
                )));
            }
            if m.spec().additional_info && ds.records.iter().all(|r| r.info.iter().all(Option::is_none)) {
                return Err(Error::Evaluation(format!("`{m}` needs student information but none is recorded")));
            }
        }
        self.em.validate()
    }
}

/// Fold of every row: a seeded shuffle dealt round-robin, so fold sizes
/// differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        out[row] = pos % folds;
    }
    out
}

/// Share of open questions whose most probable answer matches `truth`, or
/// `None` when no question is open.
pub fn success_ratio_step(state: &Session, truth: &Evidence) -> Result<Option<f64>> {
    let preds = state.predict_answers();
    if preds.is_empty() {
        return Ok(None);
    }
    let net = state.engine().network();
    let mut hits = 0usize;
    for p in &preds {
        let actual = truth
            .get(p.question)
            .ok_or_else(|| Error::Evaluation(format!("no recorded answer for `{}`", net.variables[p.question].id)))?;
        if actual == p.state {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / preds.len() as f64))
}

/// Per-model results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelId,
    /// `SR_s` averaged over all evaluated students (undefined terms add 0).
    pub sr_curve: Vec<f64>,
    /// `SR_s` averaged over students with an open question at step `s`.
    pub sr_conditional: Vec<Option<f64>>,
    pub question_ids: Vec<String>,
    /// `occurrence[q][k]`: share of tests that asked question `q` as their
    /// `(k+1)`-th question.
    pub occurrence: Vec<Vec<f64>>,
    pub sparsity: Sparsity,
    pub students: usize,
    pub failed_folds: Vec<usize>,
    /// Recorded answers that had zero probability under the fitted model and
    /// were skipped instead of entered.
    pub contradicted_answers: usize,
    pub fold_networks: Vec<Option<String>>,
}

impl ModelReport {
    pub fn is_complete(&self) -> bool {
        self.failed_folds.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub folds: usize,
    pub models: Vec<ModelId>,
    pub max_steps: Option<usize>,
    pub em: EmConfig,
    pub dataset_sha256: String,
    pub dataset_rows: usize,
    pub dataset_scale: Scale,
    pub entropy_log_base: String,
    pub sr_curve_divisor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub models: Vec<ModelReport>,
    pub student_ids: Vec<String>,
    pub fold_of: Vec<usize>,
    pub manifest: RunManifest,
}

impl EvalReport {
    pub fn model(&self, id: ModelId) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == id)
    }
}

struct StudentRun {
    sr: Vec<Option<f64>>,
    asked: Vec<usize>,
    contradicted: usize,
}

struct FoldRun {
    network: Option<Network>,
    students: Vec<StudentRun>,
}

fn cache_key(ds_hash: &str, model: ModelId, fold: usize, cfg: &EvalConfig) -> String {
    let mut h = Sha256::new();
    h.update(ds_hash.as_bytes());
    h.update(model.as_str().as_bytes());
    h.update(fold.to_le_bytes());
    h.update(cfg.folds.to_le_bytes());
    h.update(cfg.seed.to_le_bytes());
    h.update(serde_json::to_vec(&cfg.em).expect("config serializes"));
    hex::encode(&h.finalize()[..8])
}

/// `ds` on the grading scale of `model`: points data are reduced to Boolean
/// for Boolean models; Boolean data cannot feed a points model.
pub fn data_for_model(model: ModelId, ds: &Dataset) -> Result<Cow<'_, Dataset>> {
    match (model.spec().scale, ds.scale) {
        (Scale::Boolean, Scale::Points) => Ok(Cow::Owned(to_boolean(ds)?)),
        (Scale::Points, Scale::Boolean) => Err(Error::Data(format!(
            "`{model}` grades questions in points but the data are Boolean"
        ))),
        _ => Ok(Cow::Borrowed(ds)),
    }
}

/// Builds `model` for `bp` and fits it to `ds` by EM, binding student
/// information and score groups as the model requires.
pub fn train_model(model: ModelId, bp: &TestBlueprint, ds: &Dataset, em: &EmConfig) -> Result<FitResult> {
    let spec = model.spec();
    let structure = build_model(&spec, bp)?;
    let data = data_for_model(model, ds)?;
    let groups = if spec.observed_score {
        Some(discretize_scores(&data)?.groups)
    } else {
        None
    };
    let rows = data.evidence_rows(
        &structure,
        BindOptions { include_info: spec.additional_info, score_groups: groups.as_deref() },
    )?;
    em_fit(&structure, &rows, em)
}

fn fit_fold(
    model: ModelId,
    bp: &TestBlueprint,
    ds: &Dataset,
    train: &[usize],
    fold: usize,
    cfg: &EvalConfig,
    ds_hash: &str,
) -> Result<Network> {
    let cache = cfg.cache_dir.as_ref().map(|dir| {
        let key = cache_key(ds_hash, model, fold, cfg);
        dir.join(format!("{}_fold{}_{}.json", model_file_stem(model), fold, key))
    });
    if let Some(path) = &cache {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(net) = Network::from_json(&text) {
                return Ok(net);
            }
        }
    }
    let em = EmConfig { seed: cfg.em.seed.wrapping_add(fold as u64), ..cfg.em };
    let fit = train_model(model, bp, &ds.subset(train), &em)?;
    if let Some(path) = &cache {
        std::fs::create_dir_all(path.parent().expect("cache file has a parent"))?;
        std::fs::write(path, fit.network.to_json())?;
    }
    Ok(fit.network)
}

fn simulate_student(
    engine: &Arc<InferenceEngine>,
    rec: &Record,
    ds: &Dataset,
    include_info: bool,
    limit: usize,
) -> Result<StudentRun> {
    let net = engine.network();
    let mut truth = Evidence::new();
    let mut pool = Vec::new();
    for (col, qid) in ds.question_ids.iter().enumerate() {
        if let (Ok(v), Some(x)) = (net.index_of(qid), rec.answers[col]) {
            truth = truth.with(v, x as usize);
            pool.push(v);
        }
    }
    let mut initial = Evidence::new();
    if include_info {
        for v in net.vars_with_role(Role::Info) {
            let col = ds.info_ids.iter().position(|i| *i == net.variables[v].id);
            if let Some(code) = col.and_then(|c| rec.info[c]) {
                initial = initial.with(v, code as usize - 1);
            }
        }
    }
    let mut session = match Session::with_pool(engine.clone(), initial.clone(), pool.clone(), TerminationRule::Exhaust) {
        Ok(s) => s,
        // Info evidence the model cannot explain: start from the prior.
        Err(Error::ImpossibleEvidence) => {
            Session::with_pool(engine.clone(), Evidence::new(), pool, TerminationRule::Exhaust)?
        }
        Err(e) => return Err(e),
    };
    let mut sr = vec![success_ratio_step(&session, &truth)?];
    let mut asked = Vec::new();
    let mut contradicted = 0;
    while asked.len() < limit {
        let Some(choice) = session.select_next()? else { break };
        let answer = truth.get(choice.question).expect("pool questions have answers");
        match session.submit_answer(choice.question, answer) {
            Ok(_) => {}
            Err(Error::ImpossibleEvidence) => {
                session.discard(choice.question)?;
                contradicted += 1;
            }
            Err(e) => return Err(e),
        }
        asked.push(choice.question);
        sr.push(success_ratio_step(&session, &truth)?);
    }
    Ok(StudentRun { sr, asked, contradicted })
}

/// Runs k-fold cross-validation for every configured model.
pub fn cross_validate(ds: &Dataset, bp: &TestBlueprint, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate(ds)?;
    bp.validate()?;
    if ds.question_ids != bp.question_ids() {
        return Err(Error::Evaluation("dataset columns do not follow the blueprint".into()));
    }
    let ds_hash = ds.content_hash();
    let fold_of = fold_assignment(ds.len(), cfg.folds, cfg.seed);
    let folds: Vec<Vec<usize>> = (0..cfg.folds)
        .map(|f| (0..ds.len()).filter(|&r| fold_of[r] == f).collect())
        .collect();

    let mut models = Vec::new();
    for &model in &cfg.models {
        let spec = model.spec();
        let data = data_for_model(model, ds)?;
        let data = data.as_ref();
        let question_count = bp.questions.len();
        let limit = cfg.max_steps.map_or(question_count, |m| m.min(question_count));

        let runs: Vec<FoldRun> = (0..cfg.folds)
            .into_par_iter()
            .map(|f| {
                let train: Vec<usize> = (0..ds.len()).filter(|&r| fold_of[r] != f).collect();
                let net = match fit_fold(model, bp, data, &train, f, cfg, &ds_hash) {
                    Ok(n) => n,
                    Err(Error::Learning(_)) => return Ok(FoldRun { network: None, students: vec![] }),
                    Err(e) => return Err(e),
                };
                let engine = Arc::new(InferenceEngine::new(net.clone())?);
                let students = folds[f]
                    .par_iter()
                    .map(|&r| simulate_student(&engine, &data.records[r], data, spec.additional_info, limit))
                    .collect::<Result<Vec<_>>>()?;
                Ok(FoldRun { network: Some(net), students })
            })
            .collect::<Result<Vec<_>>>()?;

        let n: usize = runs.iter().map(|r| r.students.len()).sum();
        let mut sums = vec![0.0; limit + 1];
        let mut defined = vec![0usize; limit + 1];
        let mut counts = vec![vec![0usize; limit]; question_count];
        let mut contradicted = 0;
        let mut nets = Vec::new();
        let mut failed_folds = Vec::new();
        let mut fold_networks = Vec::new();
        for (f, run) in runs.iter().enumerate() {
            match &run.network {
                Some(net) => {
                    nets.push(net.clone());
                    fold_networks.push(Some(net.to_json()));
                }
                None => {
                    failed_folds.push(f);
                    fold_networks.push(None);
                }
            }
            for st in &run.students {
                for (s, v) in st.sr.iter().enumerate() {
                    if let Some(x) = v {
                        sums[s] += x;
                        defined[s] += 1;
                    }
                }
                let net = run.network.as_ref().expect("students imply a network");
                for (k, &q) in st.asked.iter().enumerate() {
                    let col = bp
                        .questions
                        .iter()
                        .position(|bq| bq.id == net.variables[q].id)
                        .expect("question from blueprint");
                    counts[col][k] += 1;
                }
                contradicted += st.contradicted;
            }
        }
        let denom = n.max(1) as f64;
        models.push(ModelReport {
            model,
            sr_curve: sums.iter().map(|s| s / denom).collect(),
            sr_conditional: sums
                .iter()
                .zip(&defined)
                .map(|(s, &d)| (d > 0).then(|| s / d as f64))
                .collect(),
            question_ids: bp.questions.iter().map(|q| q.id.clone()).collect(),
            occurrence: counts
                .iter()
                .map(|row| row.iter().map(|&c| c as f64 / denom).collect())
                .collect(),
            sparsity: sparsity_metrics(&nets),
            students: n,
            failed_folds,
            contradicted_answers: contradicted,
            fold_networks,
        });
    }

    Ok(EvalReport {
        models,
        student_ids: ds.records.iter().map(|r| r.student_id.clone()).collect(),
        fold_of,
        manifest: RunManifest {
            seed: cfg.seed,
            folds: cfg.folds,
            models: cfg.models.clone(),
            max_steps: cfg.max_steps,
            em: cfg.em,
            dataset_sha256: ds_hash,
            dataset_rows: ds.len(),
            dataset_scale: ds.scale,
            entropy_log_base: "e".into(),
            sr_curve_divisor: "all evaluated students".into(),
        },
    })
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// File-name form of a model id (`+` becomes `plus`).
pub fn model_file_stem(model: ModelId) -> String {
    model.as_str().replace('+', "plus")
}

/// Writes `sr_curves.csv`, `sr_curves_conditional.csv`,
/// `occurrence_<model>.csv`, `sparsity.csv`, `folds.csv` and
/// `manifest.json` into `dir`.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    let mut sr = String::from("model,step,sr\n");
    let mut cond = String::from("model,step,sr\n");
    for m in &report.models {
        for (s, v) in m.sr_curve.iter().enumerate() {
            sr.push_str(&format!("{},{},{}\n", m.model, s, fmt6(*v)));
        }
        for (s, v) in m.sr_conditional.iter().enumerate() {
            cond.push_str(&format!("{},{},{}\n", m.model, s, v.map(fmt6).unwrap_or_default()));
        }
    }
    write("sr_curves.csv".into(), sr)?;
    write("sr_curves_conditional.csv".into(), cond)?;

    for m in &report.models {
        let mut occ = String::from("question,step,freq\n");
        for (q, row) in m.question_ids.iter().zip(&m.occurrence) {
            for (k, v) in row.iter().enumerate() {
                occ.push_str(&format!("{},{},{}\n", q, k + 1, fmt6(*v)));
            }
        }
        write(format!("occurrence_{}.csv", model_file_stem(m.model)), occ)?;
    }

    let mut sp = String::from("model,azt,as\n");
    for m in &report.models {
        sp.push_str(&format!("{},{},{}\n", m.model, fmt6(m.sparsity.azt), fmt6(m.sparsity.as_)));
    }
    write("sparsity.csv".into(), sp)?;

    let mut folds = String::from("student_id,fold\n");
    for (id, f) in report.student_ids.iter().zip(&report.fold_of) {
        folds.push_str(&format!("{id},{f}\n"));
    }
    write("folds.csv".into(), folds)?;
    write(
        "manifest.json".into(),
        serde_json::to_string_pretty(&report.manifest)? + "\n",
    )?;
    Ok(written)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let pairs: Vec<(f64, f64)> = rx.into_iter().zip(ry).collect();
    crate::data::pearson(&pairs)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
