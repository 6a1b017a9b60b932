//! Adaptive test sessions driven by greedy information gain.
//!
//! The uncertainty of a student model is the sum of the marginal Shannon
//! entropies (natural log) of its skill and score-group variables. At every
//! step the open question whose answer is expected to lower that sum the most
//! is asked next.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InferenceEngine;
use crate::network::{entropy_of, Distribution, Evidence, Role};

/// Information gains closer than this count as tied.
const IG_TIE: f64 = 1e-12;

/// `H(e)`: summed marginal entropy of the estimated variables.
pub fn entropy(engine: &InferenceEngine, e: &Evidence) -> Result<f64> {
    let post = engine.calibrate(e)?;
    Ok(engine
        .network()
        .estimated_vars()
        .into_iter()
        .map(|v| entropy_of(&post.marginal(v)))
        .sum())
}

/// `EH(q, e) = Σ_x P(q=x | e) · H(e, q=x)`; zero-probability outcomes are
/// skipped.
pub fn expected_entropy(engine: &InferenceEngine, e: &Evidence, q: usize) -> Result<f64> {
    check_open(engine, e, q)?;
    let prior = engine.calibrate(e)?.marginal(q);
    expected_entropy_given(engine, e, q, &prior)
}

fn expected_entropy_given(
    engine: &InferenceEngine,
    e: &Evidence,
    q: usize,
    predictive: &[f64],
) -> Result<f64> {
    let skills = engine.network().estimated_vars();
    let mut ext = e.clone();
    let mut eh = 0.0;
    for (x, &p) in predictive.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        ext.remove(q);
        ext.observe(q, x)?;
        // Outcomes whose probability underflows on recalibration carry no
        // measurable weight.
        let post = match engine.tree().calibrate(&ext) {
            Ok(post) => post,
            Err(Error::ImpossibleEvidence) => continue,
            Err(e) => return Err(e),
        };
        let h: f64 = skills.iter().map(|&v| entropy_of(&post.marginal(v))).sum();
        eh += p * h;
    }
    Ok(eh)
}

/// `IG(q, e) = H(e) − EH(q, e)`.
pub fn information_gain(engine: &InferenceEngine, e: &Evidence, q: usize) -> Result<f64> {
    check_open(engine, e, q)?;
    let post = engine.calibrate(e)?;
    let h: f64 = engine
        .network()
        .estimated_vars()
        .into_iter()
        .map(|v| entropy_of(&post.marginal(v)))
        .sum();
    Ok(h - expected_entropy_given(engine, e, q, &post.marginal(q))?)
}

fn check_open(engine: &InferenceEngine, e: &Evidence, q: usize) -> Result<()> {
    let net = engine.network();
    let var = net
        .variables
        .get(q)
        .ok_or_else(|| Error::UnknownVariable(format!("#{q}")))?;
    if e.contains(q) {
        return Err(Error::AlreadyAnswered(var.id.clone()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TerminationRule {
    MaxQuestions(usize),
    /// Stop once `H(e)` drops below the threshold (nats).
    EntropyBelow(f64),
    Exhaust,
}

impl TerminationRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TerminationRule::MaxQuestions(0) => {
                Err(Error::Spec("max_questions must be at least 1".into()))
            }
            TerminationRule::EntropyBelow(h) if !(h > 0.0) => {
                Err(Error::Spec("entropy threshold must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub question: usize,
    pub ig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub question: usize,
    pub state: usize,
    pub distribution: Distribution,
    pub tie: bool,
}

/// One line of a session transcript. States are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub step: usize,
    pub asked: String,
    pub answer: usize,
    pub ig: f64,
    pub entropy_after: f64,
    pub skill_posteriors: BTreeMap<String, Vec<f64>>,
}

/// Live state of one adaptive test.
#[derive(Debug, Clone)]
pub struct Session {
    engine: Arc<InferenceEngine>,
    evidence: Evidence,
    remaining: Vec<usize>,
    step: usize,
    entropy_trace: Vec<f64>,
    termination: TerminationRule,
    marginals: Vec<Vec<f64>>,
    transcript: Vec<TranscriptRecord>,
    last_choice: Option<Choice>,
}

impl Session {
    /// Starts a session with `initial` evidence (typically student
    /// information) and every unobserved question open.
    pub fn new(engine: Arc<InferenceEngine>, initial: Evidence, termination: TerminationRule) -> Result<Self> {
        let pool = engine.network().vars_with_role(Role::Question);
        Session::with_pool(engine, initial, pool, termination)
    }

    /// Like [`Session::new`] but only the questions in `pool` can be asked.
    pub fn with_pool(
        engine: Arc<InferenceEngine>,
        initial: Evidence,
        pool: Vec<usize>,
        termination: TerminationRule,
    ) -> Result<Self> {
        termination.validate()?;
        let net = engine.network();
        for &q in &pool {
            match net.variables.get(q) {
                Some(v) if v.role == Role::Question => {}
                Some(v) => return Err(Error::Spec(format!("`{}` is not a question", v.id))),
                None => return Err(Error::UnknownVariable(format!("#{q}"))),
            }
        }
        let mut remaining: Vec<usize> = pool.into_iter().filter(|&q| !initial.contains(q)).collect();
        remaining.sort_unstable();
        remaining.dedup();
        let post = engine.calibrate(&initial)?;
        let marginals: Vec<Vec<f64>> = (0..net.len()).map(|v| post.marginal(v)).collect();
        drop(post);
        let mut s = Session {
            engine,
            evidence: initial,
            remaining,
            step: 0,
            entropy_trace: Vec::new(),
            termination,
            marginals,
            transcript: Vec::new(),
            last_choice: None,
        };
        s.entropy_trace.push(s.current_entropy());
        Ok(s)
    }

    pub fn engine(&self) -> &Arc<InferenceEngine> {
        &self.engine
    }

    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    /// Open questions in variable order.
    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `H(e)` at session start followed by the value after each answer.
    pub fn entropy_trace(&self) -> &[f64] {
        &self.entropy_trace
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    pub fn termination(&self) -> TerminationRule {
        self.termination
    }

    pub fn current_entropy(&self) -> f64 {
        self.engine
            .network()
            .estimated_vars()
            .into_iter()
            .map(|v| entropy_of(&self.marginals[v]))
            .sum()
    }

    pub fn is_finished(&self) -> bool {
        if self.remaining.is_empty() {
            return true;
        }
        match self.termination {
            TerminationRule::MaxQuestions(k) => self.step >= k,
            TerminationRule::EntropyBelow(h) => self.current_entropy() < h,
            TerminationRule::Exhaust => false,
        }
    }

    /// Information gain of every open question, in variable order.
    pub fn gains(&self) -> Result<Vec<(usize, f64)>> {
        let h = self.current_entropy();
        self.remaining
            .iter()
            .map(|&q| {
                let eh = expected_entropy_given(&self.engine, &self.evidence, q, &self.marginals[q])?;
                Ok((q, h - eh))
            })
            .collect()
    }

    /// The open question with the largest information gain (lowest index on
    /// ties), or `None` once the test is over.
    pub fn select_next(&mut self) -> Result<Option<Choice>> {
        if self.is_finished() {
            return Ok(None);
        }
        let mut best: Option<Choice> = None;
        for (q, ig) in self.gains()? {
            if best.is_none_or(|b| ig > b.ig + IG_TIE) {
                best = Some(Choice { question: q, ig });
            }
        }
        self.last_choice = best;
        Ok(best)
    }

    /// Inserts `question = answer` (0-based state) and closes the question.
    /// On error the session is left untouched.
    pub fn submit_answer(&mut self, question: usize, answer: usize) -> Result<&TranscriptRecord> {
        let net = self.engine.network();
        let var = net
            .variables
            .get(question)
            .ok_or_else(|| Error::UnknownVariable(format!("#{question}")))?;
        if self.evidence.contains(question) {
            return Err(Error::AlreadyAnswered(var.id.clone()));
        }
        let Ok(pos) = self.remaining.binary_search(&question) else {
            return Err(Error::NotRemaining(var.id.clone()));
        };
        if answer >= var.cardinality {
            return Err(Error::StateOutOfRange {
                variable: var.id.clone(),
                state: answer,
                cardinality: var.cardinality,
            });
        }
        let ig = match self.last_choice {
            Some(c) if c.question == question => c.ig,
            _ => {
                let h = self.current_entropy();
                h - expected_entropy_given(&self.engine, &self.evidence, question, &self.marginals[question])?
            }
        };
        let mut evidence = self.evidence.clone();
        evidence.observe(question, answer)?;
        let post = self.engine.tree().calibrate(&evidence)?;
        let marginals: Vec<Vec<f64>> = (0..net.len()).map(|v| post.marginal(v)).collect();

        self.evidence = evidence;
        self.marginals = marginals;
        self.remaining.remove(pos);
        self.step += 1;
        self.last_choice = None;
        let h = self.current_entropy();
        self.entropy_trace.push(h);
        let record = TranscriptRecord {
            step: self.step,
            asked: var.id.clone(),
            answer: answer + 1,
            ig,
            entropy_after: h,
            skill_posteriors: self
                .skill_estimates()
                .into_iter()
                .map(|d| (d.variable, d.probabilities))
                .collect(),
        };
        self.transcript.push(record);
        Ok(self.transcript.last().expect("just pushed"))
    }

    /// Closes `question` without inserting an answer, e.g. when the recorded
    /// answer contradicts the model. `step` is not advanced.
    pub fn discard(&mut self, question: usize) -> Result<()> {
        let pos = self.remaining.binary_search(&question).map_err(|_| {
            let id = self
                .engine
                .network()
                .variables
                .get(question)
                .map_or_else(|| format!("#{question}"), |v| v.id.clone());
            Error::NotRemaining(id)
        })?;
        self.remaining.remove(pos);
        self.last_choice = None;
        Ok(())
    }

    /// `P(S | e)` for every skill and score-group variable.
    pub fn skill_estimates(&self) -> Vec<Distribution> {
        let net = self.engine.network();
        net.estimated_vars()
            .into_iter()
            .map(|v| Distribution {
                variable: net.variables[v].id.clone(),
                probabilities: self.marginals[v].clone(),
            })
            .collect()
    }

    pub fn marginal(&self, var: usize) -> &[f64] {
        &self.marginals[var]
    }

    /// Most probable answer to every open question.
    pub fn predict_answers(&self) -> Vec<Prediction> {
        let net = self.engine.network();
        self.remaining
            .iter()
            .map(|&q| {
                let distribution = Distribution {
                    variable: net.variables[q].id.clone(),
                    probabilities: self.marginals[q].clone(),
                };
                Prediction {
                    question: q,
                    state: distribution.argmax(),
                    tie: distribution.is_tied(),
                    distribution,
                }
            })
            .collect()
    }

    /// Transcript as JSON lines.
    pub fn transcript_jsonl(&self) -> String {
        self.transcript
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}
