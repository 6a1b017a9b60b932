//! Candidate student-model structures for a test.
//!
//! Fourteen structures are supported, identified by short ids such as `b3+`:
//! the leading letter selects Boolean (`b`) or points (`n`) grading of the
//! questions, the digit the number of skill states, `o` replaces the latent
//! skill by an observed score group, `e` uses the seven-skill expert map and
//! `+` attaches the additional student information.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, Role, Scale, Variable};

/// Score-group labels, worst to best.
pub const SCORE_GROUP_LABELS: [&str; 3] = ["bad", "average", "good"];
pub const SCORE_GROUP_ID: &str = "score_group";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub max_points: u32,
    /// Parent problem, when the question is a subproblem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoSpec {
    pub id: String,
    pub cardinality: usize,
    /// School subject for grade covariates (grade 1 is best).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

/// Declarative description of a test: its questions, the student covariates
/// collected alongside, and optionally which skills each question needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestBlueprint {
    #[serde(default)]
    pub name: String,
    /// Declared test maximum; must equal the sum of `max_points`.
    pub max_score: u32,
    pub questions: Vec<QuestionSpec>,
    #[serde(default)]
    pub info_vars: Vec<InfoSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_map: Option<BTreeMap<String, Vec<String>>>,
}

impl TestBlueprint {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for q in &self.questions {
            if q.max_points < 1 {
                return Err(Error::Blueprint(format!("question `{}` has max_points 0", q.id)));
            }
            if !ids.insert(q.id.as_str()) {
                return Err(Error::Blueprint(format!("duplicate id `{}`", q.id)));
            }
        }
        if self.questions.is_empty() {
            return Err(Error::Blueprint("no questions".into()));
        }
        for v in &self.info_vars {
            if v.cardinality < 2 {
                return Err(Error::Blueprint(format!("info variable `{}` needs ≥ 2 states", v.id)));
            }
            if let Some(l) = &v.labels {
                if l.len() != v.cardinality {
                    return Err(Error::Blueprint(format!("`{}` label count mismatch", v.id)));
                }
            }
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Blueprint(format!("duplicate id `{}`", v.id)));
            }
        }
        let total: u32 = self.questions.iter().map(|q| q.max_points).sum();
        if total != self.max_score {
            return Err(Error::Blueprint(format!(
                "question maxima sum to {total}, declared maximum is {}",
                self.max_score
            )));
        }
        if let Some(map) = &self.expert_map {
            let known: HashSet<&str> = self.questions.iter().map(|q| q.id.as_str()).collect();
            let mut covered = HashSet::new();
            for (skill, qs) in map {
                if qs.is_empty() {
                    return Err(Error::Blueprint(format!("skill `{skill}` maps to no question")));
                }
                if ids.contains(skill.as_str()) {
                    return Err(Error::Blueprint(format!("skill id `{skill}` clashes")));
                }
                for q in qs {
                    if !known.contains(q.as_str()) {
                        return Err(Error::Blueprint(format!(
                            "skill `{skill}` maps to unknown question `{q}`"
                        )));
                    }
                    covered.insert(q.as_str());
                }
            }
            if let Some(q) = self.questions.iter().find(|q| !covered.contains(q.id.as_str())) {
                return Err(Error::Blueprint(format!("question `{}` has no expert skill", q.id)));
            }
        }
        Ok(())
    }

    pub fn question_ids(&self) -> Vec<&str> {
        self.questions.iter().map(|q| q.id.as_str()).collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let bp: TestBlueprint = serde_json::from_str(s)?;
        bp.validate()?;
        Ok(bp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("blueprint serializes")
    }

    /// A 53-question, 120-point blueprint shaped like a 29-problem function
    /// test: problem 1 split into eight 1-point parts, seventeen problems
    /// split into two 2-point parts, eleven whole 4-point problems. Carries
    /// gender, age band and three averaged subject grades, plus a synthetic
    /// seven-skill expert map. Question content is placeholder text.
    pub fn reference() -> Self {
        let mut questions = Vec::new();
        let mut problems: Vec<Vec<String>> = Vec::new();
        let mut ids = Vec::new();
        for part in 0..8 {
            ids.push(push_q(&mut questions, 1, &format!("{}", (b'a' + part) as char), 1));
        }
        problems.push(std::mem::take(&mut ids));
        for p in 2..=29u32 {
            if p <= 18 {
                ids.push(push_q(&mut questions, p, "a", 2));
                ids.push(push_q(&mut questions, p, "b", 2));
            } else {
                ids.push(push_q(&mut questions, p, "", 4));
            }
            problems.push(std::mem::take(&mut ids));
        }
        // Seven skills over the 29 problems: graphs, values, roots, shape,
        // trigonometric, exponential/logarithmic, and general reasoning.
        let groups: [&[usize]; 7] = [
            &[1, 2, 3, 4, 5],
            &[6, 7, 8, 9],
            &[10, 11, 12, 13],
            &[14, 15, 16, 17],
            &[18, 19, 20, 21],
            &[22, 23, 24, 25],
            &[26, 27, 28, 29, 2, 10],
        ];
        let expert_map = groups
            .iter()
            .enumerate()
            .map(|(k, probs)| {
                let qs = probs.iter().flat_map(|&p| problems[p - 1].clone()).collect();
                (format!("S{}", k + 1), qs)
            })
            .collect();
        let grade = |id: &str, subject: &str| InfoSpec {
            id: id.into(),
            cardinality: 5,
            subject: Some(subject.into()),
            labels: None,
        };
        TestBlueprint {
            name: "reference (synthetic content)".into(),
            max_score: 120,
            questions,
            info_vars: vec![
                InfoSpec {
                    id: "gender".into(),
                    cardinality: 2,
                    subject: None,
                    labels: Some(vec!["female".into(), "male".into()]),
                },
                InfoSpec {
                    id: "age".into(),
                    cardinality: 3,
                    subject: None,
                    labels: Some(vec!["younger".into(), "typical".into(), "older".into()]),
                },
                grade("grade_math", "mathematics"),
                grade("grade_physics", "physics"),
                grade("grade_chemistry", "chemistry"),
            ],
            expert_map: Some(expert_map),
        }
    }
}

fn push_q(out: &mut Vec<QuestionSpec>, problem: u32, part: &str, max_points: u32) -> String {
    let id = format!("P{problem:02}{part}");
    out.push(QuestionSpec {
        id: id.clone(),
        max_points,
        problem: Some(format!("P{problem:02}")),
        text: None,
    });
    id
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    B2,
    B2Plus,
    B3,
    B3Plus,
    B3o,
    B3oPlus,
    B2e,
    N2,
    N2Plus,
    N3,
    N3Plus,
    N3o,
    N3oPlus,
    N2e,
}

impl ModelId {
    pub const ALL: [ModelId; 14] = [
        ModelId::B2,
        ModelId::B2Plus,
        ModelId::B3,
        ModelId::B3Plus,
        ModelId::B3o,
        ModelId::B3oPlus,
        ModelId::B2e,
        ModelId::N2,
        ModelId::N2Plus,
        ModelId::N3,
        ModelId::N3Plus,
        ModelId::N3o,
        ModelId::N3oPlus,
        ModelId::N2e,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::B2 => "b2",
            ModelId::B2Plus => "b2+",
            ModelId::B3 => "b3",
            ModelId::B3Plus => "b3+",
            ModelId::B3o => "b3o",
            ModelId::B3oPlus => "b3o+",
            ModelId::B2e => "b2e",
            ModelId::N2 => "n2",
            ModelId::N2Plus => "n2+",
            ModelId::N3 => "n3",
            ModelId::N3Plus => "n3+",
            ModelId::N3o => "n3o",
            ModelId::N3oPlus => "n3o+",
            ModelId::N2e => "n2e",
        }
    }

    /// Descriptive model name.
    pub fn long_name(self) -> &'static str {
        match self {
            ModelId::B2 => "tf_simple",
            ModelId::B2Plus => "tf_plus",
            ModelId::B3 => "tf3s_simple",
            ModelId::B3Plus => "tf3s_plus",
            ModelId::B3o => "tf3s_obssimple",
            ModelId::B3oPlus => "tf3s_obsplus",
            ModelId::B2e => "tf_expert",
            ModelId::N2 => "points_simple",
            ModelId::N2Plus => "points_plus",
            ModelId::N3 => "points3s_simple",
            ModelId::N3Plus => "points3s_plus",
            ModelId::N3o => "points3s_obssimple",
            ModelId::N3oPlus => "points3s_obsplus",
            ModelId::N2e => "points_expert",
        }
    }

    pub fn spec(self) -> ModelSpec {
        let s = self.as_str();
        let scale = if s.starts_with('b') { Scale::Boolean } else { Scale::Points };
        let expert = s.ends_with('e');
        ModelSpec {
            id: self,
            skill_count: if expert { 7 } else { 1 },
            skill_states: if s.as_bytes()[1] == b'3' { 3 } else { 2 },
            scale,
            additional_info: s.ends_with('+'),
            observed_score: s.contains('o'),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::Spec(format!("unknown model id `{s}`")))
    }
}

impl Serialize for ModelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: ModelId,
    pub skill_count: usize,
    pub skill_states: usize,
    pub scale: Scale,
    pub additional_info: bool,
    pub observed_score: bool,
}

impl ModelSpec {
    /// Rejects field combinations that do not match the canonical row for
    /// `id`.
    pub fn validate(&self) -> Result<()> {
        if *self != self.id.spec() {
            return Err(Error::Spec(format!(
                "fields do not match the definition of `{}`",
                self.id
            )));
        }
        Ok(())
    }
}

/// The fourteen canonical specs, Boolean models first.
pub fn enumerate_specs() -> Vec<ModelSpec> {
    ModelId::ALL.iter().map(|m| m.spec()).collect()
}

/// Builds the structure for `spec` over `bp` with uniform CPTs.
///
/// Variables are ordered skills, questions (blueprint order), then info
/// variables. Info variables are children of the single skill node.
pub fn build_model(spec: &ModelSpec, bp: &TestBlueprint) -> Result<Network> {
    spec.validate()?;
    bp.validate()?;

    let mut vars: Vec<(Variable, Vec<String>)> = Vec::new();
    let skill_ids: Vec<String> = if spec.skill_count > 1 {
        let map = bp.expert_map.as_ref().ok_or_else(|| {
            Error::Spec(format!("`{}` needs an expert map in the blueprint", spec.id))
        })?;
        if map.len() != spec.skill_count {
            return Err(Error::Spec(format!(
                "`{}` expects {} skills, the expert map has {}",
                spec.id,
                spec.skill_count,
                map.len()
            )));
        }
        map.keys().cloned().collect()
    } else if spec.observed_score {
        vec![SCORE_GROUP_ID.to_string()]
    } else {
        vec!["S1".to_string()]
    };

    for id in &skill_ids {
        let v = if spec.observed_score {
            Variable::new(id.clone(), Role::Scoregroup, 3)
                .with_labels(SCORE_GROUP_LABELS.iter().map(|s| s.to_string()).collect())
        } else {
            Variable::new(id.clone(), Role::Skill, spec.skill_states)
        };
        vars.push((v, vec![]));
    }

    for q in &bp.questions {
        let top = match spec.scale {
            Scale::Boolean => 1,
            Scale::Points => q.max_points,
        };
        let v = Variable::new(q.id.clone(), Role::Question, top as usize + 1)
            .with_labels((0..=top).map(|p| p.to_string()).collect())
            .with_scale(spec.scale);
        let parents = match &bp.expert_map {
            Some(map) if spec.skill_count > 1 => skill_ids
                .iter()
                .filter(|s| map[*s].contains(&q.id))
                .cloned()
                .collect(),
            _ => skill_ids.clone(),
        };
        vars.push((v, parents));
    }

    if spec.additional_info {
        for info in &bp.info_vars {
            let mut v = Variable::new(info.id.clone(), Role::Info, info.cardinality);
            if let Some(labels) = &info.labels {
                v = v.with_labels(labels.clone());
            }
            vars.push((v, vec![skill_ids[0].clone()]));
        }
    }

    let net = Network::uniform(vars)?;
    net.ensure_valid()?;
    Ok(net)
}
