use crate::network::Violation;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("state {state} out of range for `{variable}` (cardinality {cardinality})")]
    StateOutOfRange {
        variable: String,
        state: usize,
        cardinality: usize,
    },

    #[error("variable `{0}` is assigned twice in the evidence")]
    DuplicateEvidence(String),

    /// The evidence has probability zero under the model.
    #[error("impossible evidence: the model assigns it probability zero")]
    ImpossibleEvidence,

    #[error("invalid network: {}", format_violations(.0))]
    InvalidNetwork(Vec<Violation>),

    #[error("inference: {0}")]
    Inference(String),

    #[error("invalid blueprint: {0}")]
    Blueprint(String),

    #[error("model spec: {0}")]
    Spec(String),

    #[error("data: {0}")]
    Data(String),

    #[error("learning: {0}")]
    Learning(String),

    #[error("question `{0}` was already answered")]
    AlreadyAnswered(String),

    #[error("`{0}` is not an open question in this session")]
    NotRemaining(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
