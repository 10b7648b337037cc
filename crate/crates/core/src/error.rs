use glyco_autograd::{OptimError, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("constraint error: cannot place {k} points at least {delta} slots apart in {t} slots")]
    Constraint { t: usize, k: usize, delta: usize },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("undefined baseline: sample has no observed points")]
    UndefinedBaseline,
    #[error("split error: {0}")]
    Split(String),
    #[error("line {line}: {detail}")]
    Csv { line: u64, detail: String },
    #[error("non-finite {component}: {value}")]
    NonFinite { component: &'static str, value: f64 },
    #[error("training diverged at epoch {epoch}: loss {loss} exceeded 10x initial {initial}; trace {trace:?}")]
    Diverged { epoch: usize, loss: f64, initial: f64, trace: Vec<f64> },
    #[error("persistence error: {0}")]
    Persist(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CoreError>,
    },
}

impl CoreError {
    pub fn in_stage(self, stage: &'static str) -> Self {
        CoreError::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
