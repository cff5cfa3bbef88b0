use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("operation `{0}` has no operation-count rule and cannot appear in a counted forward pass")]
    Uncountable(&'static str),
    #[error("operation `{0}` needs concrete tensor data but the graph is symbolic")]
    Symbolic(&'static str),
    #[error("gradient requested for a non-scalar output of shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
