use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mode sizes differ: {left:?} vs {right:?}")]
    ModeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("dense size {size} exceeds the cap of {cap} elements")]
    DenseCap { size: usize, cap: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid Butcher tableau: {0}")]
    Tableau(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("non-finite values after {stage}")]
    NonFinite { stage: String },

    #[error("factor matrix has zero Frobenius norm")]
    ZeroFactor,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_modes(left: &[usize], right: &[usize]) -> Result<()> {
    if left != right {
        return Err(Error::ModeMismatch { left: left.to_vec(), right: right.to_vec() });
    }
    Ok(())
}
