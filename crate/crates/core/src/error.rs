use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported base size k = {0} (expected 1..=16)")]
    BaseSize(usize),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u16, u16),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid gadget input: {0}")]
    Gadget(String),
    #[error("duplicate tweak for gate {0}")]
    DuplicateTweak(u64),
    #[error("quantization error: {0}")]
    Quantization(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("invalid circuit: {0}")]
    Circuit(String),
    #[error("authenticity check failed: {0}")]
    Authenticity(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
