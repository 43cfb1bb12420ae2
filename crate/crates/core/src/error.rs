use std::fmt;

/// Failure kinds shared by every module. Each variant maps to a stable
/// kebab-case code (see [`Error::code`]) used by the CLI and tests.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    IncompatibleShapes(String),
    KernelTooLarge(String),
    EmptyTensor,
    InvalidShape(String),
    NonFiniteInput,
    InvalidQuantSpec(String),
    ZeroVarianceWeights,
    IntegrationFailure(String),
    InvalidConfig(String),
    EpochOutOfRange { epoch: usize, total: usize },
    StepOutOfRange { step: usize, total: usize },
    StaleCache(&'static str),
    DegenerateBatch,
    BadLabel { label: usize, classes: usize },
    NonFiniteGradient(String),
    NotBinarized(f32),
    LengthMismatch { left: usize, right: usize },
    ZeroBaseline,
    BadIdxMagic(u32),
    TruncatedFile(String),
    LabelCountMismatch { images: usize, labels: usize },
    BadCheckpointMagic,
    BadCheckpoint(String),
    CheckpointMismatch(String),
    Diverged(String),
    Io(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::IncompatibleShapes(_) => "incompatible-shapes",
            Error::KernelTooLarge(_) => "kernel-too-large",
            Error::EmptyTensor => "empty-tensor",
            Error::InvalidShape(_) => "invalid-shape",
            Error::NonFiniteInput => "non-finite-input",
            Error::InvalidQuantSpec(_) => "invalid-quant-spec",
            Error::ZeroVarianceWeights => "zero-variance-weights",
            Error::IntegrationFailure(_) => "integration-failure",
            Error::InvalidConfig(_) => "invalid-config",
            Error::EpochOutOfRange { .. } => "epoch-out-of-range",
            Error::StepOutOfRange { .. } => "step-out-of-range",
            Error::StaleCache(_) => "stale-cache",
            Error::DegenerateBatch => "degenerate-batch",
            Error::BadLabel { .. } => "bad-label",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::NotBinarized(_) => "not-binarized",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::ZeroBaseline => "zero-baseline",
            Error::BadIdxMagic(_) => "bad-idx-magic",
            Error::TruncatedFile(_) => "truncated-file",
            Error::LabelCountMismatch { .. } => "label-count-mismatch",
            Error::BadCheckpointMagic => "bad-checkpoint-magic",
            Error::BadCheckpoint(_) => "bad-checkpoint",
            Error::CheckpointMismatch(_) => "checkpoint-mismatch",
            Error::Diverged(_) => "diverged",
            Error::Io(_) => "io-error",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let code = self.code();
        match self {
            Error::IncompatibleShapes(m)
            | Error::KernelTooLarge(m)
            | Error::InvalidShape(m)
            | Error::InvalidQuantSpec(m)
            | Error::IntegrationFailure(m)
            | Error::InvalidConfig(m)
            | Error::NonFiniteGradient(m)
            | Error::TruncatedFile(m)
            | Error::BadCheckpoint(m)
            | Error::CheckpointMismatch(m)
            | Error::Diverged(m)
            | Error::Io(m) => write!(f, "{code}: {m}"),
            Error::StaleCache(layer) => write!(f, "{code}: no forward cache for {layer}"),
            Error::EpochOutOfRange { epoch, total } => {
                write!(f, "{code}: epoch {epoch} not in [0, {total})")
            }
            Error::StepOutOfRange { step, total } => {
                write!(f, "{code}: step {step} exceeds {total}")
            }
            Error::BadLabel { label, classes } => {
                write!(f, "{code}: label {label} not in [0, {classes})")
            }
            Error::NotBinarized(v) => write!(f, "{code}: value {v} is not ±1"),
            Error::LengthMismatch { left, right } => write!(f, "{code}: {left} vs {right}"),
            Error::BadIdxMagic(m) => write!(f, "{code}: 0x{m:08x}"),
            Error::LabelCountMismatch { images, labels } => {
                write!(f, "{code}: {images} images vs {labels} labels")
            }
            Error::EmptyTensor
            | Error::NonFiniteInput
            | Error::ZeroVarianceWeights
            | Error::DegenerateBatch
            | Error::ZeroBaseline
            | Error::BadCheckpointMagic => f.write_str(code),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile(e.to_string())
        } else {
            Error::Io(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
