use thiserror::Error;

/// Unified error type for format construction, block quantization, packing,
/// container I/O and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid format: {0}")]
    InvalidFormat(String),
    #[error("invalid block shape: {0}")]
    InvalidBlockShape(String),
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error("invalid tensor shape: {0}")]
    InvalidShape(String),
    #[error("value {0} is NaN or infinite and the format reserves no encodings for specials")]
    SpecialsNotRepresentable(f32),
    #[error("format mismatch: {0}")]
    FormatMismatch(String),
    #[error("block is empty")]
    EmptyBlock,
    #[error("malformed block: {0}")]
    MalformedBlock(String),
    #[error("block shape does not tile the tensor: {0}")]
    BlockShapeMismatch(String),
    #[error("unsupported code width {0} (packing supports 1..=15 bits)")]
    UnsupportedWidth(u8),
    #[error("code count {0} is not a multiple of 8")]
    LengthNotMultipleOf8(usize),
    #[error("row count {0} is not a multiple of 8")]
    RowsNotMultipleOf8(usize),
    #[error("code {code:#x} at index {index} does not fit in {width} bits")]
    CodeOutOfRange { index: usize, code: u32, width: u8 },
    #[error("segment sizes inconsistent: {0}")]
    SizeMismatch(String),
    #[error("shard not aligned to packed row groups: {0}")]
    UnalignedShard(String),
    #[error("not an EXMY container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("payload checksum mismatch for tensor '{0}'")]
    ChecksumMismatch(String),
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("no tensor named '{0}' in container")]
    TensorNotFound(String),
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("no exponent field width satisfies the flush budget")]
    BudgetUnsatisfiable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short name of the error kind, used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidFormat(_) => "InvalidFormat",
            Error::InvalidBlockShape(_) => "InvalidBlockShape",
            Error::InvalidScheme(_) => "InvalidScheme",
            Error::InvalidShape(_) => "InvalidShape",
            Error::SpecialsNotRepresentable(_) => "SpecialsNotRepresentable",
            Error::FormatMismatch(_) => "FormatMismatch",
            Error::EmptyBlock => "EmptyBlock",
            Error::MalformedBlock(_) => "MalformedBlock",
            Error::BlockShapeMismatch(_) => "BlockShapeMismatch",
            Error::UnsupportedWidth(_) => "UnsupportedWidth",
            Error::LengthNotMultipleOf8(_) => "LengthNotMultipleOf8",
            Error::RowsNotMultipleOf8(_) => "RowsNotMultipleOf8",
            Error::CodeOutOfRange { .. } => "CodeOutOfRange",
            Error::SizeMismatch(_) => "SizeMismatch",
            Error::UnalignedShard(_) => "UnalignedShard",
            Error::BadMagic => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::ChecksumMismatch(_) => "ChecksumMismatch",
            Error::CorruptContainer(_) => "CorruptContainer",
            Error::TensorNotFound(_) => "TensorNotFound",
            Error::EmptyHistogram => "EmptyHistogram",
            Error::BudgetUnsatisfiable => "BudgetUnsatisfiable",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
