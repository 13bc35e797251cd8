use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand widths disagree.
    WidthMismatch {
        left: u32,
        right: u32,
    },
    /// Unsupported bit width or other out-of-contract argument.
    InvalidArgument(String),
    /// A stream cycle index outside `1..=2^(n-1)`.
    CycleOutOfRange {
        cycle: u64,
        bits: u32,
    },
    /// `run_column` called after every column was consumed.
    ColumnsExhausted {
        cols: usize,
    },
    /// Vector or matrix dimensions do not chain.
    DimensionMismatch(String),
    /// Two series that must be the same length are not.
    LengthMismatch {
        left: usize,
        right: usize,
    },
    /// The exhaustive multiplier check found an operand pair over the bound.
    BoundViolation {
        bits: u32,
        x: i32,
        w: i32,
        error: f64,
        bound: f64,
    },
    /// The accelerated multiplier disagreed with the original one.
    FastMismatch {
        bits: u32,
        x: i32,
        w: i32,
    },
    /// Weight or vocabulary file could not be parsed.
    Format {
        line: usize,
        message: String,
    },
    /// Weight file carries an unsupported version.
    Version(String),
    /// A character that is not in the vocabulary.
    UnknownChar(char),
    EmptyCorpus,
    Io(String),
}

impl Error {
    /// True for errors that mean a verification property failed, as opposed
    /// to bad input or I/O.
    pub fn is_verification_failure(&self) -> bool {
        matches!(
            self,
            Error::BoundViolation { .. } | Error::FastMismatch { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::WidthMismatch { left, right } => {
                write!(f, "operand width mismatch: {left} bits vs {right} bits")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::CycleOutOfRange { cycle, bits } => write!(
                f,
                "stream cycle {cycle} out of range 1..={} for {bits}-bit operands",
                1u64 << (bits - 1)
            ),
            Error::ColumnsExhausted { cols } => {
                write!(f, "all {cols} matrix columns already consumed")
            }
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::BoundViolation {
                bits,
                x,
                w,
                error,
                bound,
            } => write!(
                f,
                "{bits}-bit multiplier error {error} exceeds bound {bound} at X={x}/{s}, W={w}/{s}",
                s = 1i64 << (bits - 1)
            ),
            Error::FastMismatch { bits, x, w } => write!(
                f,
                "{bits}-bit accelerated multiplier disagrees with original at numerators ({x}, {w})"
            ),
            Error::Format { line, message } => write!(f, "line {line}: {message}"),
            Error::Version(v) => write!(f, "unsupported weight file version `{v}`"),
            Error::UnknownChar(c) => write!(f, "character {c:?} is not in the vocabulary"),
            Error::EmptyCorpus => write!(f, "corpus is empty"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}
