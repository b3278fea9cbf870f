use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("inpainting mask leaves no boundary pixels")]
    NoBoundary,

    #[error("bitstream has bad magic {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported bitstream version {0}")]
    UnsupportedVersion(u16),

    #[error("CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("bitstream truncated")]
    Truncated,

    #[error("unexpected payload kind: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("symbol {symbol} outside alphabet [{lo}, {hi}] of channel {channel}")]
    SymbolOutOfAlphabet {
        channel: usize,
        symbol: i64,
        lo: i64,
        hi: i64,
    },

    #[error("alphabet of {0} symbols exceeds the coder limit")]
    AlphabetTooLarge(usize),

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("out-of-order update: map is at stage {current}, update targets stage {update}")]
    OutOfOrderUpdate { current: u32, update: u32 },

    #[error("client stage {client} is ahead of server stage {server}")]
    FutureStage { client: u32, server: u32 },

    #[error("stage database: {0}")]
    StageDb(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("camera is inside solid geometry at {0:?}")]
    CameraInSolid([f64; 3]),

    #[error("image error: {0}")]
    Image(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Transport failures a caller may retry; everything else is a hard failure.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Io(e) => matches!(
                e.kind(),
                std::io::ErrorKind::ConnectionRefused
                    | std::io::ErrorKind::ConnectionReset
                    | std::io::ErrorKind::ConnectionAborted
                    | std::io::ErrorKind::TimedOut
                    | std::io::ErrorKind::Interrupted
                    | std::io::ErrorKind::WouldBlock
                    | std::io::ErrorKind::UnexpectedEof
                    | std::io::ErrorKind::BrokenPipe
            ),
            _ => false,
        }
    }
}
