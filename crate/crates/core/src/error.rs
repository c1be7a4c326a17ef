use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Reason codes reported by the frame decoder and the transfer endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolReason {
    BadMagic,
    UnsupportedVersion,
    Truncated,
    LengthTooLarge,
    CrcMismatch,
    BadMetadata,
    BadPayload,
    TrailingBytes,
    Nack,
}

impl ProtocolReason {
    pub fn code(self) -> u8 {
        match self {
            ProtocolReason::BadMagic => 1,
            ProtocolReason::UnsupportedVersion => 2,
            ProtocolReason::Truncated => 3,
            ProtocolReason::LengthTooLarge => 4,
            ProtocolReason::CrcMismatch => 5,
            ProtocolReason::BadMetadata => 6,
            ProtocolReason::BadPayload => 7,
            ProtocolReason::TrailingBytes => 8,
            ProtocolReason::Nack => 9,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => ProtocolReason::BadMagic,
            2 => ProtocolReason::UnsupportedVersion,
            3 => ProtocolReason::Truncated,
            4 => ProtocolReason::LengthTooLarge,
            5 => ProtocolReason::CrcMismatch,
            6 => ProtocolReason::BadMetadata,
            7 => ProtocolReason::BadPayload,
            8 => ProtocolReason::TrailingBytes,
            9 => ProtocolReason::Nack,
            _ => return None,
        })
    }
}

impl std::fmt::Display for ProtocolReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProtocolReason::BadMagic => "bad magic",
            ProtocolReason::UnsupportedVersion => "unsupported version",
            ProtocolReason::Truncated => "truncated",
            ProtocolReason::LengthTooLarge => "declared length exceeds allocation cap",
            ProtocolReason::CrcMismatch => "crc mismatch",
            ProtocolReason::BadMetadata => "bad metadata",
            ProtocolReason::BadPayload => "bad payload",
            ProtocolReason::TrailingBytes => "trailing bytes",
            ProtocolReason::Nack => "receiver rejected frame",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("decode error in block {block}: {reason}")]
    Decode { block: usize, reason: String },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("weight load error in tensor `{tensor}`: {reason}")]
    Load { tensor: String, reason: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("protocol error ({reason}): {detail}")]
    Protocol {
        reason: ProtocolReason,
        detail: String,
    },

    #[error("transfer failed after {attempts} attempt(s): {detail}")]
    Transfer { attempts: u32, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn protocol(reason: ProtocolReason, detail: impl Into<String>) -> Self {
        Error::Protocol {
            reason,
            detail: detail.into(),
        }
    }
}
