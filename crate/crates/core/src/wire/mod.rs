//! Telemetry frame codec.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SHM1"
//! 4       1     version (0x01)
//! 5       2     node_id
//! 7       4     counter
//! 11      1     channel_count (1..=8)
//! 12      8n    resistances, f64 each
//! 12+8n   4     CRC-32 (IEEE, reflected) over bytes 0..12+8n
//! ```
//!
//! The decoder checks magic and version, then the CRC, and only then trusts
//! the channel count. A corrupted count therefore surfaces as `CrcMismatch`.

pub mod framing;
mod link;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use link::{link_send, LinkConfig, LinkOutcome, VirtualLink};

pub const MAGIC: [u8; 4] = *b"SHM1";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 12;
pub const CRC_LEN: usize = 4;
pub const MAX_CHANNELS: usize = 8;
/// Smallest valid frame: one channel.
pub const MIN_FRAME_LEN: usize = HEADER_LEN + 8 + CRC_LEN;
pub const MAX_FRAME_LEN: usize = HEADER_LEN + 8 * MAX_CHANNELS + CRC_LEN;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("bad magic {0:02X?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated frame: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("crc mismatch: frame says {stored:08X}, computed {computed:08X}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("invalid link configuration: {0}")]
    InvalidLink(String),
}

/// One node notification: its counter and per-channel resistances in ohm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub node_id: u16,
    pub counter: u32,
    pub resistances: Vec<f64>,
}

impl TelemetryFrame {
    pub fn new(node_id: u16, counter: u32, resistances: Vec<f64>) -> Result<Self, WireError> {
        let frame = Self {
            node_id,
            counter,
            resistances,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn channel_count(&self) -> u8 {
        self.resistances.len() as u8
    }

    pub fn validate(&self) -> Result<(), WireError> {
        let n = self.resistances.len();
        if n == 0 || n > MAX_CHANNELS {
            return Err(WireError::InvalidFrame(format!("channel count {n}")));
        }
        if let Some(r) = self.resistances.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(WireError::InvalidFrame(format!("resistance {r}")));
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        encoded_len(self.resistances.len())
    }
}

pub const fn encoded_len(channels: usize) -> usize {
    HEADER_LEN + 8 * channels + CRC_LEN
}

pub fn encode(frame: &TelemetryFrame) -> Result<Vec<u8>, WireError> {
    frame.validate()?;
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&frame.node_id.to_le_bytes());
    out.extend_from_slice(&frame.counter.to_le_bytes());
    out.push(frame.channel_count());
    for r in &frame.resistances {
        out.extend_from_slice(&r.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Total over arbitrary input: never panics, never allocates more than the
/// eight-channel maximum.
pub fn decode(bytes: &[u8]) -> Result<TelemetryFrame, WireError> {
    if bytes.len() < MIN_FRAME_LEN {
        return Err(WireError::Truncated {
            needed: MIN_FRAME_LEN,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(WireError::UnsupportedVersion(bytes[4]));
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(WireError::CrcMismatch { stored, computed });
    }

    let node_id = u16::from_le_bytes([bytes[5], bytes[6]]);
    let counter = u32::from_le_bytes(bytes[7..11].try_into().expect("length checked"));
    let count = bytes[11] as usize;
    if count == 0 || count > MAX_CHANNELS {
        return Err(WireError::InvalidFrame(format!("channel count {count}")));
    }
    let needed = encoded_len(count);
    if bytes.len() < needed {
        return Err(WireError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(WireError::InvalidFrame(format!(
            "{} trailing bytes",
            bytes.len() - needed
        )));
    }
    let resistances = body[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    TelemetryFrame::new(node_id, counter, resistances)
}
