//! Classical CAN 2.0A data frames on the wire.

mod crc;
mod frame;
mod stuffing;

pub use crc::{compute_crc15, CRC15_GENERATOR, CRC15_POLY};
pub use frame::{
    decode_frame, encode_frame, fingerprintable_region, BitInfo, BitStream, CanFrame, Field, Mid,
    MAX_DLC, MAX_MID, UNSTUFFED_OVERHEAD_BITS,
};
pub use stuffing::{apply_bit_stuffing, remove_bit_stuffing, STUFF_RUN};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("message id {0:#x} does not fit in 11 bits")]
    InvalidMid(u32),
    #[error("data length {0} exceeds 8 bytes")]
    InvalidDlc(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bit stream ended early")]
    Truncated,
    #[error("six equal consecutive bits at wire index {index}")]
    StuffViolation { index: usize },
    #[error("CRC mismatch: received {received:#06x}, computed {computed:#06x}")]
    CrcMismatch { received: u16, computed: u16 },
    #[error("fixed-form bit of {field:?} has the wrong level at wire index {index}")]
    Form { field: Field, index: usize },
    #[error("only standard data frames are supported ({0})")]
    Unsupported(&'static str),
    #[error("data length code {0} exceeds 8")]
    InvalidDlc(u8),
    #[error("{0} unexpected bits after end of frame")]
    TrailingBits(usize),
}
