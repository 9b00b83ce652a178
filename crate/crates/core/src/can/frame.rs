use std::fmt;

use serde::{Deserialize, Serialize};

use super::crc::{compute_crc15, push_bits};
use super::stuffing::RunTracker;
use super::{DecodeError, FrameError};

pub const MAX_MID: u16 = 0x7FF;
pub const MAX_DLC: usize = 8;

/// Unstuffed length of a frame with no data:
/// SOF, ID(11), RTR, IDE, r0, DLC(4), CRC(15), CRC delimiter, ACK slot,
/// ACK delimiter, EOF(7).
pub const UNSTUFFED_OVERHEAD_BITS: usize = 1 + 11 + 1 + 1 + 1 + 4 + 15 + 1 + 1 + 1 + 7;

/// 11-bit standard message identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u16")]
pub struct Mid(u16);

impl Mid {
    pub fn new(raw: u32) -> Result<Self, FrameError> {
        if raw > u32::from(MAX_MID) {
            return Err(FrameError::InvalidMid(raw));
        }
        Ok(Mid(raw as u16))
    }

    pub fn value(self) -> u16 {
        self.0
    }
}

impl TryFrom<u32> for Mid {
    type Error = FrameError;
    fn try_from(raw: u32) -> Result<Self, Self::Error> {
        Mid::new(raw)
    }
}

impl From<Mid> for u16 {
    fn from(mid: Mid) -> u16 {
        mid.0
    }
}

impl fmt::Display for Mid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#05x}", self.0)
    }
}

/// A standard (11-bit identifier) data frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanFrame {
    mid: Mid,
    payload: Vec<u8>,
}

impl CanFrame {
    pub fn new(mid: u32, payload: &[u8]) -> Result<Self, FrameError> {
        let mid = Mid::new(mid)?;
        if payload.len() > MAX_DLC {
            return Err(FrameError::InvalidDlc(payload.len()));
        }
        Ok(CanFrame {
            mid,
            payload: payload.to_vec(),
        })
    }

    pub fn mid(&self) -> Mid {
        self.mid
    }

    pub fn dlc(&self) -> u8 {
        self.payload.len() as u8
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
}

/// Frame field a wire bit belongs to.
///
/// `Arbitration` covers the 11 identifier bits only; RTR, IDE and r0 are
/// tagged as `Control` together with the DLC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    Sof,
    Arbitration,
    Control,
    Data,
    Crc,
    CrcDelimiter,
    AckSlot,
    AckDelimiter,
    Eof,
}

impl Field {
    pub fn tag(self) -> &'static str {
        match self {
            Field::Sof => "sof",
            Field::Arbitration => "arbitration",
            Field::Control => "control",
            Field::Data => "data",
            Field::Crc => "crc",
            Field::CrcDelimiter => "crc_delimiter",
            Field::AckSlot => "ack_slot",
            Field::AckDelimiter => "ack_delimiter",
            Field::Eof => "eof",
        }
    }
}

/// Per-bit annotation. A stuff bit belongs to the field of the bit it follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitInfo {
    pub field: Field,
    pub stuff: bool,
}

impl BitInfo {
    /// Tag used in trace exports, e.g. `data` or `stuff:control`.
    pub fn tag(&self) -> String {
        if self.stuff {
            format!("stuff:{}", self.field.tag())
        } else {
            self.field.tag().to_owned()
        }
    }
}

/// On-wire bits of one frame. `false` is dominant (logical 0), `true` recessive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    pub bits: Vec<bool>,
    pub field_map: Vec<BitInfo>,
}

impl BitStream {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn stuff_count(&self) -> usize {
        self.field_map.iter().filter(|info| info.stuff).count()
    }
}

pub fn encode_frame(frame: &CanFrame) -> BitStream {
    let mut raw = Vec::with_capacity(UNSTUFFED_OVERHEAD_BITS + 64);
    let mut fields = Vec::with_capacity(raw.capacity());
    let mut put = |raw: &mut Vec<bool>, value: u32, width: usize, field: Field| {
        push_bits(raw, value, width);
        fields.extend(std::iter::repeat_n(field, width));
    };

    put(&mut raw, 0, 1, Field::Sof);
    put(&mut raw, u32::from(frame.mid.value()), 11, Field::Arbitration);
    // RTR, IDE, r0 all dominant for a standard data frame.
    put(&mut raw, 0, 3, Field::Control);
    put(&mut raw, u32::from(frame.dlc()), 4, Field::Control);
    for &byte in &frame.payload {
        put(&mut raw, u32::from(byte), 8, Field::Data);
    }
    let crc = compute_crc15(&raw);
    put(&mut raw, u32::from(crc), 15, Field::Crc);

    let mut bits = Vec::with_capacity(raw.len() + raw.len() / 4 + 11);
    let mut field_map = Vec::with_capacity(bits.capacity());
    let mut tracker = RunTracker::default();
    for (&bit, &field) in raw.iter().zip(&fields) {
        bits.push(bit);
        field_map.push(BitInfo { field, stuff: false });
        if tracker.push(bit) {
            bits.push(!bit);
            field_map.push(BitInfo { field, stuff: true });
            tracker.push(!bit);
        }
    }

    // Receivers would pull the ACK slot dominant; no receiver is modeled.
    for (field, width) in [
        (Field::CrcDelimiter, 1),
        (Field::AckSlot, 1),
        (Field::AckDelimiter, 1),
        (Field::Eof, 7),
    ] {
        for _ in 0..width {
            bits.push(true);
            field_map.push(BitInfo { field, stuff: false });
        }
    }

    BitStream { bits, field_map }
}

struct WireReader<'a> {
    bits: &'a [bool],
    pos: usize,
    tracker: RunTracker,
    consumed: Vec<bool>,
}

impl<'a> WireReader<'a> {
    fn new(bits: &'a [bool]) -> Self {
        WireReader {
            bits,
            pos: 0,
            tracker: RunTracker::default(),
            consumed: Vec::with_capacity(128),
        }
    }

    fn next_stuffed(&mut self) -> Result<bool, DecodeError> {
        let bit = *self.bits.get(self.pos).ok_or(DecodeError::Truncated)?;
        self.pos += 1;
        self.consumed.push(bit);
        if self.tracker.push(bit) {
            let stuff = *self.bits.get(self.pos).ok_or(DecodeError::Truncated)?;
            if Some(stuff) == self.tracker.last() {
                return Err(DecodeError::StuffViolation { index: self.pos });
            }
            self.tracker.push(stuff);
            self.pos += 1;
        }
        Ok(bit)
    }

    fn read_stuffed(&mut self, width: usize) -> Result<u32, DecodeError> {
        let mut value = 0u32;
        for _ in 0..width {
            value = (value << 1) | u32::from(self.next_stuffed()?);
        }
        Ok(value)
    }

    fn read_plain(&mut self) -> Result<(bool, usize), DecodeError> {
        let bit = *self.bits.get(self.pos).ok_or(DecodeError::Truncated)?;
        self.pos += 1;
        Ok((bit, self.pos - 1))
    }

    fn expect_recessive(&mut self, field: Field) -> Result<(), DecodeError> {
        let (bit, index) = self.read_plain()?;
        if !bit {
            return Err(DecodeError::Form { field, index });
        }
        Ok(())
    }
}

/// Decodes a stuffed wire bit sequence back into a frame, checking stuffing,
/// fixed-form bits and the CRC. The stream's `field_map` is not consulted.
pub fn decode_frame(stream: &BitStream) -> Result<CanFrame, DecodeError> {
    let mut rd = WireReader::new(&stream.bits);
    if rd.read_stuffed(1)? != 0 {
        return Err(DecodeError::Form {
            field: Field::Sof,
            index: 0,
        });
    }
    let mid = rd.read_stuffed(11)?;
    if rd.read_stuffed(1)? != 0 {
        return Err(DecodeError::Unsupported("remote frame"));
    }
    if rd.read_stuffed(1)? != 0 {
        return Err(DecodeError::Unsupported("extended identifier"));
    }
    // r0 is transmitted dominant but receivers accept either level.
    rd.read_stuffed(1)?;
    let dlc = rd.read_stuffed(4)? as u8;
    if usize::from(dlc) > MAX_DLC {
        return Err(DecodeError::InvalidDlc(dlc));
    }
    let mut payload = Vec::with_capacity(usize::from(dlc));
    for _ in 0..dlc {
        payload.push(rd.read_stuffed(8)? as u8);
    }
    let computed = compute_crc15(&rd.consumed);
    let received = rd.read_stuffed(15)? as u16;
    if received != computed {
        return Err(DecodeError::CrcMismatch { received, computed });
    }
    rd.expect_recessive(Field::CrcDelimiter)?;
    rd.read_plain()?;
    rd.expect_recessive(Field::AckDelimiter)?;
    for _ in 0..7 {
        rd.expect_recessive(Field::Eof)?;
    }
    if rd.pos != stream.bits.len() {
        return Err(DecodeError::TrailingBits(stream.bits.len() - rd.pos));
    }
    Ok(CanFrame {
        mid: Mid(mid as u16),
        payload,
    })
}

/// Wire indices whose samples identify the transmitter: everything except
/// the identifier (where several nodes may drive the bus) and the ACK slot and
/// delimiter (driven by receivers). Stuff bits follow the field they belong to.
pub fn fingerprintable_region(stream: &BitStream) -> Vec<usize> {
    stream
        .field_map
        .iter()
        .enumerate()
        .filter(|(_, info)| {
            !matches!(
                info.field,
                Field::Arbitration | Field::AckSlot | Field::AckDelimiter
            )
        })
        .map(|(i, _)| i)
        .collect()
}
