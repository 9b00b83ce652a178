//! Bit stuffing: after five consecutive equal bits an opposite bit is inserted.
//! Stuff bits count towards the next run.

use super::DecodeError;

/// Number of equal bits that triggers a stuff bit.
pub const STUFF_RUN: usize = 5;

/// Tracks the current run length of equal bits on the wire.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RunTracker {
    last: Option<bool>,
    run: usize,
}

impl RunTracker {
    /// Records a wire bit; returns true when the next wire bit must be a stuff bit.
    pub(crate) fn push(&mut self, bit: bool) -> bool {
        if self.last == Some(bit) {
            self.run += 1;
        } else {
            self.last = Some(bit);
            self.run = 1;
        }
        self.run == STUFF_RUN
    }

    pub(crate) fn last(&self) -> Option<bool> {
        self.last
    }
}

pub fn apply_bit_stuffing(raw: &[bool]) -> Vec<bool> {
    let mut out = Vec::with_capacity(raw.len() + raw.len() / 4 + 1);
    let mut tracker = RunTracker::default();
    for &bit in raw {
        out.push(bit);
        if tracker.push(bit) {
            let stuff = !bit;
            out.push(stuff);
            tracker.push(stuff);
        }
    }
    out
}

/// Inverse of [`apply_bit_stuffing`].
///
/// Fails when a run of five is followed by an equal bit, or when the stream
/// ends where a stuff bit is still owed.
pub fn remove_bit_stuffing(stuffed: &[bool]) -> Result<Vec<bool>, DecodeError> {
    let mut out = Vec::with_capacity(stuffed.len());
    let mut tracker = RunTracker::default();
    let mut i = 0;
    while i < stuffed.len() {
        let bit = stuffed[i];
        out.push(bit);
        if tracker.push(bit) {
            i += 1;
            match stuffed.get(i) {
                None => return Err(DecodeError::Truncated),
                Some(&s) if s == bit => return Err(DecodeError::StuffViolation { index: i }),
                Some(&s) => {
                    tracker.push(s);
                }
            }
        }
        i += 1;
    }
    Ok(out)
}
