//! Fixed-size reservoir sampling without rejection.
//!
//! Every arrival overwrites one uniformly chosen slot, so the buffer always
//! holds the latest sample plus a geometrically thinning tail of older ones:
//! a sample inserted `j` arrivals ago survives with probability `(1 - 1/k)^j`.

use rand::RngCore;

/// Default number of slots per signal.
pub const DEFAULT_K: usize = 128;

/// Bytes per encoded slot: `f32` timestamp then `f32` value, little-endian.
pub const SLOT_BYTES: usize = 8;

/// One `(timestamp, value)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sample {
    pub ts: f32,
    pub value: f32,
}

impl Sample {
    pub fn new(ts: f32, value: f32) -> Self {
        Self { ts, value }
    }

    /// Packs the slot so that its little-endian bytes are `ts` then `value`.
    pub fn encode(self) -> u64 {
        u64::from(self.ts.to_bits()) | (u64::from(self.value.to_bits()) << 32)
    }

    pub fn decode(word: u64) -> Self {
        Self {
            ts: f32::from_bits(word as u32),
            value: f32::from_bits((word >> 32) as u32),
        }
    }

    pub fn to_le_bytes(self) -> [u8; SLOT_BYTES] {
        self.encode().to_le_bytes()
    }

    pub fn is_empty(self) -> bool {
        self.encode() == 0
    }
}

/// Maps a 64-bit random word onto `[0, k)` by multiply-shift (Lemire's
/// reduction). Bias is at most `k / 2^64`.
#[inline]
pub fn slot_index(word: u64, k: usize) -> usize {
    ((u128::from(word) * k as u128) >> 64) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    slots: Box<[Sample]>,
    inserted: u64,
}

impl Reservoir {
    /// # Panics
    /// Panics if `k == 0`.
    pub fn new(k: usize) -> Self {
        assert!(k > 0, "reservoir capacity must be positive");
        Self {
            slots: vec![Sample::default(); k].into_boxed_slice(),
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Total arrivals ever inserted.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Registers `(ts, value)` in a uniformly random slot; returns the slot.
    pub fn insert<R: RngCore + ?Sized>(&mut self, ts: f32, value: f32, rng: &mut R) -> usize {
        let idx = slot_index(rng.next_u64(), self.slots.len());
        self.slots[idx] = Sample::new(ts, value);
        self.inserted += 1;
        idx
    }

    pub fn snapshot(&self) -> Vec<Sample> {
        self.slots.to_vec()
    }

    pub fn slots(&self) -> &[Sample] {
        &self.slots
    }

    /// Slot bytes exactly as laid out in a region.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.slots.iter().flat_map(|s| s.to_le_bytes()).collect()
    }
}

impl Default for Reservoir {
    fn default() -> Self {
        Self::new(DEFAULT_K)
    }
}
