//! Byte layout of a VIP region.
//!
//! ```text
//! offset 0   "AQRS"            magic
//!        4   u16               version
//!        6   u8                N, max egress count
//!        7   [u8; 9]           reserved
//!       16   u16 n_counters, u16 n_signals, u32 k, u16 m, u16 n_action_slots
//!       28   [u8; 4]           reserved
//!       32   [u64; ceil(N/64)] bit-index, bit i set <=> egress i active
//!            N x block
//! ```
//!
//! Each block holds, in order: `n_signals` reservoirs of `k` 8-byte slots,
//! the `n_counters` x u32 counter cache, `m` counter buffers
//! (`u32 seq` + counters), `m` action buffers (`u32 seq` + action words),
//! then zero padding to a multiple of 8 bytes. Everything is little-endian.

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::reservoir::SLOT_BYTES;

pub const MAGIC: [u8; 4] = *b"AQRS";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionConfig {
    /// Max egress count.
    pub n_egress: usize,
    pub n_counters: usize,
    pub n_signals: usize,
    /// Reservoir capacity per signal.
    pub k: usize,
    /// Multi-buffer levels.
    pub m: usize,
    pub n_action_slots: usize,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            n_egress: 64,
            n_counters: 8,
            n_signals: 13,
            k: 128,
            m: 3,
            n_action_slots: 2,
        }
    }
}

impl RegionConfig {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |msg: String| Err(StoreError::Config(msg));
        if self.n_egress == 0 || self.n_egress > 255 {
            return bad(format!("n_egress must be in 1..=255, got {}", self.n_egress));
        }
        if self.m < 2 || self.m > u16::MAX as usize {
            return bad(format!("m must be >= 2, got {}", self.m));
        }
        for (name, v) in [
            ("n_counters", self.n_counters),
            ("n_signals", self.n_signals),
            ("n_action_slots", self.n_action_slots),
        ] {
            if v == 0 || v > u16::MAX as usize {
                return bad(format!("{name} must be in 1..=65535, got {v}"));
            }
        }
        if self.k == 0 || self.k > u32::MAX as usize {
            return bad(format!("k must be positive, got {}", self.k));
        }
        Ok(())
    }

    pub fn bit_index_words(&self) -> usize {
        self.n_egress.div_ceil(64)
    }

    pub fn reservoir_bytes(&self) -> usize {
        self.n_signals * self.k * SLOT_BYTES
    }

    pub fn counter_buffer_bytes(&self) -> usize {
        4 + 4 * self.n_counters
    }

    pub fn action_buffer_bytes(&self) -> usize {
        4 + 4 * self.n_action_slots
    }

    /// Unpadded block size.
    pub fn raw_block_size(&self) -> usize {
        4 * self.n_counters
            + self.m * self.counter_buffer_bytes()
            + self.m * self.action_buffer_bytes()
            + self.reservoir_bytes()
    }

    pub fn block_size(&self) -> usize {
        self.raw_block_size().next_multiple_of(8)
    }

    /// Exact region file size.
    pub fn layout_size(&self) -> usize {
        HEADER_BYTES + 8 * self.bit_index_words() + self.n_egress * self.block_size()
    }

    /// Counter payload across all multi-buffers and egress, excluding seq words.
    pub fn counter_mbuf_payload_total(&self) -> usize {
        4 * self.n_counters * self.m * self.n_egress
    }

    /// Reservoir sample payload across all egress.
    pub fn reservoir_area_total(&self) -> usize {
        self.reservoir_bytes() * self.n_egress
    }

    pub(crate) fn encode_header(&self) -> [u8; HEADER_BYTES] {
        let mut h = [0u8; HEADER_BYTES];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..6].copy_from_slice(&VERSION.to_le_bytes());
        h[6] = self.n_egress as u8;
        h[16..18].copy_from_slice(&(self.n_counters as u16).to_le_bytes());
        h[18..20].copy_from_slice(&(self.n_signals as u16).to_le_bytes());
        h[20..24].copy_from_slice(&(self.k as u32).to_le_bytes());
        h[24..26].copy_from_slice(&(self.m as u16).to_le_bytes());
        h[26..28].copy_from_slice(&(self.n_action_slots as u16).to_le_bytes());
        h
    }

    pub(crate) fn decode_header(h: &[u8]) -> Result<Self, StoreError> {
        if h.len() < HEADER_BYTES {
            return Err(StoreError::BadHeader("file shorter than header".into()));
        }
        if h[0..4] != MAGIC {
            return Err(StoreError::BadHeader("bad magic".into()));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != VERSION {
            return Err(StoreError::BadHeader(format!("unsupported version {version}")));
        }
        let u16_at = |o: usize| u16::from_le_bytes([h[o], h[o + 1]]) as usize;
        let cfg = RegionConfig {
            n_egress: h[6] as usize,
            n_counters: u16_at(16),
            n_signals: u16_at(18),
            k: u32::from_le_bytes([h[20], h[21], h[22], h[23]]) as usize,
            m: u16_at(24),
            n_action_slots: u16_at(26),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Byte offsets of every field, derived once from a [`RegionConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub cfg: RegionConfig,
    pub bit_index: usize,
    pub blocks: usize,
    pub block_size: usize,
    res_off: usize,
    cache_off: usize,
    cbuf_off: usize,
    abuf_off: usize,
}

impl Layout {
    pub fn new(cfg: RegionConfig) -> Self {
        let bit_index = HEADER_BYTES;
        let blocks = bit_index + 8 * cfg.bit_index_words();
        let res_off = 0;
        let cache_off = res_off + cfg.reservoir_bytes();
        let cbuf_off = cache_off + 4 * cfg.n_counters;
        let abuf_off = cbuf_off + cfg.m * cfg.counter_buffer_bytes();
        Self {
            cfg,
            bit_index,
            blocks,
            block_size: cfg.block_size(),
            res_off,
            cache_off,
            cbuf_off,
            abuf_off,
        }
    }

    pub fn total(&self) -> usize {
        self.cfg.layout_size()
    }

    pub fn block(&self, egress: usize) -> usize {
        self.blocks + egress * self.block_size
    }

    pub fn slot(&self, egress: usize, signal: usize, slot: usize) -> usize {
        self.block(egress) + self.res_off + (signal * self.cfg.k + slot) * SLOT_BYTES
    }

    pub fn cache(&self, egress: usize, counter: usize) -> usize {
        self.block(egress) + self.cache_off + 4 * counter
    }

    /// Offset of the seq word of counter buffer `buf`; payload follows it.
    pub fn counter_buf(&self, egress: usize, buf: usize) -> usize {
        self.block(egress) + self.cbuf_off + buf * self.cfg.counter_buffer_bytes()
    }

    pub fn action_buf(&self, egress: usize, buf: usize) -> usize {
        self.block(egress) + self.abuf_off + buf * self.cfg.action_buffer_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_payload_arithmetic() {
        let cfg = RegionConfig::default();
        assert_eq!(cfg.counter_mbuf_payload_total(), 8 * 4 * 3 * 64);
        assert_eq!(cfg.counter_mbuf_payload_total(), 6144);
        assert_eq!(cfg.reservoir_area_total(), 13 * 128 * 8 * 64);
        assert_eq!(cfg.reservoir_area_total(), 832 * 1024);
    }

    #[test]
    fn default_layout_size() {
        let cfg = RegionConfig::default();
        // 32 + 3*36 + 3*12 + 13*128*8 = 13488, already 8-aligned
        assert_eq!(cfg.block_size(), 13_488);
        assert_eq!(cfg.layout_size(), 32 + 8 + 64 * 13_488);
    }

    #[test]
    fn minimal_layout_size() {
        let cfg = RegionConfig {
            n_egress: 1,
            n_counters: 1,
            n_signals: 1,
            k: 1,
            m: 2,
            n_action_slots: 2,
        };
        // 4 + 2*8 + 2*12 + 8 = 52 -> padded 56; 32 + 8 + 56
        assert_eq!(cfg.raw_block_size(), 52);
        assert_eq!(cfg.layout_size(), 96);
    }

    #[test]
    fn offsets_are_aligned_and_in_bounds() {
        for cfg in [
            RegionConfig::default(),
            RegionConfig { n_egress: 3, n_counters: 3, n_signals: 2, k: 5, m: 4, n_action_slots: 1 },
        ] {
            let l = Layout::new(cfg);
            for e in 0..cfg.n_egress {
                assert_eq!(l.block(e) % 8, 0);
                assert_eq!(l.slot(e, 0, 0) % 8, 0);
                assert_eq!(l.cache(e, 0) % 4, 0);
                let end = l.action_buf(e, cfg.m - 1) + cfg.action_buffer_bytes();
                assert!(end <= l.block(e) + l.block_size);
            }
            assert_eq!(l.block(cfg.n_egress), l.total());
        }
    }

    #[test]
    fn header_round_trip() {
        let cfg = RegionConfig { n_egress: 9, n_counters: 4, n_signals: 3, k: 16, m: 5, n_action_slots: 2 };
        let h = cfg.encode_header();
        assert_eq!(&h[0..4], b"AQRS");
        assert_eq!(h[6], 9);
        assert!(h[7..14].iter().all(|&b| b == 0));
        assert_eq!(RegionConfig::decode_header(&h).unwrap(), cfg);
    }

    #[test]
    fn rejects_single_buffer() {
        let cfg = RegionConfig { m: 1, ..RegionConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
