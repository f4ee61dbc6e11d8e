//! Two-thread exchange check: one thread publishes counter snapshots while
//! another reads them back, and every frame read must be one that was
//! actually published.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::Serialize;

use super::{StoreError, VipRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StressReport {
    pub publishes: u64,
    pub reads: u64,
    /// Frames whose payload matches no published snapshot.
    pub torn: u64,
    /// Reads whose seq went backwards.
    pub seq_regressions: u64,
}

impl StressReport {
    pub fn clean(&self) -> bool {
        self.torn == 0 && self.seq_regressions == 0
    }
}

/// Snapshot `i`: counter 0 holds `i`, the rest a hash of `(i, c)`.
fn pattern(i: u32, c: usize) -> u32 {
    if c == 0 {
        return i;
    }
    let x = u64::from(i) << 8 | c as u64;
    let x = x.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    (x >> 32) as u32 ^ x as u32
}

/// Runs `publishes` publishes of egress `egress` against a concurrent
/// reader. The egress is re-added first so its seqs start from zero, which
/// lets the reader also check that a frame's seq equals its snapshot index.
pub fn stress_exchange(region: &VipRegion, egress: usize, publishes: u64) -> Result<StressReport, StoreError> {
    if region.is_active(egress) {
        region.remove_egress(egress)?;
    }
    region.add_egress(egress)?;
    let n = region.config().n_counters;
    let done = AtomicBool::new(false);

    let (reads, torn, regress) = std::thread::scope(|s| {
        let reader = s.spawn(|| -> Result<(u64, u64, u64), StoreError> {
            let (mut reads, mut torn, mut regress, mut last) = (0u64, 0u64, 0u64, 0u32);
            loop {
                let finished = done.load(Ordering::Acquire);
                let f = region.read_latest(egress, 0.0)?;
                reads += 1;
                if f.seq < last {
                    regress += 1;
                }
                last = f.seq;
                let ok = if f.seq == 0 {
                    f.counters.iter().all(|&v| v == 0)
                } else {
                    f.counters[0] == f.seq && (0..n).all(|c| f.counters[c] == pattern(f.seq, c))
                };
                if !ok {
                    torn += 1;
                }
                if finished {
                    return Ok((reads, torn, regress));
                }
            }
        });
        let publisher = (|| -> Result<(), StoreError> {
            let mut snap = vec![0u32; n];
            for i in 1..=publishes {
                let i = i as u32;
                for (c, v) in snap.iter_mut().enumerate() {
                    *v = pattern(i, c);
                }
                region.set_counter_cache(egress, &snap)?;
                region.publish_counters(egress)?;
            }
            Ok(())
        })();
        done.store(true, Ordering::Release);
        let r = reader.join().expect("reader thread panicked");
        publisher.and(r)
    })?;
    Ok(StressReport {
        publishes,
        reads,
        torn,
        seq_regressions: regress,
    })
}
