use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::atomic::{fence, AtomicU32, AtomicU64, Ordering};

use memmap2::{MmapOptions, MmapRaw};
use rand::RngCore;

use super::layout::{Layout, RegionConfig, HEADER_BYTES};
use super::StoreError;
use crate::flow_table::{EmissionKind, FeatureEmission};
use crate::reservoir::{slot_index, Sample};

/// Unit weight in 16.16 fixed point; what `read_action` returns before any push.
pub const UNIT_WEIGHT: u32 = 1 << 16;

/// Decision written by the control plane for one egress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub egress_id: u8,
    /// Weight in 16.16 fixed point.
    pub weight: u32,
    pub aux: u32,
}

impl Action {
    pub fn from_weight(egress_id: u8, weight: f64) -> Self {
        let fixed = (weight * f64::from(UNIT_WEIGHT)).round();
        Self {
            egress_id,
            weight: fixed.clamp(1.0, f64::from(u32::MAX)) as u32,
            aux: 0,
        }
    }

    pub fn weight_f64(&self) -> f64 {
        f64::from(self.weight) / f64::from(UNIT_WEIGHT)
    }
}

/// Latest published counters of one egress plus a reservoir snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub egress_id: u8,
    /// Sequence id of the counter publish; 0 means nothing published yet.
    pub seq: u32,
    pub counters: Vec<u32>,
    /// `samples[signal]` holds the `k` slots of that signal's reservoir.
    pub samples: Vec<Vec<Sample>>,
    pub frame_ts: f64,
}

impl ObservationFrame {
    pub fn counter(&self, c: super::Counter) -> u32 {
        self.counters[c.id()]
    }
}

#[cfg(test)]
thread_local! {
    pub(crate) static TOUCHED: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// A VIP's observation region: a shared byte mapping (file-backed or
/// anonymous) accessed exclusively through atomics.
///
/// Per egress there is one data-plane writer (counters and reservoirs) and
/// one control-plane writer (actions); any number of readers. Publishing
/// follows the multi-buffer protocol: the writer picks the next buffer
/// round-robin, sets its seq to 0, copies the payload, then stores
/// `previous max seq + 1`. Readers take the buffer with the largest nonzero
/// seq and re-check that seq after copying, retrying on change.
pub struct VipRegion {
    map: MmapRaw,
    layout: Layout,
    path: Option<PathBuf>,
    dropped: AtomicU64,
}

impl VipRegion {
    /// Creates a zeroed region file of exactly `cfg.layout_size()` bytes.
    pub fn create(cfg: RegionConfig, path: impl AsRef<Path>) -> Result<Self, StoreError> {
        cfg.validate()?;
        let path = path.as_ref();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        file.set_len(cfg.layout_size() as u64)?;
        let map = MmapOptions::new().map_raw(&file)?;
        let region = Self::init(map, cfg, Some(path.to_path_buf()));
        region.map.flush()?;
        Ok(region)
    }

    /// Process-private region backed by anonymous memory.
    pub fn anonymous(cfg: RegionConfig) -> Result<Self, StoreError> {
        cfg.validate()?;
        let map = MmapOptions::new().len(cfg.layout_size()).map_anon()?;
        Ok(Self::init(map.into(), cfg, None))
    }

    fn init(map: MmapRaw, cfg: RegionConfig, path: Option<PathBuf>) -> Self {
        let header = cfg.encode_header();
        // SAFETY: the mapping is at least HEADER_BYTES long and nobody else
        // has seen it yet.
        unsafe {
            std::ptr::copy_nonoverlapping(header.as_ptr(), map.as_mut_ptr(), HEADER_BYTES);
        }
        Self {
            map,
            layout: Layout::new(cfg),
            path,
            dropped: AtomicU64::new(0),
        }
    }

    /// Maps an existing region file, possibly one another process writes.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let len = file.metadata()?.len() as usize;
        if len < HEADER_BYTES {
            return Err(StoreError::BadHeader("file shorter than header".into()));
        }
        let map = MmapOptions::new().map_raw(&file)?;
        // SAFETY: the header is never written after creation.
        let header = unsafe { std::slice::from_raw_parts(map.as_ptr(), HEADER_BYTES) };
        let cfg = RegionConfig::decode_header(header)?;
        if cfg.layout_size() != len {
            return Err(StoreError::SizeMismatch {
                expected: cfg.layout_size(),
                found: len,
            });
        }
        Ok(Self {
            map,
            layout: Layout::new(cfg),
            path: Some(path.to_path_buf()),
            dropped: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &RegionConfig {
        &self.layout.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Emissions discarded because their egress was inactive.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        self.map.flush()?;
        Ok(())
    }

    #[inline]
    fn u32_at(&self, off: usize) -> &AtomicU32 {
        assert!(off + 4 <= self.map.len() && off.is_multiple_of(4));
        #[cfg(test)]
        TOUCHED.with(|t| t.set(t.get() + 4));
        // SAFETY: in bounds and 4-aligned (mapping is page aligned); all
        // accesses to region memory go through atomics.
        unsafe { &*(self.map.as_mut_ptr().add(off) as *const AtomicU32) }
    }

    #[inline]
    fn u64_at(&self, off: usize) -> &AtomicU64 {
        assert!(off + 8 <= self.map.len() && off.is_multiple_of(8));
        #[cfg(test)]
        TOUCHED.with(|t| t.set(t.get() + 8));
        // SAFETY: as for `u32_at`, with 8-byte alignment.
        unsafe { &*(self.map.as_mut_ptr().add(off) as *const AtomicU64) }
    }

    fn check_index(&self, i: usize) -> Result<(), StoreError> {
        if i >= self.layout.cfg.n_egress {
            return Err(StoreError::EgressOutOfRange {
                egress: i,
                n: self.layout.cfg.n_egress,
            });
        }
        Ok(())
    }

    fn check_active(&self, i: usize) -> Result<(), StoreError> {
        self.check_index(i)?;
        if !self.is_active(i) {
            return Err(StoreError::NotActive(i));
        }
        Ok(())
    }

    fn bit_word(&self, i: usize) -> (&AtomicU64, u64) {
        (self.u64_at(self.layout.bit_index + 8 * (i / 64)), 1u64 << (i % 64))
    }

    pub fn is_active(&self, i: usize) -> bool {
        if i >= self.layout.cfg.n_egress {
            return false;
        }
        let (word, bit) = self.bit_word(i);
        word.load(Ordering::Acquire) & bit != 0
    }

    /// Raw bit-index words.
    pub fn bit_index(&self) -> Vec<u64> {
        (0..self.layout.cfg.bit_index_words())
            .map(|w| self.u64_at(self.layout.bit_index + 8 * w).load(Ordering::Acquire))
            .collect()
    }

    /// Zeroes block `i`, then marks it active.
    pub fn add_egress(&self, i: usize) -> Result<(), StoreError> {
        self.check_index(i)?;
        if self.is_active(i) {
            return Err(StoreError::AlreadyActive(i));
        }
        let start = self.layout.block(i);
        for off in (start..start + self.layout.block_size).step_by(8) {
            self.u64_at(off).store(0, Ordering::Relaxed);
        }
        let (word, bit) = self.bit_word(i);
        word.fetch_or(bit, Ordering::Release);
        Ok(())
    }

    /// Clears the active bit; block contents stay as they are.
    pub fn remove_egress(&self, i: usize) -> Result<(), StoreError> {
        self.check_active(i)?;
        let (word, bit) = self.bit_word(i);
        word.fetch_and(!bit, Ordering::Release);
        Ok(())
    }

    pub fn active_egresses(&self) -> Vec<usize> {
        let n = self.layout.cfg.n_egress;
        let mut out = Vec::new();
        for (w, mut bits) in self.bit_index().into_iter().enumerate() {
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                let i = w * 64 + b;
                if i < n {
                    out.push(i);
                }
                bits &= bits - 1;
            }
        }
        out
    }

    /// Data-plane side: applies one emission to the counter cache or a
    /// reservoir. Emissions for inactive egress are counted and dropped.
    pub fn apply_emission<R: RngCore + ?Sized>(&self, e: &FeatureEmission, rng: &mut R) {
        let i = usize::from(e.egress_id);
        if !self.is_active(i) {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            return;
        }
        let cfg = &self.layout.cfg;
        match e.kind {
            EmissionKind::CounterDelta { counter, delta } => {
                if counter.id() < cfg.n_counters {
                    // Wrapping arithmetic: a decrement is an add of the
                    // two's-complement value.
                    self.u32_at(self.layout.cache(i, counter.id()))
                        .fetch_add(delta as u32, Ordering::Relaxed);
                }
            }
            EmissionKind::Sample { signal, ts, value } => {
                if signal.id() < cfg.n_signals {
                    let slot = slot_index(rng.next_u64(), cfg.k);
                    let word = Sample::new(ts as f32, value as f32).encode();
                    self.u64_at(self.layout.slot(i, signal.id(), slot))
                        .store(word, Ordering::Relaxed);
                }
            }
        }
    }

    /// Current counter cache of egress `i` (data-plane view, unpublished).
    pub fn counter_cache(&self, i: usize) -> Result<Vec<u32>, StoreError> {
        self.check_active(i)?;
        Ok((0..self.layout.cfg.n_counters)
            .map(|c| self.u32_at(self.layout.cache(i, c)).load(Ordering::Relaxed))
            .collect())
    }

    /// Overwrites the counter cache; used by tools and tests.
    pub fn set_counter_cache(&self, i: usize, values: &[u32]) -> Result<(), StoreError> {
        self.check_active(i)?;
        for (c, &v) in values.iter().enumerate().take(self.layout.cfg.n_counters) {
            self.u32_at(self.layout.cache(i, c)).store(v, Ordering::Relaxed);
        }
        Ok(())
    }

    fn seqs(&self, buf_off: impl Fn(usize) -> usize) -> (u32, usize) {
        let mut best = (0u32, usize::MAX);
        for b in 0..self.layout.cfg.m {
            let s = self.u32_at(buf_off(b)).load(Ordering::Acquire);
            if s > best.0 {
                best = (s, b);
            }
        }
        best
    }

    /// Writes `payload` into the next buffer and returns its new seq.
    fn publish(&self, buf_off: impl Fn(usize) -> usize, payload: &[u32]) -> u32 {
        let (max_seq, max_buf) = self.seqs(&buf_off);
        let target = if max_buf == usize::MAX {
            0
        } else {
            (max_buf + 1) % self.layout.cfg.m
        };
        let base = buf_off(target);
        let seq_word = self.u32_at(base);
        seq_word.store(0, Ordering::Relaxed);
        fence(Ordering::Release);
        for (j, &v) in payload.iter().enumerate() {
            self.u32_at(base + 4 + 4 * j).store(v, Ordering::Relaxed);
        }
        let next = max_seq.wrapping_add(1).max(1);
        seq_word.store(next, Ordering::Release);
        next
    }

    /// Copies the latest consistent payload; `(0, zeros)` when never published.
    fn read_buffers(&self, buf_off: impl Fn(usize) -> usize, len: usize) -> (u32, Vec<u32>) {
        let mut payload = vec![0u32; len];
        loop {
            let (seq, buf) = self.seqs(&buf_off);
            if seq == 0 {
                payload.iter_mut().for_each(|v| *v = 0);
                return (0, payload);
            }
            let base = buf_off(buf);
            for (j, v) in payload.iter_mut().enumerate() {
                *v = self.u32_at(base + 4 + 4 * j).load(Ordering::Relaxed);
            }
            fence(Ordering::Acquire);
            if self.u32_at(base).load(Ordering::Relaxed) == seq {
                return (seq, payload);
            }
            std::hint::spin_loop();
        }
    }

    /// Publishes the counter cache of egress `i` into the next multi-buffer.
    pub fn publish_counters(&self, i: usize) -> Result<u32, StoreError> {
        self.check_active(i)?;
        let cache: Vec<u32> = (0..self.layout.cfg.n_counters)
            .map(|c| self.u32_at(self.layout.cache(i, c)).load(Ordering::Relaxed))
            .collect();
        Ok(self.publish(|b| self.layout.counter_buf(i, b), &cache))
    }

    /// Reads the latest published counters of egress `i` followed by a
    /// snapshot of its reservoirs. Never blocks the writer.
    pub fn read_latest(&self, i: usize, now: f64) -> Result<ObservationFrame, StoreError> {
        self.check_active(i)?;
        let cfg = &self.layout.cfg;
        let (seq, counters) = self.read_buffers(|b| self.layout.counter_buf(i, b), cfg.n_counters);
        let samples = (0..cfg.n_signals)
            .map(|s| {
                (0..cfg.k)
                    .map(|slot| {
                        Sample::decode(
                            self.u64_at(self.layout.slot(i, s, slot)).load(Ordering::Relaxed),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(ObservationFrame {
            egress_id: i as u8,
            seq,
            counters,
            samples,
            frame_ts: now,
        })
    }

    /// Seq words of every counter buffer of egress `i` (diagnostics).
    pub fn counter_seqs(&self, i: usize) -> Vec<u32> {
        (0..self.layout.cfg.m)
            .map(|b| self.u32_at(self.layout.counter_buf(i, b)).load(Ordering::Acquire))
            .collect()
    }

    pub fn action_seqs(&self, i: usize) -> Vec<u32> {
        (0..self.layout.cfg.m)
            .map(|b| self.u32_at(self.layout.action_buf(i, b)).load(Ordering::Acquire))
            .collect()
    }

    /// Control-plane side: publishes an action for egress `a.egress_id`.
    pub fn push_action(&self, a: &Action) -> Result<u32, StoreError> {
        let i = usize::from(a.egress_id);
        self.check_active(i)?;
        let mut words = vec![0u32; self.layout.cfg.n_action_slots];
        words[0] = a.weight;
        if let Some(w) = words.get_mut(1) {
            *w = a.aux;
        }
        Ok(self.publish(|b| self.layout.action_buf(i, b), &words))
    }

    /// Latest action of egress `i`; unit weight when nothing was pushed.
    pub fn read_action(&self, i: usize) -> Result<Action, StoreError> {
        self.check_active(i)?;
        let (seq, words) = self.read_buffers(
            |b| self.layout.action_buf(i, b),
            self.layout.cfg.n_action_slots,
        );
        if seq == 0 {
            return Ok(Action {
                egress_id: i as u8,
                weight: UNIT_WEIGHT,
                aux: 0,
            });
        }
        Ok(Action {
            egress_id: i as u8,
            weight: words[0],
            aux: words.get(1).copied().unwrap_or(0),
        })
    }

    /// Copies the whole region (header included) into a byte vector.
    pub fn to_bytes(&self) -> Vec<u8> {
        // total size is a multiple of 8 by construction
        (0..self.layout.total())
            .step_by(8)
            .flat_map(|off| self.u64_at(off).load(Ordering::Relaxed).to_le_bytes())
            .collect()
    }
}

// SAFETY: all shared state lives in the mapping and is accessed through
// atomics; the struct itself only holds immutable metadata and an atomic.
unsafe impl Send for VipRegion {}
unsafe impl Sync for VipRegion {}
