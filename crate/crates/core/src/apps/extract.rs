//! Drives packets through a flow table into a region and snapshots frames
//! on a fixed tick.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{build_feature_rows, FeatureMatrix};
use super::AppError;
use crate::flow_table::{FeatureEmission, FlowTable, FlowTableConfig};
use crate::store::{ObservationFrame, Signal, VipRegion};
use crate::traffic::PacketEvent;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    /// Tick spacing in seconds; frames are taken at multiples of it.
    pub window: f64,
    pub table: FlowTableConfig,
    /// Seed of the reservoir slot RNG.
    pub seed: u64,
    /// Activate an egress block the first time a packet names it.
    pub auto_add: bool,
    /// Keep every frame taken at a tick.
    pub record_frames: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            window: 1.0,
            table: FlowTableConfig::default(),
            seed: 0,
            auto_add: true,
            record_frames: true,
        }
    }
}

/// Data-plane side of the pipeline. Packets with `ts < t` are applied
/// before the tick at `t`, so a window covers `[t - window, t)`.
pub struct Extractor<'r> {
    region: &'r VipRegion,
    table: FlowTable,
    rng: ChaCha8Rng,
    cfg: ExtractConfig,
    next_tick: f64,
    ticks: u64,
    frames: Vec<ObservationFrame>,
    buf: Vec<FeatureEmission>,
}

impl<'r> Extractor<'r> {
    pub fn new(region: &'r VipRegion, cfg: ExtractConfig) -> Result<Self, AppError> {
        if !(cfg.window > 0.0 && cfg.window.is_finite()) {
            return Err(AppError::Config(format!("window must be > 0, got {}", cfg.window)));
        }
        Ok(Self {
            region,
            table: FlowTable::new(cfg.table)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            next_tick: 0.0,
            ticks: 0,
            frames: Vec::new(),
            buf: Vec::new(),
            cfg,
        })
    }

    pub fn region(&self) -> &VipRegion {
        self.region
    }

    pub fn table(&self) -> &FlowTable {
        &self.table
    }

    pub fn frames(&self) -> &[ObservationFrame] {
        &self.frames
    }

    pub fn take_frames(&mut self) -> Vec<ObservationFrame> {
        std::mem::take(&mut self.frames)
    }

    /// Time of the most recent tick, or `None` before the first.
    pub fn last_tick(&self) -> Option<f64> {
        self.ticks.checked_sub(1).map(|k| k as f64 * self.cfg.window)
    }

    fn tick(&mut self) -> Result<(), AppError> {
        let t = self.next_tick;
        for e in self.table.expire(t) {
            self.region.apply_emission(&e, &mut self.rng);
        }
        for i in self.region.active_egresses() {
            self.region.publish_counters(i)?;
            if self.cfg.record_frames {
                self.frames.push(self.region.read_latest(i, t)?);
            }
        }
        self.ticks += 1;
        self.next_tick = self.ticks as f64 * self.cfg.window;
        Ok(())
    }

    /// Runs every tick at or before `t`.
    pub fn advance(&mut self, t: f64) -> Result<(), AppError> {
        while self.next_tick <= t {
            self.tick()?;
        }
        Ok(())
    }

    /// Activates egress `i`, recording an all-zero baseline frame at the
    /// last tick so its first window is not lost.
    pub fn add_egress(&mut self, i: usize) -> Result<(), AppError> {
        self.region.add_egress(i)?;
        if self.cfg.record_frames {
            if let Some(t) = self.last_tick() {
                self.frames.push(self.region.read_latest(i, t)?);
            }
        }
        Ok(())
    }

    pub fn push(&mut self, ev: &PacketEvent) -> Result<(), AppError> {
        self.advance(ev.ts)?;
        if self.cfg.auto_add {
            if let Some(e) = ev.egress_id.map(usize::from) {
                if e < self.region.config().n_egress && !self.region.is_active(e) {
                    self.add_egress(e)?;
                }
            }
        }
        self.buf.clear();
        self.table.on_packet_into(ev, &mut self.buf)?;
        for e in &self.buf {
            self.region.apply_emission(e, &mut self.rng);
        }
        Ok(())
    }

    /// Takes the tick that closes the window holding the last packet.
    pub fn finish(&mut self) -> Result<(), AppError> {
        self.tick()
    }
}

#[derive(Debug, Clone)]
pub struct ExtractReport {
    pub frames: Vec<ObservationFrame>,
    pub features: FeatureMatrix,
    pub misses: u64,
    pub dropped: u64,
}

/// Runs a whole trace through a fresh flow table into `region`.
pub fn extract_trace(
    events: &[PacketEvent],
    region: &VipRegion,
    cfg: &ExtractConfig,
    signals: &[Signal],
) -> Result<ExtractReport, AppError> {
    let mut cfg = cfg.clone();
    cfg.record_frames = true;
    let window = cfg.window;
    let mut ex = Extractor::new(region, cfg)?;
    for ev in events {
        ex.push(ev)?;
    }
    ex.finish()?;
    let misses = ex.table().miss_count();
    let frames = ex.take_frames();
    let features = build_feature_rows(&frames, window, signals)?;
    let dropped = region.dropped();
    if dropped > 0 {
        log::warn!("{dropped} emissions named an inactive egress and were dropped");
    }
    Ok(ExtractReport {
        frames,
        features,
        misses,
        dropped,
    })
}
