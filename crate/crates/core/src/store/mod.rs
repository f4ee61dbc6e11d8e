//! Per-VIP observation store.
//!
//! A region is one contiguous little-endian byte mapping: a small header, a
//! bit-index of active egress, and one fixed-size block per egress holding
//! its reservoirs, counter cache and multi-buffered counters and actions.
//! See [`layout`] for the exact byte map and [`VipRegion`] for the exchange
//! protocol.

mod catalog;
pub mod layout;
mod region;
mod stress;

pub use catalog::{Counter, Signal};
pub use layout::{Layout, RegionConfig, HEADER_BYTES, MAGIC, VERSION};
pub use region::{Action, ObservationFrame, VipRegion, UNIT_WEIGHT};
pub use stress::{stress_exchange, StressReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid region config: {0}")]
    Config(String),
    #[error("egress {egress} out of range (N = {n})")]
    EgressOutOfRange { egress: usize, n: usize },
    #[error("egress {0} already active")]
    AlreadyActive(usize),
    #[error("egress {0} not active")]
    NotActive(usize),
    #[error("bad region header: {0}")]
    BadHeader(String),
    #[error("region size {found} does not match layout size {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
