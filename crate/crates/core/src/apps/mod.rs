//! Control-plane applications over observation frames: traffic
//! classification, predictive autoscaling and weighted load balancing, plus
//! the trace-to-region extraction pipeline they share.

pub mod autoscale;
pub mod classify;
pub mod extract;
pub mod features;
pub mod lb;

use thiserror::Error;

use crate::flow_table::FlowTableError;
use crate::ml::MlError;
use crate::store::StoreError;
use crate::traffic::TrafficError;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input out of order: {0}")]
    Unordered(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("no active egress")]
    NoActiveEgress,
    #[error("no prediction for server {0}")]
    MissingPrediction(usize),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    FlowTable(#[from] FlowTableError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
