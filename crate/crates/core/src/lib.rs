//! Passive flow-feature collection for software network functions.
//!
//! The crate is organised the way packets flow through it:
//!
//! * [`traffic`] generates deterministic TCP-like traces over
//!   processor-sharing servers and reads/writes trace files.
//! * [`flow_table`] tracks flows in a fixed-size hash table and turns packets
//!   into counter deltas and quantitative samples.
//! * [`reservoir`] keeps fixed-size no-rejection sample buffers.
//! * [`store`] lays the observations out in a per-VIP shared byte region with
//!   lock-free multi-buffered exchange between data and control plane.
//! * [`ml`] holds the small learning toolkit (PCA, clustering, regression).
//! * [`apps`] builds traffic classification, autoscaling and load balancing
//!   on top of the store.

pub mod apps;
pub mod flow_table;
pub mod ml;
pub mod reservoir;
pub mod store;
pub mod traffic;
