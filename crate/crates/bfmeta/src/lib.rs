//! Deterministic, seedable simulator for blockchain-verified federated
//! learning: an append-only model-hash ledger sealed by proof of work,
//! server-side screening of lazy and falsified updates, a reputation-based
//! incentive mechanism, and an event-driven latency model — plus an
//! experiment runner comparing the protected pipeline against plain FedAvg
//! under attack.

pub mod adversary;
pub mod config;
pub mod crypto;
pub mod error;
pub mod fl;
pub mod incentive;
pub mod ledger;
pub mod monitor;
pub mod netsim;
pub mod orchestrator;
pub mod report;

pub use error::{Error, Result};
