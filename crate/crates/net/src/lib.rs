//! Tokio runtimes for the edge dynamic map testbed.

pub mod broker;
pub mod capacity;
pub mod client;
mod error;
pub mod fleet;
pub mod mec;
pub mod outbox;
pub mod registry;
pub mod throughput;

pub use broker::{Broker, BrokerConfig, BrokerServer, InternalSession};
pub use client::{BrokerClient, Message};
pub use error::NetError;
pub use mec::{MecOptions, MecServer};
pub use registry::{RegistryOptions, RegistryServer};
pub use fleet::{spawn_fleet, FleetHandle, FleetOptions};
pub use capacity::{run_capacity, CapacityConfig, CapacityReport};
pub use throughput::{run_throughput, ThroughputConfig, ThroughputReport};
