//! Networked side of the monitoring stack: the inference service and its
//! directory poller, the gateway, the emulated node transport and the
//! latency bench.

pub mod bench;
pub mod gateway;
pub mod node;
pub mod poll;
pub mod protocol;
pub mod server;
