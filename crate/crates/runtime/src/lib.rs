//! Networked runtime: oracle, PoA nodes, security services and the
//! benchmark harness built on `blendmas-core`.

pub mod chain_client;
pub mod client;
pub mod config;
pub mod harness;
pub mod http;
pub mod mempool;
pub mod node;
pub mod node_rpc;
pub mod oracle;
pub mod p2p;
pub mod provision;
pub mod replay;
pub mod services;
pub mod util;
