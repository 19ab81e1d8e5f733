use std::path::{Path, PathBuf};

use anyhow::Result;
use blendmas_core::bench::Mode;
use blendmas_core::crypto::Address;
use blendmas_core::ledger::GenesisConfig;
use blendmas_core::membership::Role;
use serde::{Deserialize, Serialize};

use crate::util::read_json;

pub const DEFAULT_ORACLE_PORT: u16 = 8540;
pub const DEFAULT_P2P_PORT: u16 = 30300;
pub const DEFAULT_RPC_PORT: u16 = 8600;

fn localhost() -> String {
    "127.0.0.1".into()
}

fn default_interval() -> u64 {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub data_dir: PathBuf,
    #[serde(default = "localhost")]
    pub host: String,
    #[serde(default = "default_oracle_port")]
    pub port: u16,
    /// Role → auto/manual table; built-in default if absent.
    #[serde(default)]
    pub identity_policy: Option<PathBuf>,
}

fn default_oracle_port() -> u16 {
    DEFAULT_ORACLE_PORT
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeConfig {
    pub data_dir: PathBuf,
    /// Expected address of the node key; checked at startup when set.
    #[serde(default)]
    pub address: Option<Address>,
    /// Defaults to `<data_dir>/node.key`, created on first start.
    #[serde(default)]
    pub key_file: Option<PathBuf>,
    /// Advertised in the roster and used for the p2p listener.
    #[serde(rename = "listen_host", alias = "host", default = "localhost")]
    pub host: String,
    #[serde(rename = "listen_port", alias = "p2p_port", default = "default_p2p_port")]
    pub p2p_port: u16,
    #[serde(rename = "http_port", alias = "rpc_port", default = "default_rpc_port")]
    pub rpc_port: u16,
    /// Only miners run full nodes.
    #[serde(default = "miner")]
    pub role: Role,
    #[serde(rename = "oracle_endpoint", alias = "oracle_url")]
    pub oracle_url: String,
    /// Fetched from the oracle when absent.
    #[serde(default)]
    pub genesis: Option<GenesisConfig>,
    #[serde(default = "default_interval")]
    pub block_interval_ms: u64,
    /// Produce blocks when scheduled.
    #[serde(default = "yes")]
    pub mine: bool,
}

fn miner() -> Role {
    Role::Miner
}

impl NodeConfig {
    pub fn new(data_dir: impl Into<PathBuf>, oracle_url: impl Into<String>) -> Self {
        Self {
            data_dir: data_dir.into(),
            address: None,
            key_file: None,
            host: localhost(),
            p2p_port: DEFAULT_P2P_PORT,
            rpc_port: DEFAULT_RPC_PORT,
            role: Role::Miner,
            oracle_url: oracle_url.into(),
            genesis: None,
            block_interval_ms: default_interval(),
            mine: true,
        }
    }

    pub fn key_path(&self) -> PathBuf {
        self.key_file.clone().unwrap_or_else(|| self.data_dir.join("node.key"))
    }
}

fn yes() -> bool {
    true
}

fn default_p2p_port() -> u16 {
    DEFAULT_P2P_PORT
}

fn default_rpc_port() -> u16 {
    DEFAULT_RPC_PORT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Registration,
    Identity,
    Management,
    AccessControl,
    HashedIndex,
    Data,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 6] = [
        ServiceKind::Registration,
        ServiceKind::Identity,
        ServiceKind::Management,
        ServiceKind::AccessControl,
        ServiceKind::HashedIndex,
        ServiceKind::Data,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::Registration => "registration",
            ServiceKind::Identity => "identity",
            ServiceKind::Management => "management",
            ServiceKind::AccessControl => "access_control",
            ServiceKind::HashedIndex => "hashed_index",
            ServiceKind::Data => "data",
        }
    }
}

impl std::str::FromStr for ServiceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.as_str().replace('_', "-") == s)
            .ok_or_else(|| format!("unknown service {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServicePorts {
    pub registration: u16,
    pub identity: u16,
    pub management: u16,
    pub access_control: u16,
    pub hashed_index: u16,
    pub data: u16,
}

impl Default for ServicePorts {
    fn default() -> Self {
        Self {
            registration: 8545,
            identity: 8546,
            management: 8547,
            access_control: 8548,
            hashed_index: 8549,
            data: 8550,
        }
    }
}

impl ServicePorts {
    pub fn get(&self, kind: ServiceKind) -> u16 {
        match kind {
            ServiceKind::Registration => self.registration,
            ServiceKind::Identity => self.identity,
            ServiceKind::Management => self.management,
            ServiceKind::AccessControl => self.access_control,
            ServiceKind::HashedIndex => self.hashed_index,
            ServiceKind::Data => self.data,
        }
    }

    pub fn from_fn(mut f: impl FnMut(ServiceKind) -> u16) -> Self {
        Self {
            registration: f(ServiceKind::Registration),
            identity: f(ServiceKind::Identity),
            management: f(ServiceKind::Management),
            access_control: f(ServiceKind::AccessControl),
            hashed_index: f(ServiceKind::HashedIndex),
            data: f(ServiceKind::Data),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServicesConfig {
    pub data_dir: PathBuf,
    pub mode: Mode,
    #[serde(default = "localhost")]
    pub host: String,
    #[serde(default)]
    pub ports: ServicePorts,
    pub node_url: String,
    pub oracle_url: String,
    /// Authorization policy file; the built-in default if absent.
    #[serde(default)]
    pub policy: Option<PathBuf>,
    #[serde(default)]
    pub cpu_throttle: Option<f64>,
    #[serde(default = "default_chain_timeout")]
    pub chain_timeout_ms: u64,
}

fn default_chain_timeout() -> u64 {
    30_000
}

impl ServicesConfig {
    pub fn url(&self, kind: ServiceKind) -> String {
        format!("http://{}:{}", self.host, self.ports.get(kind))
    }
}

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path)
}
