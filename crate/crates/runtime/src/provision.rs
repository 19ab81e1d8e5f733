//! Desk-network provisioning: an oracle, N miners and the services, either
//! as tasks in this process or as child processes of the `blendmas` binary.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use blendmas_core::bench::Mode;
use blendmas_core::contracts::Action;
use blendmas_core::crypto::{Account, Address, Hash};
use blendmas_core::security::{synthetic_records, EntityRole, FeatureRecord};
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::chain_client::ChainClient;
use crate::client::ClientSession;
use crate::config::{NodeConfig, OracleConfig, ServiceKind, ServicePorts, ServicesConfig};
use crate::http::ApiError;
use crate::node::{start_node, NodeHandle};
use crate::oracle::{start_oracle, OracleClient, OracleHandle};
use crate::services::access::TokenReply;
use crate::services::{start_services, ServicesHandle};
use crate::util::{free_port, now_secs, wait_for, write_json};

pub const DEFAULT_MINERS: usize = 4;
pub const DEFAULT_RECORDS: usize = 50;
pub const CLIENT_VID: &str = "client-0001";
pub const QUERY_RESOURCE: &str = "/data/query";
/// Validity window requested for the client token.
pub const TOKEN_WINDOW_SECS: u64 = 3600;

const STARTUP_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub miners: usize,
    pub mode: Mode,
    pub block_interval_ms: u64,
    pub cpu_throttle: Option<f64>,
    pub host: String,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            miners: DEFAULT_MINERS,
            mode: Mode::Micro,
            block_interval_ms: 1000,
            cpu_throttle: None,
            host: "127.0.0.1".into(),
        }
    }
}

/// Where everything listens; written to `endpoints.json` by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Endpoints {
    pub oracle: String,
    pub nodes: Vec<String>,
    pub services: BTreeMap<ServiceKind, String>,
}

impl Endpoints {
    pub fn service(&self, kind: ServiceKind) -> &str {
        &self.services[&kind]
    }

    pub fn oracle_client(&self) -> OracleClient {
        OracleClient::new(self.oracle.clone())
    }

    pub fn chain(&self, i: usize) -> ChainClient {
        ChainClient::new(self.nodes[i].clone())
    }
}

fn service_ports() -> ServicePorts {
    ServicePorts::from_fn(|_| free_port())
}

fn services_config(dir: &Path, spec: &NetworkSpec, node_url: &str, oracle_url: &str) -> ServicesConfig {
    ServicesConfig {
        data_dir: dir.to_path_buf(),
        mode: spec.mode,
        host: spec.host.clone(),
        ports: service_ports(),
        node_url: node_url.into(),
        oracle_url: oracle_url.into(),
        policy: None,
        cpu_throttle: spec.cpu_throttle,
        chain_timeout_ms: 30_000,
    }
}

fn node_config(dir: &Path, spec: &NetworkSpec, oracle_url: &str) -> NodeConfig {
    let mut c = NodeConfig::new(dir, oracle_url);
    c.host = spec.host.clone();
    c.p2p_port = free_port();
    c.rpc_port = free_port();
    c.block_interval_ms = spec.block_interval_ms;
    c
}

/// Approves the pending joins of `miners` and waits until the roster lists them all.
pub async fn approve_miners(oracle: &OracleClient, miners: &[Address]) -> Result<()> {
    let done = wait_for(STARTUP_TIMEOUT, Duration::from_millis(100), || async {
        let _ = oracle.approve_pending(miners).await;
        let roster = oracle.roster().await.ok()?;
        miners.iter().all(|m| roster.is_enrolled(m)).then_some(())
    })
    .await;
    done.context("miners were not enrolled in time")
}

/// Waits until every node reports the same head at height ≥ `min_height`.
pub async fn wait_converged(nodes: &[ChainClient], min_height: u64, timeout: Duration) -> Option<(u64, Hash)> {
    wait_for(timeout, Duration::from_millis(50), || async {
        let mut head = None;
        for n in nodes {
            let h = n.head().await.ok()?;
            if h.height < min_height {
                return None;
            }
            match head {
                None => head = Some((h.height, h.hash)),
                Some(x) if x == (h.height, h.hash) => {}
                Some(_) => return None,
            }
        }
        head
    })
    .await
}

async fn wait_ready(urls: &BTreeMap<ServiceKind, String>) -> Result<()> {
    let probe = ClientSession::new(Account::generate(), urls.clone());
    wait_for(STARTUP_TIMEOUT, Duration::from_millis(100), || async { probe.all_ready().await.then_some(()) })
        .await
        .context("services did not become ready")
}

/// In-process network for tests.
pub struct LocalNetwork {
    pub dir: PathBuf,
    pub spec: NetworkSpec,
    pub oracle: OracleHandle,
    pub nodes: Vec<NodeHandle>,
    pub services: Vec<ServicesHandle>,
    pub endpoints: Endpoints,
}

impl LocalNetwork {
    /// Starts the oracle and miners; services are started separately.
    pub async fn start_chain(dir: &Path, spec: NetworkSpec) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let oracle = start_oracle(OracleConfig {
            data_dir: dir.join("oracle"),
            host: spec.host.clone(),
            port: free_port(),
            identity_policy: None,
        })
        .await?;
        let oracle_url = oracle.url();
        let mut net = Self {
            dir: dir.to_path_buf(),
            spec,
            oracle,
            nodes: Vec::new(),
            services: Vec::new(),
            endpoints: Endpoints {
                oracle: oracle_url,
                nodes: Vec::new(),
                services: BTreeMap::new(),
            },
        };
        for _ in 0..net.spec.miners {
            net.add_miner().await?;
        }
        let chains = net.chains();
        wait_converged(&chains, 1, STARTUP_TIMEOUT)
            .await
            .context("chain did not start")?;
        Ok(net)
    }

    /// Chain plus services, ready for a workload.
    pub async fn start(dir: &Path, spec: NetworkSpec) -> Result<Self> {
        let mut net = Self::start_chain(dir, spec).await?;
        net.start_services().await?;
        Ok(net)
    }

    pub fn oracle_client(&self) -> OracleClient {
        self.endpoints.oracle_client()
    }

    pub fn chains(&self) -> Vec<ChainClient> {
        self.nodes.iter().map(|n| ChainClient::new(n.rpc_url())).collect()
    }

    /// Starts one more miner and approves it.
    pub async fn add_miner(&mut self) -> Result<usize> {
        let i = self.nodes.len();
        let cfg = node_config(&self.dir.join(format!("node{i}")), &self.spec, &self.endpoints.oracle);
        let handle = start_node(cfg).await?;
        approve_miners(&self.oracle_client(), &[handle.address()]).await?;
        self.endpoints.nodes.push(handle.rpc_url());
        self.nodes.push(handle);
        Ok(i)
    }

    pub async fn start_services(&mut self) -> Result<()> {
        let node_url = self.endpoints.nodes[0].clone();
        let cfg = services_config(&self.dir.join("services"), &self.spec, &node_url, &self.endpoints.oracle);
        let mut urls = BTreeMap::new();
        match self.spec.mode {
            Mode::Mono => {
                let h = start_services(cfg, None).await?;
                urls.extend(h.urls.clone());
                self.services.push(h);
            }
            Mode::Micro => {
                // One context per service with HTTP links, as separate processes would have.
                for kind in ServiceKind::ALL {
                    let h = start_services(cfg.clone(), Some(kind)).await?;
                    urls.extend(h.urls.clone());
                    self.services.push(h);
                }
            }
        }
        wait_ready(&urls).await?;
        self.endpoints.services = urls;
        Ok(())
    }
}

/// Child processes of the `blendmas` binary; killed on drop.
pub struct ProcessNetwork {
    pub dir: PathBuf,
    pub endpoints: Endpoints,
    children: Vec<(String, Child)>,
}

impl ProcessNetwork {
    fn spawn(&mut self, bin: &Path, name: &str, args: &[&str]) -> Result<()> {
        let logs = self.dir.join("logs");
        std::fs::create_dir_all(&logs)?;
        let log = std::fs::File::create(logs.join(format!("{name}.log")))?;
        let child = Command::new(bin)
            .args(args)
            .env_remove("BLENDMAS_CONFIG")
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .spawn()
            .with_context(|| format!("spawning {name}"))?;
        self.children.push((name.to_string(), child));
        Ok(())
    }

    fn check_alive(&mut self) -> Result<()> {
        for (name, child) in &mut self.children {
            if let Some(status) = child.try_wait()? {
                bail!(
                    "{name} exited with {status}; see {}",
                    self.dir.join("logs").join(format!("{name}.log")).display()
                );
            }
        }
        Ok(())
    }

    pub async fn start(bin: &Path, dir: &Path, spec: &NetworkSpec) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut net = Self {
            dir: dir.to_path_buf(),
            endpoints: Endpoints {
                oracle: String::new(),
                nodes: Vec::new(),
                services: BTreeMap::new(),
            },
            children: Vec::new(),
        };
        let configs = dir.join("config");
        std::fs::create_dir_all(&configs)?;

        let oracle_cfg = OracleConfig {
            data_dir: dir.join("oracle"),
            host: spec.host.clone(),
            port: free_port(),
            identity_policy: None,
        };
        let path = configs.join("oracle.json");
        write_json(&path, &oracle_cfg)?;
        net.spawn(bin, "oracle", &["oracle", "run", "--config", &path.to_string_lossy()])?;
        net.endpoints.oracle = format!("http://{}:{}", spec.host, oracle_cfg.port);
        let oracle = net.endpoints.oracle_client();
        wait_for(STARTUP_TIMEOUT, Duration::from_millis(100), || async { oracle.genesis().await.ok() })
            .await
            .context("oracle did not start")?;

        let mut miners = Vec::new();
        for i in 0..spec.miners {
            let cfg = node_config(&dir.join(format!("node{i}")), spec, &net.endpoints.oracle);
            let account = crate::util::load_or_create_account(&cfg.key_path())?;
            miners.push(account.address());
            let path = configs.join(format!("node{i}.json"));
            write_json(&path, &cfg)?;
            net.spawn(bin, &format!("node{i}"), &["node", "run", "--config", &path.to_string_lossy()])?;
            net.endpoints.nodes.push(format!("http://{}:{}", spec.host, cfg.rpc_port));
        }
        let approved = approve_miners(&oracle, &miners).await;
        net.check_alive()?;
        approved?;
        let chains: Vec<ChainClient> = (0..spec.miners).map(|i| net.endpoints.chain(i)).collect();
        wait_converged(&chains, 1, STARTUP_TIMEOUT)
            .await
            .context("chain did not start")?;

        let scfg = services_config(&dir.join("services"), spec, &net.endpoints.nodes[0], &net.endpoints.oracle);
        let path = configs.join("services.json");
        write_json(&path, &scfg)?;
        let p = path.to_string_lossy().to_string();
        match spec.mode {
            Mode::Mono => net.spawn(bin, "services", &["services", "run", "--config", &p])?,
            Mode::Micro => {
                for kind in ServiceKind::ALL {
                    net.spawn(bin, kind.as_str(), &["services", "run", "--config", &p, "--only", kind.as_str()])?;
                }
            }
        }
        net.endpoints.services = ServiceKind::ALL.into_iter().map(|k| (k, scfg.url(k))).collect();
        let ready = wait_ready(&net.endpoints.services).await;
        net.check_alive()?;
        ready?;
        write_json(&dir.join("endpoints.json"), &net.endpoints)?;
        info!("network up in {}", dir.display());
        Ok(net)
    }

    pub fn shutdown(&mut self) {
        for (_, child) in self.children.iter_mut().rev() {
            let _ = child.kill();
            let _ = child.wait();
        }
        self.children.clear();
    }
}

impl Drop for ProcessNetwork {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// A registered client holding a token, and the records it can query.
#[derive(Debug, Clone)]
pub struct Workload {
    pub client: ClientSession,
    pub token: TokenReply,
    pub records: Vec<FeatureRecord>,
}

impl Workload {
    pub fn frame_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.frame_id.clone()).collect()
    }
}

/// Enrolls and registers a client with account `account`, issues a token
/// on the query resource and ingests `records` synthetic records.
pub async fn setup_workload(endpoints: &Endpoints, account: Account, records: usize, seed: u64) -> Result<Workload, ApiError> {
    let client = ClientSession::new(account, endpoints.services.clone());
    let oracle = endpoints.oracle_client();
    client.enroll(&oracle, "127.0.0.1").await?;
    let enrolled = wait_for(STARTUP_TIMEOUT, Duration::from_millis(50), || async {
        client.authenticate(&client.address()).await.ok()?;
        oracle.roster().await.ok()?.is_enrolled(&client.address()).then_some(())
    })
    .await;
    if enrolled.is_none() {
        return Err(ApiError::unavailable("client enrollment timed out"));
    }
    match client.register(CLIENT_VID, EntityRole::Client).await {
        Ok(_) => {}
        Err(e) if e.status == axum::http::StatusCode::CONFLICT => {}
        Err(e) => return Err(e),
    }
    let now = now_secs();
    // The service roster may trail the oracle by one push; retry briefly.
    let mut attempt = 0;
    let token = loop {
        match client
            .request_token(
                client.address(),
                QUERY_RESOURCE,
                BTreeSet::from([Action::Get]),
                now.saturating_sub(60),
                now + TOKEN_WINDOW_SECS,
            )
            .await
        {
            Ok(t) => break t,
            Err(e) if attempt < 20 && e.status == axum::http::StatusCode::FORBIDDEN && e.reason.contains("identity") => {
                attempt += 1;
                tokio::time::sleep(Duration::from_millis(100)).await;
            }
            Err(e) => return Err(e),
        }
    };
    let camera = Account::generate();
    let recs = synthetic_records(seed, records, camera.address(), now);
    let ingest = &client;
    stream::iter(recs.iter().map(|r| async move { ingest.ingest(r).await }))
        .buffer_unordered(16)
        .try_collect::<Vec<_>>()
        .await?;
    Ok(Workload {
        client,
        token,
        records: recs,
    })
}

/// On-disk form of a [`Workload`], so later CLI invocations can reuse it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadFile {
    pub client_key: String,
    pub token: TokenReply,
    pub records: Vec<FeatureRecord>,
}

impl WorkloadFile {
    pub fn from_workload(w: &Workload) -> Self {
        Self {
            client_key: w.client.account.secret_hex(),
            token: w.token.clone(),
            records: w.records.clone(),
        }
    }

    pub fn into_workload(self, endpoints: &Endpoints) -> Result<Workload> {
        let account = Account::from_secret_hex(&self.client_key).context("client key")?;
        Ok(Workload {
            client: ClientSession::new(account, endpoints.services.clone()),
            token: self.token,
            records: self.records,
        })
    }
}
