//! A miner: chain view, mempool, roster, the proposal loop and the wire handler.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use anyhow::{Context, Result};
use blendmas_core::codec::{Decode, Decoder, Encode};
use blendmas_core::consensus::{
    propose_block, verify_block_consensus, ChainView, ConsensusParams, InsertOutcome, FINALITY_DEPTH,
};
use blendmas_core::crypto::{Account, Address, Hash, PublicKey};
use blendmas_core::ledger::{Block, GenesisConfig, Transaction};
use blendmas_core::membership::{LocalRoster, Role, RosterError, StaticNodesFile};
use blendmas_core::wire::{Payload, MAX_BLOCKS_PER_REPLY};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use crate::config::NodeConfig;
use crate::mempool::{AdmitError, Mempool};
use crate::oracle::{JoinState, OracleClient};
use crate::p2p::{Inbound, KeyResolver, P2p, ReplyHandle};
use crate::util::{load_or_create_account, now_ms, write_atomic};

/// Blocks further than this into the future are refused.
pub const MAX_CLOCK_DRIFT_MS: u64 = 5_000;
/// How far below the local head a sync request starts, to cover short forks.
pub const SYNC_BACKTRACK: u64 = 32;
const REJECTED_KEPT: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedBlock {
    pub hash: Hash,
    pub height: u64,
    pub proposer: Address,
    pub epoch: u64,
    pub reason: String,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadInfo {
    pub height: u64,
    pub hash: Hash,
    pub state_root: Hash,
    pub epoch: u64,
    pub proposer: Address,
    pub timestamp_ms: u64,
    pub finalized_height: u64,
}

pub(crate) struct NodeState {
    pub chain: ChainView,
    pub mempool: Mempool,
    pub roster: LocalRoster,
    pub rosters: BTreeMap<u64, StaticNodesFile>,
    pub rejected: VecDeque<RejectedBlock>,
}

pub struct Node {
    pub(crate) account: Account,
    pub(crate) params: ConsensusParams,
    pub(crate) genesis: GenesisConfig,
    pub(crate) state: Mutex<NodeState>,
    pub(crate) p2p: P2p,
    keys: Arc<RwLock<HashMap<Address, PublicKey>>>,
    pub(crate) head_tx: watch::Sender<u64>,
    oracle: OracleClient,
    data_dir: PathBuf,
    mine: bool,
    host: String,
}

/// Result of offering a block to the node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockVerdict {
    Known,
    Orphan,
    Accepted { head_changed: bool },
    Rejected(String),
}

impl Node {
    pub fn genesis(&self) -> &GenesisConfig {
        &self.genesis
    }

    pub fn address(&self) -> Address {
        self.account.address()
    }

    pub fn head(&self) -> HeadInfo {
        let st = self.state.lock().expect("lock");
        head_info(&st.chain)
    }

    pub fn p2p(&self) -> &P2p {
        &self.p2p
    }

    fn blocks_path(&self) -> PathBuf {
        self.data_dir.join("blocks.log")
    }

    fn append_blocks(&self, blocks: &[&Block]) {
        let write = || -> Result<()> {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.blocks_path())?;
            for b in blocks {
                let bytes = b.to_canonical_bytes();
                f.write_all(&(bytes.len() as u32).to_be_bytes())?;
                f.write_all(&bytes)?;
            }
            Ok(())
        };
        if let Err(e) = write() {
            warn!("persisting blocks failed: {e:#}");
        }
    }

    fn persist_rosters(&self, st: &NodeState) {
        let files: Vec<StaticNodesFile> = st.rosters.values().cloned().collect();
        let mut enc = blendmas_core::codec::Encoder::new();
        enc.list(&files);
        let _ = write_atomic(&self.data_dir.join("roster-history.bin"), &enc.finish());
        if let Some(current) = st.roster.current() {
            let _ = write_atomic(&self.data_dir.join("static-nodes.bin"), &current.to_canonical_bytes());
            let _ = write_atomic(&self.data_dir.join("static-nodes.json"), current.to_json_pretty().as_bytes());
        }
    }

    fn learn_keys(&self, file: &StaticNodesFile) {
        let mut keys = self.keys.write().expect("lock");
        for r in &file.records {
            keys.insert(r.address, r.public_key);
        }
    }

    fn refresh_peers(&self, st: &NodeState) {
        if let Some(current) = st.roster.current() {
            self.p2p.set_peers(
                current
                    .records_with_role(Role::Miner)
                    .map(|r| (r.address, format!("{}:{}", r.host, r.port))),
            );
        }
    }

    /// Installs a newer signed roster. Older signed rosters still extend the
    /// validator history used to judge old blocks.
    pub fn install_roster(self: &Arc<Self>, file: StaticNodesFile) -> Result<bool, RosterError> {
        let mut st = self.state.lock().expect("lock");
        let local = st.roster.epoch();
        match st.roster.install(file.clone()) {
            Ok(()) => {
                self.learn_keys(&file);
                st.rosters.insert(file.epoch, file.clone());
                let head = st.chain.head().state.clone();
                let roster = st.roster.clone();
                st.mempool.rebase(&head, Vec::new(), &roster);
                self.refresh_peers(&st);
                self.persist_rosters(&st);
                info!(
                    "{} installed roster epoch {} ({} miners)",
                    self.address(),
                    file.epoch,
                    file.validator_set().len()
                );
                let gap = local.is_some_and(|l| file.epoch > l + 1);
                drop(st);
                if gap {
                    // An epoch was skipped; fetch the full history for block validation.
                    self.spawn_history_refresh();
                }
                Ok(true)
            }
            Err(RosterError::Stale { .. }) => {
                if !st.rosters.contains_key(&file.epoch) && st.roster.learn_history(&file).is_ok() {
                    self.learn_keys(&file);
                    st.rosters.insert(file.epoch, file);
                    self.persist_rosters(&st);
                }
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn spawn_history_refresh(self: &Arc<Self>) {
        let node = self.clone();
        tokio::spawn(async move {
            if let Ok(history) = node.oracle.history().await {
                for file in history {
                    let _ = node.install_roster(file);
                }
            }
        });
    }

    /// Validates and stores a block. Accepted blocks update the mempool and
    /// wake inclusion waiters.
    pub fn offer_block(self: &Arc<Self>, block: Block) -> BlockVerdict {
        let mut st = self.state.lock().expect("lock");
        if block.header.timestamp_ms > now_ms() + MAX_CLOCK_DRIFT_MS {
            return self.reject(&mut st, &block, "timestamp too far in the future".into());
        }
        let history = st.roster.validators().clone();
        let params = self.params;
        let check = |parent: &_, header: &_| verify_block_consensus(header, parent, &history, &params);
        match st.chain.insert(block.clone(), check) {
            Ok(InsertOutcome::Known) => BlockVerdict::Known,
            Ok(InsertOutcome::Orphan { .. }) => BlockVerdict::Orphan,
            Ok(InsertOutcome::Added {
                added,
                head_changed,
                reorg,
            }) => {
                let stored: Vec<Block> = added.iter().filter_map(|h| st.chain.get(h)).map(|e| e.block.clone()).collect();
                self.append_blocks(&stored.iter().collect::<Vec<_>>());
                if head_changed {
                    let head = st.chain.head().state.clone();
                    let roster = st.roster.clone();
                    let returning = reorg
                        .as_ref()
                        .map(|r| {
                            info!(
                                "{} reorg: {} abandoned, {} adopted transactions",
                                self.address(),
                                r.abandoned.len(),
                                r.adopted.len()
                            );
                            r.abandoned.clone()
                        })
                        .unwrap_or_default();
                    st.mempool.rebase(&head, returning, &roster);
                    let height = st.chain.head_height();
                    drop(st);
                    self.head_tx.send_modify(|v| *v = v.wrapping_add(1));
                    debug!("{} head -> {height}", self.address());
                }
                BlockVerdict::Accepted { head_changed }
            }
            Err(e) => {
                if matches!(e, blendmas_core::consensus::ChainError::Consensus(
                    blendmas_core::consensus::ConsensusViolation::UnknownEpoch(_)
                )) {
                    self.spawn_history_refresh();
                }
                self.reject(&mut st, &block, e.to_string())
            }
        }
    }

    fn reject(&self, st: &mut NodeState, block: &Block, reason: String) -> BlockVerdict {
        debug!("{} rejected block {} from {}: {reason}", self.address(), block.height(), block.header.proposer);
        if st.rejected.len() >= REJECTED_KEPT {
            st.rejected.pop_front();
        }
        st.rejected.push_back(RejectedBlock {
            hash: block.hash(),
            height: block.height(),
            proposer: block.header.proposer,
            epoch: block.header.epoch,
            reason: reason.clone(),
            at_ms: now_ms(),
        });
        BlockVerdict::Rejected(reason)
    }

    pub fn submit_transaction(&self, tx: Transaction) -> Result<Hash, AdmitError> {
        let hash = tx.hash();
        let fresh = {
            let mut st = self.state.lock().expect("lock");
            if st.chain.inclusion_height(&hash).is_some() {
                return Ok(hash);
            }
            let roster = st.roster.clone();
            st.mempool.admit(tx.clone(), &roster)?
        };
        if fresh {
            self.p2p.broadcast(&self.p2p.sign(&Payload::Tx(tx)));
        }
        Ok(hash)
    }

    fn sync_request(self: &Arc<Self>, reply: &ReplyHandle) {
        let from = {
            let st = self.state.lock().expect("lock");
            st.chain.head_height().saturating_sub(SYNC_BACKTRACK)
        };
        reply.send(self.p2p.sign(&Payload::GetBlocks {
            from_height: from,
            limit: MAX_BLOCKS_PER_REPLY,
        }));
    }

    fn handle_inbound(self: &Arc<Self>, inbound: Inbound) {
        let Inbound {
            message,
            payload,
            reply,
        } = inbound;
        match payload {
            Payload::Tx(tx) => {
                let fresh = {
                    let mut st = self.state.lock().expect("lock");
                    let roster = st.roster.clone();
                    st.mempool.admit(tx, &roster)
                };
                if matches!(fresh, Ok(true)) {
                    self.p2p.broadcast(&message);
                }
            }
            Payload::Block(block) => match self.offer_block(block) {
                BlockVerdict::Accepted { .. } => self.p2p.broadcast(&message),
                BlockVerdict::Orphan => self.sync_request(&reply),
                _ => {}
            },
            Payload::GetBlocks { from_height, limit } => {
                let blocks = {
                    let st = self.state.lock().expect("lock");
                    st.chain.blocks_after(from_height, limit.min(MAX_BLOCKS_PER_REPLY) as usize)
                };
                reply.send(self.p2p.sign(&Payload::Blocks(blocks)));
            }
            Payload::Blocks(blocks) => {
                let full = blocks.len() as u32 == MAX_BLOCKS_PER_REPLY;
                let mut missing_parent = false;
                for b in blocks {
                    if self.offer_block(b) == BlockVerdict::Orphan {
                        missing_parent = true;
                    }
                }
                if full || missing_parent {
                    // Keep pulling; full replies often mean more blocks follow.
                    let from = self.head().height;
                    let from = if missing_parent { from.saturating_sub(SYNC_BACKTRACK) } else { from };
                    reply.send(self.p2p.sign(&Payload::GetBlocks {
                        from_height: from,
                        limit: MAX_BLOCKS_PER_REPLY,
                    }));
                }
            }
            Payload::Roster(file) => {
                // Authenticity comes from the oracle signature inside the file.
                let outcome = self.install_roster(file);
                let epoch = self.state.lock().expect("lock").roster.epoch().unwrap_or(0);
                reply.send(self.p2p.sign(&Payload::RosterAck { epoch }));
                if matches!(outcome, Ok(true)) {
                    self.p2p.broadcast(&message);
                }
            }
            Payload::RosterAck { .. } | Payload::Ping { .. } | Payload::Pong { .. } => {}
        }
    }

    fn try_propose(&self) -> Option<Block> {
        let st = self.state.lock().expect("lock");
        let validators = st.roster.current_validators();
        if !validators.contains(&self.address()) {
            return None;
        }
        let mempool = st.mempool.transactions();
        propose_block(&st.chain, &mempool, &self.account, &validators, &self.params, now_ms()).ok()
    }

    async fn mine_loop(self: Arc<Self>) {
        let tick = Duration::from_millis((self.params.block_interval_ms / 20).clamp(5, 50));
        loop {
            tokio::time::sleep(tick).await;
            if let Some(block) = self.try_propose() {
                let height = block.height();
                if let BlockVerdict::Accepted { .. } = self.offer_block(block.clone()) {
                    debug!("{} sealed block {height}", self.address());
                    self.p2p.broadcast(&self.p2p.sign(&Payload::Block(block)));
                }
            }
        }
    }

    async fn enroll(self: Arc<Self>) {
        loop {
            let enrolled = {
                let st = self.state.lock().expect("lock");
                st.roster.is_enrolled(&self.address())
            };
            if enrolled {
                return;
            }
            match self.oracle.history().await {
                Ok(history) => {
                    for f in history {
                        let _ = self.install_roster(f);
                    }
                }
                Err(e) => {
                    debug!("oracle unavailable: {e}");
                    tokio::time::sleep(Duration::from_millis(200)).await;
                    continue;
                }
            }
            if self.state.lock().expect("lock").roster.is_enrolled(&self.address()) {
                return;
            }
            let port = self.p2p.local_addr().port();
            match self.oracle.join(&self.account, &self.host, port, Role::Miner).await {
                Ok(reply) if reply.status == JoinState::AwaitingAdmin => {
                    info!("{} awaiting admin approval", self.address());
                }
                Ok(_) => {}
                Err(e) if e.status == axum::http::StatusCode::CONFLICT => {}
                Err(e) => warn!("{} join failed: {e}", self.address()),
            }
            // Approval arrives as a roster push; poll the oracle as a fallback.
            for _ in 0..50 {
                tokio::time::sleep(Duration::from_millis(100)).await;
                if self.state.lock().expect("lock").roster.is_enrolled(&self.address()) {
                    return;
                }
            }
        }
    }
}

pub fn head_info(chain: &ChainView) -> HeadInfo {
    let head = chain.head();
    let h = &head.block.header;
    HeadInfo {
        height: h.height,
        hash: head.block.hash(),
        state_root: h.state_root,
        epoch: h.epoch,
        proposer: h.proposer,
        timestamp_ms: h.timestamp_ms,
        finalized_height: h.height.saturating_sub(FINALITY_DEPTH),
    }
}

fn load_blocks(path: &std::path::Path) -> Vec<Block> {
    let Ok(bytes) = std::fs::read(path) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut rest = bytes.as_slice();
    while rest.len() >= 4 {
        let len = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        if rest.len() < 4 + len {
            break;
        }
        let mut dec = Decoder::new(&rest[4..4 + len]);
        match Block::decode(&mut dec) {
            Ok(b) => out.push(b),
            Err(_) => break,
        }
        rest = &rest[4 + len..];
    }
    out
}

fn load_rosters(path: &std::path::Path) -> Vec<StaticNodesFile> {
    std::fs::read(path)
        .ok()
        .and_then(|b| {
            let mut dec = Decoder::new(&b);
            dec.list::<StaticNodesFile>().ok()
        })
        .unwrap_or_default()
}

pub struct NodeHandle {
    pub node: Arc<Node>,
    pub rpc_addr: SocketAddr,
    tasks: Vec<JoinHandle<()>>,
}

impl NodeHandle {
    pub fn address(&self) -> Address {
        self.node.address()
    }

    pub fn rpc_url(&self) -> String {
        format!("http://{}", self.rpc_addr)
    }

    pub fn p2p_addr(&self) -> SocketAddr {
        self.node.p2p.local_addr()
    }

    pub fn shutdown(&mut self) {
        for t in self.tasks.drain(..) {
            t.abort();
        }
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub async fn start_node(config: NodeConfig) -> Result<NodeHandle> {
    std::fs::create_dir_all(&config.data_dir)?;
    if config.role != Role::Miner {
        anyhow::bail!("full nodes run as miners; {} accounts use the service APIs", config.role);
    }
    let account = load_or_create_account(&config.key_path())?;
    if let Some(expected) = config.address {
        if expected != account.address() {
            anyhow::bail!("key file holds {}, config expects {expected}", account.address());
        }
    }
    let oracle = OracleClient::new(config.oracle_url.clone());
    let genesis = match config.genesis.clone() {
        Some(g) => g,
        None => {
            let mut attempt = 0;
            loop {
                match oracle.genesis().await {
                    Ok(g) => break g,
                    Err(e) if attempt < 100 => {
                        attempt += 1;
                        debug!("waiting for oracle genesis: {e}");
                        tokio::time::sleep(Duration::from_millis(100)).await;
                    }
                    Err(e) => return Err(e).context("fetching genesis from the oracle"),
                }
            }
        }
    };
    let params = ConsensusParams {
        block_interval_ms: config.block_interval_ms,
    };
    let oracle_address = genesis.oracle_public_key.address();
    let keys = Arc::new(RwLock::new(HashMap::from([(oracle_address, genesis.oracle_public_key)])));
    let resolver_keys = keys.clone();
    let resolver: KeyResolver = Arc::new(move |a| resolver_keys.read().expect("lock").get(a).copied());
    let listen: SocketAddr = format!("{}:{}", config.host, config.p2p_port)
        .parse()
        .context("p2p listen address")?;
    let (p2p, mut inbound) = P2p::bind(listen, account.clone(), resolver).await?;

    let chain = ChainView::new(Block::genesis(&genesis));
    let mempool = Mempool::new(&chain.head().state);
    let (head_tx, _) = watch::channel(0u64);
    let node = Arc::new(Node {
        account,
        params,
        genesis: genesis.clone(),
        state: Mutex::new(NodeState {
            chain,
            mempool,
            roster: LocalRoster::new(genesis.oracle_public_key),
            rosters: BTreeMap::new(),
            rejected: VecDeque::new(),
        }),
        p2p,
        keys,
        head_tx,
        oracle,
        data_dir: config.data_dir.clone(),
        mine: config.mine,
        host: config.host.clone(),
    });

    for file in load_rosters(&config.data_dir.join("roster-history.bin")) {
        let _ = node.install_roster(file);
    }
    let stored = load_blocks(&node.blocks_path());
    if !stored.is_empty() {
        // Re-validate from genesis; rewrite the log with what survives.
        let _ = std::fs::remove_file(node.blocks_path());
        for b in stored {
            node.offer_block(b);
        }
        info!("{} restored chain at height {}", node.address(), node.head().height);
    }

    let rpc_listener = tokio::net::TcpListener::bind((config.host.as_str(), config.rpc_port)).await?;
    let rpc_addr = rpc_listener.local_addr()?;
    let mut tasks = Vec::new();
    let router = crate::node_rpc::router(node.clone());
    tasks.push(tokio::spawn(async move {
        if let Err(e) = crate::http::serve(rpc_listener, router).await {
            warn!("rpc server stopped: {e:#}");
        }
    }));
    let handler = node.clone();
    tasks.push(tokio::spawn(async move {
        while let Some(msg) = inbound.recv().await {
            handler.handle_inbound(msg);
        }
    }));
    tasks.push(tokio::spawn(node.clone().enroll()));
    if node.mine {
        tasks.push(tokio::spawn(node.clone().mine_loop()));
    }
    info!(
        "node {} p2p {} rpc {rpc_addr}",
        node.address(),
        node.p2p.local_addr()
    );
    Ok(NodeHandle { node, rpc_addr, tasks })
}
