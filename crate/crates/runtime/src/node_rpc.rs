//! Node JSON-RPC over HTTP.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use blendmas_core::consensus::expected_proposer;
use blendmas_core::contracts::{self, ContractKind};
use blendmas_core::crypto::{Address, Hash};
use blendmas_core::ledger::{Block, Transaction};
use blendmas_core::membership::StaticNodesFile;
use serde::{Deserialize, Serialize};

use crate::http::{ok, ApiError, ApiResult};
use crate::node::{HeadInfo, Node, RejectedBlock};

/// Upper bound on how long `GET /tx/{hash}` may block.
pub const MAX_WAIT_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Pending,
    Included,
    Unknown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TxStatusReply {
    pub status: TxStatus,
    #[serde(default)]
    pub height: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonceReply {
    pub committed: u64,
    pub pending: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRequest {
    pub contract: Address,
    pub function: String,
    /// Hex-encoded argument byte strings.
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryReply {
    pub result: String,
    pub height: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractInfo {
    pub address: Address,
    pub kind: ContractKind,
    pub owner: Address,
    pub writers: Vec<Address>,
    pub entries: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidatorsReply {
    pub epoch: u64,
    pub miners: Vec<Address>,
    /// Scheduled proposers for the next heights after the head.
    pub upcoming: Vec<Address>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionBody {
    pub blocked: Vec<Address>,
}

#[derive(Debug, Deserialize)]
struct WaitQuery {
    wait_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct BlocksQuery {
    after: Option<u64>,
    limit: Option<usize>,
}

type S = State<Arc<Node>>;

pub fn router(node: Arc<Node>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/head", get(head))
        .route("/tx", post(submit_tx))
        .route("/tx/{hash}", get(tx_status))
        .route("/nonce/{address}", get(nonce))
        .route("/query", post(query))
        .route("/contracts", get(list_contracts))
        .route("/blocks", get(blocks))
        .route("/block/{height}", get(block_at))
        .route("/roster", get(roster))
        .route("/validators", get(validators))
        .route("/mempool", get(mempool))
        .route("/rejected", get(rejected))
        .route("/peers", get(peers))
        .route("/admin/partition", post(partition))
        .with_state(node)
}

async fn health(State(node): S) -> ApiResult {
    let st = node.state.lock().expect("lock");
    ok(serde_json::json!({
        "address": node.address(),
        "height": st.chain.head_height(),
        "roster_epoch": st.roster.epoch(),
        "enrolled": st.roster.is_enrolled(&node.address()),
    }))
}

async fn head(State(node): S) -> Json<HeadInfo> {
    Json(node.head())
}

async fn submit_tx(State(node): S, Json(tx): Json<Transaction>) -> ApiResult {
    let hash = node
        .submit_transaction(tx)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    ok(serde_json::json!({ "hash": hash }))
}

fn status_of(node: &Node, hash: &Hash) -> TxStatusReply {
    let st = node.state.lock().expect("lock");
    if let Some(height) = st.chain.inclusion_height(hash) {
        TxStatusReply {
            status: TxStatus::Included,
            height: Some(height),
        }
    } else if st.mempool.contains(hash) {
        TxStatusReply {
            status: TxStatus::Pending,
            height: None,
        }
    } else {
        TxStatusReply {
            status: TxStatus::Unknown,
            height: None,
        }
    }
}

/// Long-polls until the transaction is included or `wait_ms` passes.
async fn tx_status(State(node): S, Path(hash): Path<Hash>, Query(q): Query<WaitQuery>) -> ApiResult {
    let wait = Duration::from_millis(q.wait_ms.unwrap_or(0).min(MAX_WAIT_MS));
    let mut head_rx = node.head_tx.subscribe();
    let deadline = tokio::time::Instant::now() + wait;
    loop {
        let reply = status_of(&node, &hash);
        if reply.status == TxStatus::Included || tokio::time::Instant::now() >= deadline {
            return ok(reply);
        }
        if tokio::time::timeout_at(deadline, head_rx.changed()).await.is_err() {
            return ok(status_of(&node, &hash));
        }
    }
}

async fn nonce(State(node): S, Path(address): Path<Address>) -> ApiResult {
    let st = node.state.lock().expect("lock");
    ok(NonceReply {
        committed: st.chain.head().state.nonce(&address),
        pending: st.mempool.pending_nonce(&address),
    })
}

async fn query(State(node): S, Json(req): Json<QueryRequest>) -> ApiResult {
    let args = req
        .args
        .iter()
        .map(hex::decode)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::bad_request(format!("args: {e}")))?;
    let (state, height) = {
        let st = node.state.lock().expect("lock");
        (st.chain.head().state.clone(), st.chain.head_height())
    };
    let result = contracts::query(&state.contracts, &req.contract, &req.function, &args).map_err(|e| match e {
        contracts::ContractError::NotFound(_) => ApiError::not_found(e.to_string()),
        _ => ApiError::bad_request(e.to_string()),
    })?;
    ok(QueryReply {
        result: hex::encode(result),
        height,
    })
}

async fn list_contracts(State(node): S) -> Json<Vec<ContractInfo>> {
    let state = node.state.lock().expect("lock").chain.head().state.clone();
    Json(
        state
            .contracts
            .values()
            .map(|c| ContractInfo {
                address: c.address,
                kind: c.kind,
                owner: c.owner,
                writers: c.authorized_writers.iter().copied().collect(),
                entries: c.storage.len(),
            })
            .collect(),
    )
}

async fn blocks(State(node): S, Query(q): Query<BlocksQuery>) -> Json<Vec<Block>> {
    let st = node.state.lock().expect("lock");
    let limit = q.limit.unwrap_or(usize::MAX);
    Json(match q.after {
        Some(after) => st.chain.blocks_after(after, limit),
        None => st
            .chain
            .main_chain()
            .into_iter()
            .take(limit)
            .filter_map(|h| st.chain.get(&h).map(|e| e.block.clone()))
            .collect(),
    })
}

async fn block_at(State(node): S, Path(height): Path<u64>) -> Result<Json<Block>, ApiError> {
    let st = node.state.lock().expect("lock");
    st.chain
        .block_at(height)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no block at height {height}")))
}

async fn roster(State(node): S) -> Result<Json<StaticNodesFile>, ApiError> {
    let st = node.state.lock().expect("lock");
    st.roster
        .current()
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("no roster installed"))
}

async fn validators(State(node): S) -> ApiResult {
    let st = node.state.lock().expect("lock");
    let set = st.roster.current_validators();
    let head = st.chain.head_height();
    let upcoming = if set.is_empty() {
        Vec::new()
    } else {
        (1..=8)
            .filter_map(|i| expected_proposer(head + i, &set).ok())
            .collect()
    };
    ok(ValidatorsReply {
        epoch: set.epoch,
        miners: set.addresses(),
        upcoming,
    })
}

async fn mempool(State(node): S) -> ApiResult {
    let st = node.state.lock().expect("lock");
    ok(serde_json::json!({ "transactions": st.mempool.hashes() }))
}

async fn rejected(State(node): S) -> Json<Vec<RejectedBlock>> {
    Json(node.state.lock().expect("lock").rejected.iter().cloned().collect())
}

async fn peers(State(node): S) -> ApiResult {
    ok(serde_json::json!({
        "peers": node.p2p().peers(),
        "blocked": node.p2p().blocked(),
    }))
}

/// Test hook: drop all traffic to and from the listed peers.
async fn partition(State(node): S, Json(body): Json<PartitionBody>) -> ApiResult {
    node.p2p().set_blocked(body.blocked.into_iter().collect::<HashSet<_>>());
    crate::http::ok_empty()
}
