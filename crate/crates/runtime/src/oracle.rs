//! Oracle HTTP service: join workflow, admin actions and roster distribution.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use blendmas_core::codec::Encode;
use blendmas_core::crypto::{Account, Address, PublicKey, Signature};
use blendmas_core::ledger::GenesisConfig;
use blendmas_core::membership::{
    IdentityPolicy, JoinCandidate, JoinOutcome, MembershipError, Oracle, OracleState, PendingJoin, Role,
    StaticNodesFile,
};
use blendmas_core::wire::{Payload, WireMessage};
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tracing::{info, warn};

use crate::config::OracleConfig;
use crate::http::{self, ok, ApiError, ApiResult};
use crate::p2p;
use crate::util::{http_client, load_or_create_account, now_ms, now_secs, read_json, write_atomic, write_json};

pub const PUSH_ATTEMPTS: u32 = 3;
const PUSH_BACKOFF: Duration = Duration::from_millis(100);
const PUSH_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub epoch: u64,
    pub delivered: Vec<Address>,
    pub failed: Vec<Address>,
    pub skipped: Vec<Address>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinTicket {
    pub id: u64,
    pub challenge: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProofBody {
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinState {
    Approved,
    AwaitingAdmin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinReply {
    pub status: JoinState,
    #[serde(default)]
    pub delivery: Option<Delivery>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevokeBody {
    pub address: Address,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AddressBody {
    pub address: Address,
}

struct OracleServer {
    oracle: Mutex<Oracle>,
    account: Account,
    genesis: GenesisConfig,
    data_dir: PathBuf,
    http: reqwest::Client,
}

pub struct OracleHandle {
    pub addr: SocketAddr,
    pub public_key: PublicKey,
    pub genesis: GenesisConfig,
    task: tokio::task::JoinHandle<()>,
}

impl OracleHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for OracleHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

fn membership_error(e: MembershipError) -> ApiError {
    let reason = e.to_string();
    match e {
        MembershipError::AlreadyEnrolled(_) | MembershipError::Conflict(_) => ApiError::conflict(reason),
        MembershipError::Banned(_) | MembershipError::AuthenticationFailed => ApiError::forbidden(reason),
        MembershipError::NotFound(_) => ApiError::not_found(reason),
        MembershipError::InvalidCandidate(_) => ApiError::bad_request(reason),
    }
}

impl OracleServer {
    fn persist(&self, oracle: &Oracle) -> Result<()> {
        write_json(&self.data_dir.join("oracle-state.json"), oracle.state())?;
        let roster = oracle.roster();
        write_atomic(&self.data_dir.join("static-nodes.bin"), &roster.to_canonical_bytes())?;
        write_atomic(&self.data_dir.join("static-nodes.json"), roster.to_json_pretty().as_bytes())
    }

    async fn push_one(&self, file: &StaticNodesFile, host: &str, port: u16, role: Role) -> Result<()> {
        match role {
            Role::Miner => {
                let msg = WireMessage::sign(&self.account, &Payload::Roster(file.clone()));
                let reply = p2p::request(&p2p::endpoint(host, port)?, &msg, PUSH_TIMEOUT).await?;
                match reply.payload()? {
                    Payload::RosterAck { epoch } if epoch >= file.epoch => Ok(()),
                    other => anyhow::bail!("unexpected reply {:?}", other.message_type()),
                }
            }
            Role::Service => {
                let url = format!("http://{host}:{port}/admin/roster");
                http::post_json::<_, serde_json::Value>(&self.http, &url, file).await?;
                Ok(())
            }
            Role::Client => Ok(()),
        }
    }

    /// Pushes `file` to every miner (wire) and service (HTTP) listed in it.
    async fn distribute(&self, file: StaticNodesFile) -> Delivery {
        let mut delivery = Delivery {
            epoch: file.epoch,
            ..Delivery::default()
        };
        let targets: Vec<_> = file
            .records
            .iter()
            .filter(|r| {
                let push = r.role != Role::Client && r.port != 0;
                if !push {
                    delivery.skipped.push(r.address);
                }
                push
            })
            .cloned()
            .collect();
        let results = join_all(targets.iter().map(|r| async {
            for attempt in 0..PUSH_ATTEMPTS {
                match self.push_one(&file, &r.host, r.port, r.role).await {
                    Ok(()) => return true,
                    Err(e) => {
                        warn!("roster push to {} failed (attempt {}): {e:#}", r.address, attempt + 1);
                        tokio::time::sleep(PUSH_BACKOFF * 2u32.pow(attempt)).await;
                    }
                }
            }
            false
        }))
        .await;
        for (r, delivered) in targets.iter().zip(results) {
            if delivered {
                delivery.delivered.push(r.address);
            } else {
                delivery.failed.push(r.address);
            }
        }
        delivery
    }

    async fn publish(&self, oracle: &Oracle, file: StaticNodesFile) -> Result<Delivery, ApiError> {
        self.persist(oracle).map_err(ApiError::from)?;
        info!("roster epoch {} published with {} records", file.epoch, file.records.len());
        Ok(self.distribute(file).await)
    }
}

pub async fn start_oracle(config: OracleConfig) -> Result<OracleHandle> {
    std::fs::create_dir_all(&config.data_dir)?;
    let account = load_or_create_account(&config.data_dir.join("oracle.key"))?;
    let policy = match &config.identity_policy {
        Some(path) => read_json(path).context("loading identity policy")?,
        None => IdentityPolicy::default(),
    };
    let state_path = config.data_dir.join("oracle-state.json");
    let oracle = if state_path.exists() {
        let state: OracleState = read_json(&state_path)?;
        Oracle::restore(account.clone(), policy, state)
    } else {
        Oracle::new(account.clone(), policy)
    };
    let genesis_path = config.data_dir.join("genesis.json");
    let genesis: GenesisConfig = if genesis_path.exists() {
        read_json(&genesis_path)?
    } else {
        let g = GenesisConfig {
            oracle_public_key: account.public_key(),
            timestamp_ms: now_ms(),
        };
        write_json(&genesis_path, &g)?;
        g
    };
    let server = Arc::new(OracleServer {
        oracle: Mutex::new(oracle),
        account: account.clone(),
        genesis: genesis.clone(),
        data_dir: config.data_dir.clone(),
        http: http_client(),
    });
    server.persist(&*server.oracle.lock().await)?;

    let router = Router::new()
        .route("/health", get(|| async { http::ok_empty() }))
        .route("/genesis", get(genesis_handler))
        .route("/join", post(join_handler))
        .route("/join/{id}/proof", post(proof_handler))
        .route("/pending", get(pending_handler))
        .route("/admin/approve/{id}", post(approve_handler))
        .route("/admin/revoke", post(revoke_handler))
        .route("/admin/clear-ban", post(clear_ban_handler))
        .route("/roster", get(roster_handler))
        .route("/roster/history", get(history_handler))
        .with_state(server);
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port)).await?;
    let addr = listener.local_addr()?;
    info!("oracle {} listening on {addr}", account.address());
    let task = tokio::spawn(async move {
        if let Err(e) = http::serve(listener, router).await {
            warn!("oracle server stopped: {e:#}");
        }
    });
    Ok(OracleHandle {
        addr,
        public_key: account.public_key(),
        genesis,
        task,
    })
}

type S = State<Arc<OracleServer>>;

async fn genesis_handler(State(s): S) -> ApiResult {
    ok(&s.genesis)
}

async fn join_handler(State(s): S, Json(candidate): Json<JoinCandidate>) -> ApiResult {
    let mut oracle = s.oracle.lock().await;
    let (id, challenge) = oracle.request_join(candidate).map_err(membership_error)?;
    s.persist(&oracle)?;
    ok(JoinTicket {
        id,
        challenge: hex::encode(challenge),
    })
}

async fn proof_handler(State(s): S, Path(id): Path<u64>, Json(body): Json<ProofBody>) -> ApiResult {
    let mut oracle = s.oracle.lock().await;
    let outcome = oracle.approve_join(id, body.signature, now_secs()).map_err(membership_error)?;
    match outcome {
        JoinOutcome::Approved(file) => {
            let delivery = s.publish(&oracle, file).await?;
            ok(JoinReply {
                status: JoinState::Approved,
                delivery: Some(delivery),
            })
        }
        JoinOutcome::AwaitingAdmin => {
            s.persist(&oracle)?;
            ok(JoinReply {
                status: JoinState::AwaitingAdmin,
                delivery: None,
            })
        }
    }
}

async fn pending_handler(State(s): S) -> Result<Json<Vec<PendingJoin>>, ApiError> {
    Ok(Json(s.oracle.lock().await.pending().cloned().collect()))
}

async fn approve_handler(State(s): S, Path(id): Path<u64>) -> ApiResult {
    let mut oracle = s.oracle.lock().await;
    let file = oracle.admin_confirm(id, now_secs()).map_err(membership_error)?;
    ok(s.publish(&oracle, file).await?)
}

async fn revoke_handler(State(s): S, Json(body): Json<RevokeBody>) -> ApiResult {
    let mut oracle = s.oracle.lock().await;
    let file = oracle
        .revoke_member(&body.address, &body.reason, now_ms())
        .map_err(membership_error)?;
    ok(s.publish(&oracle, file).await?)
}

async fn clear_ban_handler(State(s): S, Json(body): Json<AddressBody>) -> ApiResult {
    let mut oracle = s.oracle.lock().await;
    let file = oracle.clear_ban(&body.address).map_err(membership_error)?;
    ok(s.publish(&oracle, file).await?)
}

async fn roster_handler(State(s): S) -> Json<StaticNodesFile> {
    Json(s.oracle.lock().await.roster().clone())
}

async fn history_handler(State(s): S) -> Json<Vec<StaticNodesFile>> {
    Json(s.oracle.lock().await.history().to_vec())
}

/// HTTP client for the oracle API.
#[derive(Debug, Clone)]
pub struct OracleClient {
    base: String,
    http: reqwest::Client,
}

impl OracleClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: http_client(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn genesis(&self) -> Result<GenesisConfig, ApiError> {
        http::get_json(&self.http, &self.url("/genesis")).await
    }

    pub async fn roster(&self) -> Result<StaticNodesFile, ApiError> {
        let resp = self
            .http
            .get(self.url("/roster"))
            .send()
            .await
            .map_err(|e| ApiError::unavailable(e.to_string()))?;
        resp.json().await.map_err(|e| ApiError::unavailable(e.to_string()))
    }

    pub async fn history(&self) -> Result<Vec<StaticNodesFile>, ApiError> {
        let resp = self
            .http
            .get(self.url("/roster/history"))
            .send()
            .await
            .map_err(|e| ApiError::unavailable(e.to_string()))?;
        resp.json().await.map_err(|e| ApiError::unavailable(e.to_string()))
    }

    pub async fn pending(&self) -> Result<Vec<PendingJoin>, ApiError> {
        let resp = self
            .http
            .get(self.url("/pending"))
            .send()
            .await
            .map_err(|e| ApiError::unavailable(e.to_string()))?;
        resp.json().await.map_err(|e| ApiError::unavailable(e.to_string()))
    }

    /// Runs the request/challenge/proof exchange for `account`.
    pub async fn join(&self, account: &Account, host: &str, port: u16, role: Role) -> Result<JoinReply, ApiError> {
        let candidate = JoinCandidate::for_account(account, host, port, role);
        let ticket: JoinTicket = http::post_json(&self.http, &self.url("/join"), &candidate).await?;
        let challenge: [u8; 16] = hex::decode(&ticket.challenge)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| ApiError::bad_request("malformed challenge"))?;
        let request = blendmas_core::membership::JoinRequest::sign(account, candidate, &challenge);
        let body = ProofBody {
            signature: request.proof,
        };
        http::post_json(&self.http, &self.url(&format!("/join/{}/proof", ticket.id)), &body).await
    }

    pub async fn approve(&self, id: u64) -> Result<Delivery, ApiError> {
        http::post_json(&self.http, &self.url(&format!("/admin/approve/{id}")), &serde_json::json!({})).await
    }

    pub async fn revoke(&self, address: Address, reason: &str) -> Result<Delivery, ApiError> {
        let body = RevokeBody {
            address,
            reason: reason.to_string(),
        };
        http::post_json(&self.http, &self.url("/admin/revoke"), &body).await
    }

    pub async fn clear_ban(&self, address: Address) -> Result<Delivery, ApiError> {
        http::post_json(&self.http, &self.url("/admin/clear-ban"), &AddressBody { address }).await
    }

    /// Approves every pending request from an address in `wanted`; returns how many were approved.
    pub async fn approve_pending(&self, wanted: &[Address]) -> Result<usize, ApiError> {
        let mut approved = 0;
        for p in self.pending().await? {
            if wanted.contains(&p.candidate.address) && p.status == blendmas_core::membership::PendingStatus::AwaitingAdmin {
                self.approve(p.id).await?;
                approved += 1;
            }
        }
        Ok(approved)
    }
}
