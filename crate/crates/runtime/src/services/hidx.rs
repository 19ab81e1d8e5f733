//! Hashed-index recording and integrity verification.

use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use blendmas_core::contracts::{ContractKind, FN_RECORD};
use blendmas_core::crypto::{sha256, Account, Address, Hash};
use blendmas_core::security::{
    EntityRole, FeatureRecord, StageTimer, StageTimings, STAGE_EXTRACT_HASH, STAGE_QUERY_HASHED_INDEX, STAGE_VERIFY_HASH,
};
use serde::{Deserialize, Serialize};

use super::{register_and_grant, Link, Management, Readiness, Registration, Shared};
use crate::chain_client::TxSender;
use crate::http::{ok, post_json, ApiError, ApiResult};

pub const HIDX_VID: &str = "svc-hashed-index";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordBody {
    pub record: FeatureRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordReply {
    pub key: String,
    pub value_hash: Hash,
    pub height: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyBody {
    pub key: String,
    /// Stored payload bytes, hex-encoded.
    pub payload_hex: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mismatch {
    NoRecord,
    HashMismatch,
}

impl Mismatch {
    pub fn as_str(self) -> &'static str {
        match self {
            Mismatch::NoRecord => "no_record",
            Mismatch::HashMismatch => "hash_mismatch",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReply {
    #[serde(rename = "match")]
    pub matched: bool,
    #[serde(default)]
    pub mismatch: Option<Mismatch>,
    pub stage_timings: StageTimings,
}

pub struct HashedIndex {
    shared: Arc<Shared>,
    account: Account,
    sender: TxSender,
    registration: Link<Registration>,
    management: Link<Management>,
    contract: RwLock<Option<Address>>,
    pub ready: Readiness,
}

impl HashedIndex {
    pub fn new(shared: Arc<Shared>, account: Account, registration: Link<Registration>, management: Link<Management>) -> Self {
        let sender = TxSender::new(account.clone(), shared.chain.clone());
        Self {
            shared,
            account,
            sender,
            registration,
            management,
            contract: RwLock::new(None),
            ready: Readiness::default(),
        }
    }

    pub fn address(&self) -> Address {
        self.account.address()
    }

    pub async fn bootstrap(&self) {
        let grant = register_and_grant(
            &self.account,
            &self.registration,
            &self.management,
            HIDX_VID,
            EntityRole::EdgeService,
            ContractKind::HashedIndex,
        )
        .await;
        *self.contract.write().expect("lock") = Some(grant.contract_address);
        self.ready.set();
    }

    fn contract(&self) -> Result<Address, ApiError> {
        self.contract
            .read()
            .expect("lock")
            .ok_or_else(|| ApiError::unavailable("hashed index contract unknown"))
    }

    /// Records the content hash of `record` under its index key. Keys are
    /// write-once.
    pub async fn record(&self, record: &FeatureRecord) -> Result<RecordReply, ApiError> {
        self.ready.require()?;
        let contract = self.contract()?;
        let key = record.index_key();
        let value_hash = record.content_hash();
        if self.shared.chain.query_hash(&contract, &key).await?.is_some() {
            return Err(ApiError::conflict(format!("key {key} is already recorded")));
        }
        let (_, height) = self
            .sender
            .send_and_wait(
                contract,
                FN_RECORD,
                vec![key.as_bytes().to_vec(), value_hash.0.to_vec()],
                self.shared.chain_timeout,
            )
            .await
            .map_err(|e| {
                if e.reason.contains("immutable") {
                    ApiError::new(StatusCode::CONFLICT, e.reason)
                } else if e.reason.contains("not an authorized writer") {
                    ApiError::new(StatusCode::FORBIDDEN, e.reason)
                } else {
                    e
                }
            })?;
        Ok(RecordReply { key, value_hash, height })
    }

    pub async fn verify(&self, key: &str, payload: &[u8]) -> Result<VerifyReply, ApiError> {
        self.ready.require()?;
        let contract = self.contract()?;
        let mut timer = StageTimer::new(self.shared.throttle());
        let started = timer.start();
        let stored = self.shared.chain.query_hash(&contract, key).await?;
        timer.finish(STAGE_QUERY_HASHED_INDEX, started);
        let Some(stored) = stored else {
            return Ok(VerifyReply {
                matched: false,
                mismatch: Some(Mismatch::NoRecord),
                stage_timings: timer.into_timings(),
            });
        };
        let computed = timer.time(STAGE_EXTRACT_HASH, || sha256(payload));
        let matched = timer.time(STAGE_VERIFY_HASH, || computed == stored);
        Ok(VerifyReply {
            matched,
            mismatch: (!matched).then_some(Mismatch::HashMismatch),
            stage_timings: timer.into_timings(),
        })
    }
}

impl Link<HashedIndex> {
    pub async fn record(&self, record: &FeatureRecord) -> Result<RecordReply, ApiError> {
        match self {
            Link::Local(s) => s.record(record).await,
            Link::Remote { base, http } => {
                post_json(http, &format!("{base}/hidx/record"), &RecordBody { record: record.clone() }).await
            }
        }
    }

    pub async fn verify(&self, key: &str, payload: &[u8]) -> Result<VerifyReply, ApiError> {
        match self {
            Link::Local(s) => s.verify(key, payload).await,
            Link::Remote { base, http } => {
                let body = VerifyBody {
                    key: key.to_string(),
                    payload_hex: hex::encode(payload),
                };
                post_json(http, &format!("{base}/hidx/verify"), &body).await
            }
        }
    }
}

pub fn routes(svc: Arc<HashedIndex>) -> Router {
    Router::new()
        .route("/hidx/record", post(record))
        .route("/hidx/verify", post(verify))
        .with_state(svc)
}

async fn record(State(s): State<Arc<HashedIndex>>, Json(body): Json<RecordBody>) -> ApiResult {
    ok(s.record(&body.record).await?)
}

async fn verify(State(s): State<Arc<HashedIndex>>, Json(body): Json<VerifyBody>) -> ApiResult {
    let payload = hex::decode(&body.payload_hex).map_err(|e| ApiError::bad_request(format!("payload_hex: {e}")))?;
    ok(s.verify(&body.key, &payload).await?)
}
