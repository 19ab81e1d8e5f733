//! Contract deployment and writer grants.

use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use blendmas_core::contracts::{ContractKind, FN_DEPLOY, FN_GRANT_WRITER, SYSTEM_ADDRESS};
use blendmas_core::crypto::{Account, Address};
use blendmas_core::security::{AbiGrantBody, EntityRole, RegisterBody, SignedRequest};
use serde::{Deserialize, Serialize};
use tracing::info;

use super::{retry, Identity, Link, Readiness, Registration, Shared};
use crate::chain_client::TxSender;
use crate::http::{get_json, ok, post_json, ApiError, ApiResult};
use crate::util::{now_secs, read_json, write_json};

pub const MANAGEMENT_VID: &str = "svc-management";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractDirectory {
    pub capac: Address,
    pub hashed_index: Address,
}

impl ContractDirectory {
    pub fn get(&self, kind: ContractKind) -> Address {
        match kind {
            ContractKind::Capac => self.capac,
            ContractKind::HashedIndex => self.hashed_index,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrantReply {
    pub contract_address: Address,
    pub functions: Vec<String>,
    pub height: u64,
}

pub struct Management {
    shared: Arc<Shared>,
    account: Account,
    sender: TxSender,
    identity: Link<Identity>,
    registration: Link<Registration>,
    directory: RwLock<Option<ContractDirectory>>,
    pub ready: Readiness,
}

impl Management {
    pub fn new(shared: Arc<Shared>, account: Account, identity: Link<Identity>, registration: Link<Registration>) -> Self {
        let sender = TxSender::new(account.clone(), shared.chain.clone());
        Self {
            shared,
            account,
            sender,
            identity,
            registration,
            directory: RwLock::new(None),
            ready: Readiness::default(),
        }
    }

    pub fn address(&self) -> Address {
        self.account.address()
    }

    pub fn directory(&self) -> Result<ContractDirectory, ApiError> {
        self.directory
            .read()
            .expect("lock")
            .ok_or_else(|| ApiError::unavailable("contracts are not deployed yet"))
    }

    async fn deployed_on_chain(&self, dir: &ContractDirectory) -> Result<bool, ApiError> {
        let contracts = self.shared.chain.contracts().await?;
        let has = |a: Address, k: ContractKind| contracts.iter().any(|c| c.address == a && c.kind == k);
        Ok(has(dir.capac, ContractKind::Capac) && has(dir.hashed_index, ContractKind::HashedIndex))
    }

    async fn deploy(&self, kind: ContractKind) -> Result<Address, ApiError> {
        let (tx, _) = self
            .sender
            .send_and_wait(
                SYSTEM_ADDRESS,
                FN_DEPLOY,
                vec![kind.as_str().as_bytes().to_vec()],
                self.shared.chain_timeout,
            )
            .await?;
        Ok(blendmas_core::contracts::contract_address(&self.address(), tx.nonce))
    }

    /// Registers as admin, then reuses or deploys the two contracts.
    pub async fn bootstrap(&self) {
        let req = SignedRequest::sign(
            &self.account,
            now_secs(),
            RegisterBody {
                vid: MANAGEMENT_VID.into(),
                display_name: "management service".into(),
                entity_role: EntityRole::Admin,
            },
        );
        retry("registering management", || async {
            match self.registration.register(&req).await {
                Err(e) if e.status == axum::http::StatusCode::CONFLICT => Ok(()),
                r => r.map(|_| ()),
            }
        })
        .await;

        let path = self.shared.data_dir.join("contracts.json");
        let saved: Option<ContractDirectory> = read_json(&path).ok();
        let dir = retry("deploying contracts", || async {
            if let Some(d) = saved {
                if self.deployed_on_chain(&d).await? {
                    return Ok(d);
                }
            }
            let capac = self.deploy(ContractKind::Capac).await?;
            let hashed_index = self.deploy(ContractKind::HashedIndex).await?;
            Ok(ContractDirectory { capac, hashed_index })
        })
        .await;
        if let Err(e) = write_json(&path, &dir) {
            tracing::warn!("saving contract directory: {e:#}");
        }
        info!("contracts: capac {} hashed_index {}", dir.capac, dir.hashed_index);
        *self.directory.write().expect("lock") = Some(dir);
        self.ready.set();
    }

    pub async fn grant(&self, req: &SignedRequest<AbiGrantBody>, now: u64) -> Result<GrantReply, ApiError> {
        self.ready.require()?;
        req.verify(now).map_err(|e| ApiError::forbidden(e.to_string()))?;
        let auth = self.identity.authenticate(&req.requester).await?;
        let role = match (auth.authentic, auth.profile) {
            (true, Some(p)) => p.entity_role,
            _ => return Err(ApiError::forbidden("identity_failed")),
        };
        let kind = req.body.contract_kind;
        self.shared
            .policy
            .allow_abi(role, kind)
            .map_err(|e| ApiError::forbidden(e.to_string()))?;
        let contract = self.directory()?.get(kind);
        let (_, height) = self
            .sender
            .send_and_wait(
                contract,
                FN_GRANT_WRITER,
                vec![req.requester.0.to_vec()],
                self.shared.chain_timeout,
            )
            .await?;
        Ok(GrantReply {
            contract_address: contract,
            functions: kind.write_functions().iter().map(|f| f.to_string()).collect(),
            height,
        })
    }
}

impl Link<Management> {
    pub async fn directory(&self) -> Result<ContractDirectory, ApiError> {
        match self {
            Link::Local(s) => s.directory(),
            Link::Remote { base, http } => get_json(http, &format!("{base}/contracts")).await,
        }
    }

    pub async fn grant(&self, req: &SignedRequest<AbiGrantBody>) -> Result<GrantReply, ApiError> {
        match self {
            Link::Local(s) => s.grant(req, now_secs()).await,
            Link::Remote { base, http } => post_json(http, &format!("{base}/abi/grant"), req).await,
        }
    }
}

pub fn routes(svc: Arc<Management>) -> Router {
    Router::new()
        .route("/abi/grant", post(grant))
        .route("/contracts", get(directory))
        .with_state(svc)
}

async fn grant(State(s): State<Arc<Management>>, Json(req): Json<SignedRequest<AbiGrantBody>>) -> ApiResult {
    ok(s.grant(&req, now_secs()).await?)
}

async fn directory(State(s): State<Arc<Management>>) -> ApiResult {
    ok(s.directory()?)
}
