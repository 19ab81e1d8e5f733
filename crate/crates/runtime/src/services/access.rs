//! Capability token issuance and access validation.

use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use blendmas_core::codec::Encode;
use blendmas_core::contracts::{Action, CapToken, ContractKind, FN_REVOKE_TOKEN, FN_SET_TOKEN};
use blendmas_core::crypto::{Account, Address};
use blendmas_core::security::{
    check_access_right, check_token_validity, AccessDecision, DenyReason, EntityRole, RevokeTokenBody, SignedRequest,
    StageTimer, TokenBody, STAGE_ACCESS_VERIFICATION, STAGE_IDENTITY, STAGE_QUERY_TOKEN, STAGE_TOKEN_VALIDATION,
};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{register_and_grant, Identity, Link, Management, Readiness, Registration, Shared};
use crate::chain_client::TxSender;
use crate::http::{ok, post_json, ApiError, ApiResult};
use crate::util::now_secs;

pub const ACCESS_VID: &str = "svc-access-control";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateBody {
    pub subject: Address,
    pub resource: String,
    pub action: Action,
    /// Evaluation time in seconds; the server clock when absent.
    #[serde(default)]
    pub now: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevokeReply {
    pub height: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenReply {
    pub contract_address: Address,
    pub token: CapToken,
    pub height: u64,
}

pub struct AccessControl {
    shared: Arc<Shared>,
    account: Account,
    sender: TxSender,
    identity: Link<Identity>,
    registration: Link<Registration>,
    management: Link<Management>,
    capac: RwLock<Option<Address>>,
    pub ready: Readiness,
}

impl AccessControl {
    pub fn new(
        shared: Arc<Shared>,
        account: Account,
        identity: Link<Identity>,
        registration: Link<Registration>,
        management: Link<Management>,
    ) -> Self {
        let sender = TxSender::new(account.clone(), shared.chain.clone());
        Self {
            shared,
            account,
            sender,
            identity,
            registration,
            management,
            capac: RwLock::new(None),
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
            ACCESS_VID,
            EntityRole::FogService,
            ContractKind::Capac,
        )
        .await;
        *self.capac.write().expect("lock") = Some(grant.contract_address);
        self.ready.set();
    }

    fn capac(&self) -> Result<Address, ApiError> {
        self.capac
            .read()
            .expect("lock")
            .ok_or_else(|| ApiError::unavailable("capability contract unknown"))
    }

    /// Issues a token after checking identity, requester rights and policy.
    pub async fn issue(&self, req: &SignedRequest<TokenBody>, now: u64) -> Result<TokenReply, ApiError> {
        self.ready.require()?;
        req.verify(now).map_err(|e| ApiError::forbidden(e.to_string()))?;
        let body = &req.body;
        let requester = self.identity.authenticate(&req.requester).await?;
        let requester_role = match (requester.authentic, requester.profile) {
            (true, Some(p)) => p.entity_role,
            _ => return Err(ApiError::forbidden(DenyReason::IdentityFailed.as_str())),
        };
        if req.requester != body.subject && requester_role != EntityRole::Admin {
            return Err(ApiError::forbidden("only the subject or an admin may request a token"));
        }
        let subject = if req.requester == body.subject {
            requester_role
        } else {
            let auth = self.identity.authenticate(&body.subject).await?;
            match (auth.authentic, auth.profile) {
                (true, Some(p)) => p.entity_role,
                _ => return Err(ApiError::forbidden(DenyReason::IdentityFailed.as_str())),
            }
        };
        self.shared
            .policy
            .allow_capability(subject, &body.resource, &body.actions, body.not_before, body.not_after)
            .map_err(|e| ApiError::forbidden(e.to_string()))?;
        let mut token_id = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut token_id);
        let token = CapToken {
            token_id,
            issuer: self.address(),
            subject: body.subject,
            resource: body.resource.clone(),
            actions: body.actions.clone(),
            not_before: body.not_before,
            not_after: body.not_after,
            enabled: true,
        };
        token
            .check_well_formed()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let contract = self.capac()?;
        let (_, height) = self
            .sender
            .send_and_wait(contract, FN_SET_TOKEN, vec![token.to_canonical_bytes()], self.shared.chain_timeout)
            .await?;
        Ok(TokenReply {
            contract_address: contract,
            token,
            height,
        })
    }

    /// Disables the token stored for (subject, resource). Same requester rule as issuance.
    pub async fn revoke(&self, req: &SignedRequest<RevokeTokenBody>, now: u64) -> Result<RevokeReply, ApiError> {
        self.ready.require()?;
        req.verify(now).map_err(|e| ApiError::forbidden(e.to_string()))?;
        let requester = self.identity.authenticate(&req.requester).await?;
        let role = match (requester.authentic, requester.profile) {
            (true, Some(p)) => p.entity_role,
            _ => return Err(ApiError::forbidden(DenyReason::IdentityFailed.as_str())),
        };
        if req.requester != req.body.subject && role != EntityRole::Admin {
            return Err(ApiError::forbidden("only the subject or an admin may revoke a token"));
        }
        let args = vec![req.body.subject.0.to_vec(), req.body.resource.as_bytes().to_vec()];
        let (_, height) = self
            .sender
            .send_and_wait(self.capac()?, FN_REVOKE_TOKEN, args, self.shared.chain_timeout)
            .await
            .map_err(|e| {
                if e.reason.contains("no token") {
                    ApiError::not_found(e.reason)
                } else {
                    e
                }
            })?;
        Ok(RevokeReply { height })
    }

    /// Runs identity, token lookup, validity and rights checks in order and
    /// stops at the first failure. Errors from dependencies fail closed.
    pub async fn validate(&self, body: &ValidateBody) -> Result<AccessDecision, ApiError> {
        self.ready.require()?;
        let now = body.now.unwrap_or_else(now_secs);
        let mut timer = StageTimer::new(self.shared.throttle());

        let started = timer.start();
        let authentic = match self.identity.authenticate(&body.subject).await {
            Ok(a) => a.authentic,
            Err(e) => {
                tracing::warn!("identity check failed: {e}");
                false
            }
        };
        timer.finish(STAGE_IDENTITY, started);
        if !authentic {
            return Ok(AccessDecision::new(DenyReason::IdentityFailed, timer.into_timings()));
        }

        let started = timer.start();
        let token = match self.shared.chain.query_token(&self.capac()?, &body.subject, &body.resource).await {
            Ok(t) => t,
            Err(e) => {
                tracing::warn!("token query failed: {e}");
                None
            }
        };
        timer.finish(STAGE_QUERY_TOKEN, started);
        let Some(token) = token else {
            return Ok(AccessDecision::new(DenyReason::NoToken, timer.into_timings()));
        };

        let validity = timer.time(STAGE_TOKEN_VALIDATION, || check_token_validity(&token, now));
        if let Err(reason) = validity {
            return Ok(AccessDecision::new(reason, timer.into_timings()));
        }
        let rights = timer.time(STAGE_ACCESS_VERIFICATION, || check_access_right(&token, &body.resource, body.action));
        let reason = rights.err().unwrap_or(DenyReason::Ok);
        Ok(AccessDecision::new(reason, timer.into_timings()))
    }
}

impl Link<AccessControl> {
    pub async fn validate(&self, body: &ValidateBody) -> Result<AccessDecision, ApiError> {
        match self {
            Link::Local(s) => s.validate(body).await,
            Link::Remote { base, http } => post_json(http, &format!("{base}/ac/validate"), body).await,
        }
    }

    pub async fn issue(&self, req: &SignedRequest<TokenBody>) -> Result<TokenReply, ApiError> {
        match self {
            Link::Local(s) => s.issue(req, now_secs()).await,
            Link::Remote { base, http } => post_json(http, &format!("{base}/ac/token"), req).await,
        }
    }
}

pub fn routes(svc: Arc<AccessControl>) -> Router {
    Router::new()
        .route("/ac/token", post(issue))
        .route("/ac/validate", post(validate))
        .route("/ac/revoke", post(revoke))
        .with_state(svc)
}

async fn issue(State(s): State<Arc<AccessControl>>, Json(req): Json<SignedRequest<TokenBody>>) -> ApiResult {
    ok(s.issue(&req, now_secs()).await?)
}

async fn validate(State(s): State<Arc<AccessControl>>, Json(body): Json<ValidateBody>) -> ApiResult {
    ok(s.validate(&body).await?)
}

async fn revoke(State(s): State<Arc<AccessControl>>, Json(req): Json<SignedRequest<RevokeTokenBody>>) -> ApiResult {
    ok(s.revoke(&req, now_secs()).await?)
}
