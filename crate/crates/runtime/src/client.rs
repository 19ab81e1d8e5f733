//! HTTP client for the service endpoints, acting as one entity.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use blendmas_core::contracts::Action;
use blendmas_core::crypto::{Account, Address};
use blendmas_core::membership::Role;
use blendmas_core::security::{
    AccessDecision, DataQueryBody, EntityProfile, EntityRole, FeatureRecord, RegisterBody, SignedRequest, StageTimings,
    TokenBody,
};
use serde::Deserialize;
use serde_json::Value;

use crate::config::ServiceKind;
use crate::http::{get_json, post_json, ApiError};
use crate::oracle::OracleClient;
use crate::services::access::{RevokeReply, TokenReply, ValidateBody};
use crate::services::data::{AcToggle, IngestBody, TamperBody};
use crate::services::hidx::{RecordReply, VerifyBody, VerifyReply};
use crate::services::identity::AuthReply;
use crate::services::management::{ContractDirectory, GrantReply};
use crate::services::registration::ProfileReply;
use crate::services::ThrottleBody;
use crate::util::{http_client, now_secs};

/// Result of one data query as seen by the client.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub status: u16,
    pub reason: String,
    pub record: Option<FeatureRecord>,
    pub stage_timings: StageTimings,
    /// Client-observed round trip.
    pub elapsed: Duration,
}

impl QueryOutcome {
    pub fn granted(&self) -> bool {
        self.status == 200 && self.record.is_some()
    }
}

#[derive(Deserialize)]
struct QueryBodyShape {
    #[serde(default)]
    reason: Option<String>,
    #[serde(default)]
    record: Option<FeatureRecord>,
    #[serde(default)]
    stage_timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct ClientSession {
    pub account: Account,
    urls: BTreeMap<ServiceKind, String>,
    http: reqwest::Client,
}

impl ClientSession {
    pub fn new(account: Account, urls: BTreeMap<ServiceKind, String>) -> Self {
        Self {
            account,
            urls,
            http: http_client(),
        }
    }

    pub fn address(&self) -> Address {
        self.account.address()
    }

    pub fn url(&self, kind: ServiceKind, path: &str) -> String {
        format!("{}{path}", self.urls[&kind])
    }

    pub fn urls(&self) -> &BTreeMap<ServiceKind, String> {
        &self.urls
    }

    /// Joins the roster as a client. Clients have no listener, so the port is 0.
    pub async fn enroll(&self, oracle: &OracleClient, host: &str) -> Result<(), ApiError> {
        if oracle.roster().await?.is_enrolled(&self.address()) {
            return Ok(());
        }
        oracle.join(&self.account, host, 0, Role::Client).await?;
        Ok(())
    }

    pub async fn register(&self, vid: &str, role: EntityRole) -> Result<EntityProfile, ApiError> {
        let req = SignedRequest::sign(
            &self.account,
            now_secs(),
            RegisterBody {
                vid: vid.into(),
                display_name: vid.into(),
                entity_role: role,
            },
        );
        let r: ProfileReply = post_json(&self.http, &self.url(ServiceKind::Registration, "/register"), &req).await?;
        Ok(r.profile)
    }

    pub async fn profile(&self, address: &Address) -> Result<EntityProfile, ApiError> {
        let r: ProfileReply = get_json(&self.http, &self.url(ServiceKind::Registration, &format!("/profile/{address}"))).await?;
        Ok(r.profile)
    }

    pub async fn authenticate(&self, address: &Address) -> Result<AuthReply, ApiError> {
        get_json(&self.http, &self.url(ServiceKind::Identity, &format!("/auth/{address}"))).await
    }

    pub async fn contracts(&self) -> Result<ContractDirectory, ApiError> {
        get_json(&self.http, &self.url(ServiceKind::Management, "/contracts")).await
    }

    pub async fn grant(&self, kind: blendmas_core::contracts::ContractKind) -> Result<GrantReply, ApiError> {
        let req = SignedRequest::sign(
            &self.account,
            now_secs(),
            blendmas_core::security::AbiGrantBody { contract_kind: kind },
        );
        post_json(&self.http, &self.url(ServiceKind::Management, "/abi/grant"), &req).await
    }

    pub async fn request_token(
        &self,
        subject: Address,
        resource: &str,
        actions: BTreeSet<Action>,
        not_before: u64,
        not_after: u64,
    ) -> Result<TokenReply, ApiError> {
        let req = SignedRequest::sign(
            &self.account,
            now_secs(),
            TokenBody {
                subject,
                resource: resource.into(),
                actions,
                not_before,
                not_after,
            },
        );
        post_json(&self.http, &self.url(ServiceKind::AccessControl, "/ac/token"), &req).await
    }

    pub async fn revoke_token(&self, subject: Address, resource: &str) -> Result<RevokeReply, ApiError> {
        let req = SignedRequest::sign(
            &self.account,
            now_secs(),
            blendmas_core::security::RevokeTokenBody {
                subject,
                resource: resource.into(),
            },
        );
        post_json(&self.http, &self.url(ServiceKind::AccessControl, "/ac/revoke"), &req).await
    }

    pub async fn validate(&self, subject: Address, resource: &str, action: Action, now: Option<u64>) -> Result<AccessDecision, ApiError> {
        let body = ValidateBody {
            subject,
            resource: resource.into(),
            action,
            now,
        };
        post_json(&self.http, &self.url(ServiceKind::AccessControl, "/ac/validate"), &body).await
    }

    pub async fn ingest(&self, record: &FeatureRecord) -> Result<RecordReply, ApiError> {
        let body = IngestBody { record: record.clone() };
        post_json(&self.http, &self.url(ServiceKind::Data, "/data/ingest"), &body).await
    }

    pub async fn verify(&self, key: &str, payload: &[u8]) -> Result<VerifyReply, ApiError> {
        let body = VerifyBody {
            key: key.into(),
            payload_hex: hex::encode(payload),
        };
        post_json(&self.http, &self.url(ServiceKind::HashedIndex, "/hidx/verify"), &body).await
    }

    pub async fn set_ac(&self, enabled: bool) -> Result<(), ApiError> {
        let _: Value = post_json(&self.http, &self.url(ServiceKind::Data, "/data/admin/ac"), &AcToggle { enabled }).await?;
        Ok(())
    }

    pub async fn tamper(&self, frame_id: &str, offset: usize, xor: u8) -> Result<(), ApiError> {
        let body = TamperBody {
            frame_id: frame_id.into(),
            offset,
            xor,
        };
        let _: Value = post_json(&self.http, &self.url(ServiceKind::Data, "/data/admin/tamper"), &body).await?;
        Ok(())
    }

    /// Sets (or clears) CPU throttling on every service endpoint.
    pub async fn set_throttle(&self, fraction: Option<f64>) -> Result<(), ApiError> {
        for base in self.urls.values() {
            let _: Value = post_json(&self.http, &format!("{base}/admin/throttle"), &ThrottleBody { fraction }).await?;
        }
        Ok(())
    }

    /// Health of every endpoint; true when all report ready.
    pub async fn all_ready(&self) -> bool {
        for base in self.urls.values() {
            match get_json::<Value>(&self.http, &format!("{base}/health")).await {
                Ok(v) if v.get("ready") == Some(&Value::Bool(true)) => {}
                _ => return false,
            }
        }
        true
    }

    /// Sends a signed data query; denials are returned, not raised.
    pub async fn query(&self, frame_id: &str, resource: &str, action: Action) -> Result<QueryOutcome, ApiError> {
        let req = SignedRequest::sign(
            &self.account,
            now_secs(),
            DataQueryBody {
                resource: resource.into(),
                action,
                frame_id: frame_id.into(),
            },
        );
        self.query_signed(&req).await
    }

    pub async fn query_signed(&self, req: &SignedRequest<DataQueryBody>) -> Result<QueryOutcome, ApiError> {
        let started = Instant::now();
        let resp = self
            .http
            .post(self.url(ServiceKind::Data, "/data/query"))
            .json(req)
            .send()
            .await
            .map_err(|e| ApiError::unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body: QueryBodyShape = resp.json().await.map_err(|e| ApiError::unavailable(e.to_string()))?;
        let elapsed = started.elapsed();
        Ok(QueryOutcome {
            status,
            reason: body.reason.unwrap_or_else(|| "ok".into()),
            record: body.record,
            stage_timings: body.stage_timings,
            elapsed,
        })
    }
}
