//! Identity authentication: a registered, active profile whose address is
//! still enrolled in the oracle roster.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::routing::get;
use axum::Router;
use blendmas_core::crypto::Address;
use blendmas_core::security::{EntityProfile, ProfileStatus};
use serde::{Deserialize, Serialize};

use super::{Link, Readiness, Registration, Shared};
use crate::http::{get_json, ok, ApiError, ApiResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthReply {
    pub authentic: bool,
    #[serde(default)]
    pub vid: Option<String>,
    #[serde(default)]
    pub profile: Option<EntityProfile>,
}

pub struct Identity {
    shared: Arc<Shared>,
    registration: Link<Registration>,
    pub ready: Readiness,
}

impl Identity {
    pub fn new(shared: Arc<Shared>, registration: Link<Registration>) -> Self {
        Self {
            shared,
            registration,
            ready: Readiness::default(),
        }
    }

    pub async fn authenticate(&self, address: &Address) -> Result<AuthReply, ApiError> {
        self.ready.require()?;
        let profile = self.registration.profile(address).await?;
        let authentic = profile.as_ref().is_some_and(|p| p.status == ProfileStatus::Active)
            && self.shared.is_enrolled(address);
        Ok(AuthReply {
            authentic,
            vid: profile.as_ref().map(|p| p.vid.clone()),
            profile,
        })
    }
}

impl Link<Identity> {
    pub async fn authenticate(&self, address: &Address) -> Result<AuthReply, ApiError> {
        match self {
            Link::Local(s) => s.authenticate(address).await,
            Link::Remote { base, http } => get_json(http, &format!("{base}/auth/{address}")).await,
        }
    }
}

pub fn routes(svc: Arc<Identity>) -> Router {
    Router::new().route("/auth/{address}", get(auth)).with_state(svc)
}

async fn auth(State(s): State<Arc<Identity>>, Path(address): Path<Address>) -> ApiResult {
    ok(s.authenticate(&address).await?)
}
