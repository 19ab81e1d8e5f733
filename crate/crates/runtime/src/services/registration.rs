//! Entity profiles keyed by virtual id and address, stored in SQLite.

use std::path::Path;
use std::sync::{Arc, Mutex};

use anyhow::Result;
use axum::extract::{Path as UrlPath, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use blendmas_core::crypto::Address;
use blendmas_core::membership::{Role, StaticNodesFile};
use blendmas_core::security::{EntityProfile, EntityRole, ProfileStatus, RegisterBody, SignedRequest};
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

use super::{Link, Readiness, Shared};
use crate::http::{get_json, ok, post_json, ApiError, ApiResult};
use crate::util::now_secs;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileReply {
    pub profile: EntityProfile,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("virtual id already registered")]
    DuplicateVid,
    #[error("address already registered")]
    DuplicateAddress,
    #[error("profile store: {0}")]
    Db(String),
}

/// SQLite-backed profile table.
pub struct ProfileStore {
    conn: Mutex<Connection>,
}

impl ProfileStore {
    pub fn open(path: &Path) -> Result<Self> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.execute_batch(
            "CREATE TABLE IF NOT EXISTS profiles (
                vid TEXT PRIMARY KEY,
                address TEXT NOT NULL UNIQUE,
                display_name TEXT NOT NULL,
                role TEXT NOT NULL,
                registered_at INTEGER NOT NULL,
                status TEXT NOT NULL
            );",
        )?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    pub fn insert(&self, p: &EntityProfile) -> Result<(), StoreError> {
        let conn = self.conn.lock().expect("lock");
        let exists = |sql: &str, v: &str| -> Result<bool, StoreError> {
            conn.query_row(sql, [v], |_| Ok(()))
                .optional()
                .map(|r| r.is_some())
                .map_err(|e| StoreError::Db(e.to_string()))
        };
        if exists("SELECT 1 FROM profiles WHERE vid = ?1", &p.vid)? {
            return Err(StoreError::DuplicateVid);
        }
        if exists("SELECT 1 FROM profiles WHERE address = ?1", &p.address.to_string())? {
            return Err(StoreError::DuplicateAddress);
        }
        conn.execute(
            "INSERT INTO profiles (vid, address, display_name, role, registered_at, status)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                p.vid,
                p.address.to_string(),
                p.display_name,
                p.entity_role.as_str(),
                p.registered_at as i64,
                p.status.as_str()
            ],
        )
        .map_err(|e| StoreError::Db(e.to_string()))?;
        Ok(())
    }

    pub fn by_address(&self, address: &Address) -> Result<Option<EntityProfile>, StoreError> {
        let conn = self.conn.lock().expect("lock");
        let row = conn
            .query_row(
                "SELECT vid, address, display_name, role, registered_at, status FROM profiles WHERE address = ?1",
                [address.to_string()],
                |r| {
                    Ok((
                        r.get::<_, String>(0)?,
                        r.get::<_, String>(1)?,
                        r.get::<_, String>(2)?,
                        r.get::<_, String>(3)?,
                        r.get::<_, i64>(4)?,
                        r.get::<_, String>(5)?,
                    ))
                },
            )
            .optional()
            .map_err(|e| StoreError::Db(e.to_string()))?;
        let Some((vid, addr, display_name, role, registered_at, status)) = row else {
            return Ok(None);
        };
        let bad = |e: String| StoreError::Db(e);
        Ok(Some(EntityProfile {
            vid,
            address: addr.parse().map_err(|e| bad(format!("{e}")))?,
            display_name,
            entity_role: role.parse().map_err(bad)?,
            registered_at: registered_at as u64,
            status: status.parse().map_err(bad)?,
        }))
    }

    pub fn set_status(&self, address: &Address, status: ProfileStatus) -> Result<bool, StoreError> {
        let conn = self.conn.lock().expect("lock");
        let n = conn
            .execute(
                "UPDATE profiles SET status = ?1 WHERE address = ?2",
                params![status.as_str(), address.to_string()],
            )
            .map_err(|e| StoreError::Db(e.to_string()))?;
        Ok(n > 0)
    }
}

/// Entity roles a roster role may register as.
pub fn role_compatible(roster: Role, entity: EntityRole) -> bool {
    match roster {
        Role::Miner => false,
        Role::Service => matches!(entity, EntityRole::EdgeService | EntityRole::FogService | EntityRole::Admin),
        Role::Client => matches!(entity, EntityRole::Client | EntityRole::Camera | EntityRole::Admin),
    }
}

pub struct Registration {
    shared: Arc<Shared>,
    store: ProfileStore,
    pub ready: Readiness,
}

impl Registration {
    pub fn open(shared: Arc<Shared>, path: &Path) -> Result<Self> {
        Ok(Self::with_store(shared, ProfileStore::open(path)?))
    }

    pub fn with_store(shared: Arc<Shared>, store: ProfileStore) -> Self {
        Self {
            shared,
            store,
            ready: Readiness::default(),
        }
    }

    pub fn register(&self, req: &SignedRequest<RegisterBody>, now: u64) -> Result<EntityProfile, ApiError> {
        self.ready.require()?;
        req.verify(now).map_err(|e| ApiError::forbidden(e.to_string()))?;
        let body = &req.body;
        if body.vid.trim().is_empty() {
            return Err(ApiError::bad_request("empty virtual id"));
        }
        if self.shared.is_banned(&req.requester) {
            return Err(ApiError::forbidden("address is revoked"));
        }
        let record = self
            .shared
            .roster
            .read()
            .expect("lock")
            .record(&req.requester)
            .cloned()
            .ok_or_else(|| ApiError::forbidden("address is not enrolled"))?;
        if !role_compatible(record.role, body.entity_role) {
            return Err(ApiError::forbidden(format!(
                "a {} may not register as {}",
                record.role, body.entity_role
            )));
        }
        let profile = EntityProfile {
            vid: body.vid.clone(),
            address: req.requester,
            display_name: body.display_name.clone(),
            entity_role: body.entity_role,
            registered_at: now,
            status: ProfileStatus::Active,
        };
        self.store.insert(&profile).map_err(|e| match e {
            StoreError::Db(m) => ApiError::internal(m),
            other => ApiError::conflict(other.to_string()),
        })?;
        Ok(profile)
    }

    pub fn profile(&self, address: &Address) -> Result<Option<EntityProfile>, ApiError> {
        self.ready.require()?;
        self.store.by_address(address).map_err(|e| ApiError::internal(e.to_string()))
    }

    /// Marks profiles of revoked addresses.
    pub fn apply_roster(&self, file: &StaticNodesFile) {
        for r in file.revocations.iter().filter(|r| !r.cleared) {
            if let Err(e) = self.store.set_status(&r.address, ProfileStatus::Revoked) {
                tracing::warn!("marking {} revoked: {e}", r.address);
            }
        }
    }
}

impl Link<Registration> {
    pub async fn profile(&self, address: &Address) -> Result<Option<EntityProfile>, ApiError> {
        match self {
            Link::Local(s) => s.profile(address),
            Link::Remote { base, http } => {
                match get_json::<ProfileReply>(http, &format!("{base}/profile/{address}")).await {
                    Ok(r) => Ok(Some(r.profile)),
                    Err(e) if e.status == axum::http::StatusCode::NOT_FOUND => Ok(None),
                    Err(e) => Err(e),
                }
            }
        }
    }

    pub async fn register(&self, req: &SignedRequest<RegisterBody>) -> Result<EntityProfile, ApiError> {
        match self {
            Link::Local(s) => s.register(req, now_secs()),
            Link::Remote { base, http } => {
                let r: ProfileReply = post_json(http, &format!("{base}/register"), req).await?;
                Ok(r.profile)
            }
        }
    }
}

pub fn routes(svc: Arc<Registration>) -> Router {
    Router::new()
        .route("/register", post(register))
        .route("/profile/{address}", get(profile))
        .with_state(svc)
}

async fn register(State(s): State<Arc<Registration>>, Json(req): Json<SignedRequest<RegisterBody>>) -> ApiResult {
    let profile = s.register(&req, now_secs())?;
    ok(ProfileReply { profile })
}

async fn profile(State(s): State<Arc<Registration>>, UrlPath(address): UrlPath<Address>) -> ApiResult {
    match s.profile(&address)? {
        Some(profile) => ok(ProfileReply { profile }),
        None => Err(ApiError::not_found("unregistered")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(vid: &str, byte: u8) -> EntityProfile {
        EntityProfile {
            vid: vid.into(),
            address: Address([byte; 20]),
            display_name: "cam".into(),
            entity_role: EntityRole::Camera,
            registered_at: 1,
            status: ProfileStatus::Active,
        }
    }

    #[test]
    fn store_round_trips_and_rejects_duplicates() {
        let store = ProfileStore::in_memory().unwrap();
        store.insert(&profile("v1", 1)).unwrap();
        assert_eq!(store.by_address(&Address([1; 20])).unwrap(), Some(profile("v1", 1)));
        assert_eq!(store.insert(&profile("v1", 2)), Err(StoreError::DuplicateVid));
        assert_eq!(store.insert(&profile("v2", 1)), Err(StoreError::DuplicateAddress));
        assert_eq!(store.by_address(&Address([9; 20])).unwrap(), None);
    }

    #[test]
    fn status_updates_persist() {
        let store = ProfileStore::in_memory().unwrap();
        store.insert(&profile("v1", 1)).unwrap();
        assert!(store.set_status(&Address([1; 20]), ProfileStatus::Revoked).unwrap());
        assert_eq!(
            store.by_address(&Address([1; 20])).unwrap().unwrap().status,
            ProfileStatus::Revoked
        );
        assert!(!store.set_status(&Address([2; 20]), ProfileStatus::Revoked).unwrap());
    }

    #[test]
    fn miners_cannot_register() {
        assert!(!role_compatible(Role::Miner, EntityRole::Admin));
        assert!(role_compatible(Role::Service, EntityRole::FogService));
        assert!(!role_compatible(Role::Service, EntityRole::Camera));
        assert!(role_compatible(Role::Client, EntityRole::Client));
        assert!(!role_compatible(Role::Client, EntityRole::EdgeService));
    }
}
