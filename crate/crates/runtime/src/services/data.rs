//! Data provider: stores feature records and serves them behind the
//! access-control and integrity checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use anyhow::Result;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use blendmas_core::security::{
    frame_key, DataQueryBody, FeatureRecord, SignedRequest, StageTimer, StageTimings, STAGE_FETCH_DATA,
    STAGE_REQUEST_VERIFICATION,
};
use serde::{Deserialize, Serialize};

use super::access::ValidateBody;
use super::hidx::RecordReply;
use super::{AccessControl, HashedIndex, Link, Readiness, Shared};
use crate::http::{ok, ok_empty, ApiError, ApiResult};
use crate::util::{now_secs, write_atomic};

pub const UNKNOWN_FRAME: &str = "unknown_frame";
pub const REQUEST_UNVERIFIED: &str = "request_unverified";
pub const MALFORMED_PAYLOAD: &str = "malformed_payload";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataReply {
    pub record: FeatureRecord,
    pub stage_timings: StageTimings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestBody {
    pub record: FeatureRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcToggle {
    pub enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TamperBody {
    pub frame_id: String,
    #[serde(default)]
    pub offset: usize,
    #[serde(default = "default_xor")]
    pub xor: u8,
}

fn default_xor() -> u8 {
    0xff
}

/// Raw payload bytes per frame, mirrored to one file per frame.
struct FrameStore {
    dir: PathBuf,
    frames: RwLock<BTreeMap<String, Vec<u8>>>,
}

fn valid_frame_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.')
}

impl FrameStore {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut frames = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                frames.insert(id.to_string(), std::fs::read(&path)?);
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            frames: RwLock::new(frames),
        })
    }

    fn get(&self, id: &str) -> Option<Vec<u8>> {
        self.frames.read().expect("lock").get(id).cloned()
    }

    fn put(&self, id: &str, bytes: Vec<u8>) -> Result<()> {
        write_atomic(&self.dir.join(format!("{id}.json")), &bytes)?;
        self.frames.write().expect("lock").insert(id.to_string(), bytes);
        Ok(())
    }

    fn ids(&self) -> Vec<String> {
        self.frames.read().expect("lock").keys().cloned().collect()
    }
}

pub struct DataProvider {
    shared: Arc<Shared>,
    store: FrameStore,
    access: Link<AccessControl>,
    hidx: Link<HashedIndex>,
    ac_enabled: AtomicBool,
    pub ready: Readiness,
}

fn denied(status: StatusCode, reason: &str, timer: StageTimer) -> ApiError {
    ApiError::new(status, reason).with("stage_timings", timer.into_timings())
}

impl DataProvider {
    pub fn open(shared: Arc<Shared>, dir: &Path, access: Link<AccessControl>, hidx: Link<HashedIndex>) -> Result<Self> {
        Ok(Self {
            shared,
            store: FrameStore::open(dir)?,
            access,
            hidx,
            ac_enabled: AtomicBool::new(true),
            ready: Readiness::default(),
        })
    }

    pub fn ac_enabled(&self) -> bool {
        self.ac_enabled.load(Ordering::SeqCst)
    }

    pub fn set_ac_enabled(&self, on: bool) {
        self.ac_enabled.store(on, Ordering::SeqCst);
    }

    /// Anchors the record hash on chain, then stores the payload.
    pub async fn ingest(&self, record: &FeatureRecord) -> Result<RecordReply, ApiError> {
        self.ready.require()?;
        if !valid_frame_id(&record.frame_id) {
            return Err(ApiError::bad_request("invalid frame id"));
        }
        let reply = self.hidx.record(record).await?;
        self.store
            .put(&record.frame_id, record.canonical_bytes())
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(reply)
    }

    pub fn tamper(&self, body: &TamperBody) -> Result<(), ApiError> {
        let mut bytes = self
            .store
            .get(&body.frame_id)
            .ok_or_else(|| ApiError::not_found(UNKNOWN_FRAME))?;
        let len = bytes.len();
        let b = bytes
            .get_mut(body.offset)
            .ok_or_else(|| ApiError::bad_request(format!("offset beyond payload of {len} bytes")))?;
        *b ^= body.xor;
        self.store
            .put(&body.frame_id, bytes)
            .map_err(|e| ApiError::internal(e.to_string()))
    }

    pub fn frames(&self) -> Vec<String> {
        self.store.ids()
    }

    fn fetch(&self, frame_id: &str, bytes: &[u8], timer: &mut StageTimer) -> Result<FeatureRecord, ApiError> {
        let parsed = timer.time(STAGE_FETCH_DATA, || serde_json::from_slice::<FeatureRecord>(bytes));
        parsed.map_err(|e| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, MALFORMED_PAYLOAD)
                .with("frame_id", frame_id)
                .with("detail", e.to_string())
        })
    }

    pub async fn query(&self, req: &SignedRequest<DataQueryBody>, now: u64) -> Result<DataReply, ApiError> {
        self.ready.require()?;
        let mut timer = StageTimer::new(self.shared.throttle());
        let frame_id = req.body.frame_id.clone();

        if !self.ac_enabled() {
            let bytes = self.store.get(&frame_id).ok_or_else(|| ApiError::not_found(UNKNOWN_FRAME))?;
            let record = self.fetch(&frame_id, &bytes, &mut timer)?;
            return Ok(DataReply {
                record,
                stage_timings: timer.into_timings(),
            });
        }

        let verified = timer.time(STAGE_REQUEST_VERIFICATION, || req.verify(now));
        if let Err(e) = verified {
            return Err(denied(StatusCode::UNAUTHORIZED, REQUEST_UNVERIFIED, timer).with("detail", e.to_string()));
        }

        let decision = self
            .access
            .validate(&ValidateBody {
                subject: req.requester,
                resource: req.body.resource.clone(),
                action: req.body.action,
                now: Some(now),
            })
            .await?;
        timer.merge(&decision.stage_timings);
        if !decision.granted {
            return Err(denied(StatusCode::FORBIDDEN, decision.reason.as_str(), timer));
        }

        let Some(bytes) = self.store.get(&frame_id) else {
            return Err(denied(StatusCode::NOT_FOUND, UNKNOWN_FRAME, timer));
        };
        let verdict = self.hidx.verify(&frame_key(&frame_id), &bytes).await?;
        timer.merge(&verdict.stage_timings);
        if let Some(m) = verdict.mismatch {
            return Err(denied(StatusCode::FORBIDDEN, m.as_str(), timer));
        }
        let record = self.fetch(&frame_id, &bytes, &mut timer)?;
        Ok(DataReply {
            record,
            stage_timings: timer.into_timings(),
        })
    }
}

pub fn routes(svc: Arc<DataProvider>) -> Router {
    Router::new()
        .route("/data/query", post(query))
        .route("/data/ingest", post(ingest))
        .route("/data/frames", get(frames))
        .route("/data/admin/ac", get(ac_state).post(set_ac))
        .route("/data/admin/tamper", post(tamper))
        .with_state(svc)
}

type S = State<Arc<DataProvider>>;

async fn query(State(s): S, Json(req): Json<SignedRequest<DataQueryBody>>) -> ApiResult {
    ok(s.query(&req, now_secs()).await?)
}

async fn ingest(State(s): S, Json(body): Json<IngestBody>) -> ApiResult {
    ok(s.ingest(&body.record).await?)
}

async fn frames(State(s): S) -> ApiResult {
    ok(serde_json::json!({ "frames": s.frames() }))
}

async fn ac_state(State(s): S) -> ApiResult {
    ok(AcToggle { enabled: s.ac_enabled() })
}

async fn set_ac(State(s): S, Json(body): Json<AcToggle>) -> ApiResult {
    s.set_ac_enabled(body.enabled);
    ok_empty()
}

async fn tamper(State(s): S, Json(body): Json<TamperBody>) -> ApiResult {
    s.tamper(&body)?;
    ok_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_ids_are_path_safe() {
        assert!(valid_frame_id("frame-0001"));
        assert!(valid_frame_id("cam1_f.2"));
        assert!(!valid_frame_id("../etc"));
        assert!(!valid_frame_id("a/b"));
        assert!(!valid_frame_id(""));
        assert!(!valid_frame_id(".hidden"));
    }

    #[test]
    fn frame_store_persists_raw_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let store = FrameStore::open(dir.path()).unwrap();
        store.put("f1", b"{not json".to_vec()).unwrap();
        let reopened = FrameStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get("f1").unwrap(), b"{not json");
        assert_eq!(reopened.ids(), vec!["f1".to_string()]);
    }
}
