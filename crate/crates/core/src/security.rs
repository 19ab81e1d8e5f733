//! Service-layer types and pure checks: entity profiles, feature records and
//! their content hash, access decisions, authorization policy, signed client
//! requests and per-stage timing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codec::Encoder;
use crate::contracts::{resource_matches, Action, CapToken, ContractKind};
use crate::crypto::{sha256, Account, Address, Hash, PublicKey, Signature};

/// Seconds a signed request stays acceptable on either side of the server clock.
pub const FRESHNESS_WINDOW_SECS: u64 = 30;

pub const STAGE_REQUEST_VERIFICATION: &str = "request_verification";
pub const STAGE_IDENTITY: &str = "identity_authentication";
pub const STAGE_QUERY_TOKEN: &str = "query_token";
pub const STAGE_TOKEN_VALIDATION: &str = "token_validation";
pub const STAGE_ACCESS_VERIFICATION: &str = "access_verification";
pub const STAGE_QUERY_HASHED_INDEX: &str = "query_hashed_index";
pub const STAGE_EXTRACT_HASH: &str = "extract_hash";
pub const STAGE_VERIFY_HASH: &str = "verify_hash";
pub const STAGE_FETCH_DATA: &str = "fetch_data";

/// Server-side stages of a data query, in execution order.
pub const SERVE_STAGES: [&str; 9] = [
    STAGE_REQUEST_VERIFICATION,
    STAGE_IDENTITY,
    STAGE_QUERY_TOKEN,
    STAGE_TOKEN_VALIDATION,
    STAGE_ACCESS_VERIFICATION,
    STAGE_QUERY_HASHED_INDEX,
    STAGE_EXTRACT_HASH,
    STAGE_VERIFY_HASH,
    STAGE_FETCH_DATA,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityRole {
    Camera,
    EdgeService,
    FogService,
    Client,
    Admin,
}

impl EntityRole {
    pub const ALL: [EntityRole; 5] = [
        EntityRole::Camera,
        EntityRole::EdgeService,
        EntityRole::FogService,
        EntityRole::Client,
        EntityRole::Admin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityRole::Camera => "camera",
            EntityRole::EdgeService => "edge_service",
            EntityRole::FogService => "fog_service",
            EntityRole::Client => "client",
            EntityRole::Admin => "admin",
        }
    }
}

impl fmt::Display for EntityRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown entity role {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileStatus {
    Active,
    Revoked,
}

impl ProfileStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileStatus::Active => "active",
            ProfileStatus::Revoked => "revoked",
        }
    }
}

impl FromStr for ProfileStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "active" => Ok(ProfileStatus::Active),
            "revoked" => Ok(ProfileStatus::Revoked),
            other => Err(format!("unknown profile status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityProfile {
    pub vid: String,
    pub address: Address,
    pub display_name: String,
    pub entity_role: EntityRole,
    pub registered_at: u64,
    pub status: ProfileStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub object_class: String,
    pub bbox: [i64; 4],
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub frame_id: String,
    pub capture_time: u64,
    pub features: Vec<Feature>,
    pub producer: Address,
}

impl FeatureRecord {
    pub fn index_key(&self) -> String {
        frame_key(&self.frame_id)
    }

    /// Compact JSON with object keys sorted at every level.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("feature record serializes");
        canonical_json(&value).into_bytes()
    }

    pub fn content_hash(&self) -> Hash {
        sha256(&self.canonical_bytes())
    }
}

pub fn frame_key(frame_id: &str) -> String {
    format!("frame:{frame_id}")
}

/// Serializes a JSON value with sorted object keys and no whitespace,
/// independent of how the map type orders its entries.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Deterministic synthetic surveillance records.
pub fn synthetic_records(seed: u64, count: usize, producer: Address, base_time: u64) -> Vec<FeatureRecord> {
    const CLASSES: [&str; 5] = ["person", "car", "bicycle", "bus", "dog"];
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.gen_range(1..=4);
            let features = (0..n)
                .map(|_| {
                    let x = rng.gen_range(0..1800);
                    let y = rng.gen_range(0..1000);
                    Feature {
                        object_class: CLASSES[rng.gen_range(0..CLASSES.len())].to_string(),
                        bbox: [x, y, x + rng.gen_range(10..120), y + rng.gen_range(10..80)],
                        confidence: f64::from(rng.gen_range(500u32..1000)) / 1000.0,
                    }
                })
                .collect();
            FeatureRecord {
                frame_id: format!("{seed:04x}-{i:06}"),
                capture_time: base_time + i as u64,
                features,
                producer,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    Ok,
    NoToken,
    Disabled,
    Expired,
    NotYetValid,
    WrongResource,
    WrongAction,
    IdentityFailed,
}

impl DenyReason {
    pub const ALL: [DenyReason; 8] = [
        DenyReason::Ok,
        DenyReason::NoToken,
        DenyReason::Disabled,
        DenyReason::Expired,
        DenyReason::NotYetValid,
        DenyReason::WrongResource,
        DenyReason::WrongAction,
        DenyReason::IdentityFailed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::Ok => "ok",
            DenyReason::NoToken => "no_token",
            DenyReason::Disabled => "disabled",
            DenyReason::Expired => "expired",
            DenyReason::NotYetValid => "not_yet_valid",
            DenyReason::WrongResource => "wrong_resource",
            DenyReason::WrongAction => "wrong_action",
            DenyReason::IdentityFailed => "identity_failed",
        }
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stage name → microseconds, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageTimings(pub IndexMap<String, u64>);

impl StageTimings {
    pub fn record(&mut self, stage: &str, micros: u64) {
        *self.0.entry(stage.to_string()).or_insert(0) += micros;
    }

    pub fn get(&self, stage: &str) -> Option<u64> {
        self.0.get(stage).copied()
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn stages(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn extend(&mut self, other: &StageTimings) {
        for (k, v) in &other.0 {
            self.record(k, *v);
        }
    }
}

/// Emulates a slower CPU: each timed stage is padded by busy-waiting so its
/// wall time becomes `elapsed / fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throttle {
    fraction: f64,
}

impl Throttle {
    pub fn new(fraction: f64) -> Option<Self> {
        (fraction > 0.0 && fraction <= 1.0).then_some(Self { fraction })
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn pad(&self, elapsed: Duration) {
        if self.fraction >= 1.0 {
            return;
        }
        let extra = elapsed.mul_f64(1.0 / self.fraction - 1.0);
        let until = Instant::now() + extra;
        while Instant::now() < until {
            std::hint::spin_loop();
        }
    }
}

/// Collects stage timings; wraps each measured span with the optional throttle.
#[derive(Debug, Default)]
pub struct StageTimer {
    timings: StageTimings,
    throttle: Option<Throttle>,
}

impl StageTimer {
    pub fn new(throttle: Option<Throttle>) -> Self {
        Self {
            timings: StageTimings::default(),
            throttle,
        }
    }

    pub fn start(&self) -> Instant {
        Instant::now()
    }

    pub fn finish(&mut self, stage: &str, started: Instant) {
        if let Some(t) = &self.throttle {
            t.pad(started.elapsed());
        }
        self.timings.record(stage, started.elapsed().as_micros() as u64);
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let started = self.start();
        let out = f();
        self.finish(stage, started);
        out
    }

    pub fn merge(&mut self, other: &StageTimings) {
        self.timings.extend(other);
    }

    pub fn timings(&self) -> &StageTimings {
        &self.timings
    }

    pub fn into_timings(self) -> StageTimings {
        self.timings
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub granted: bool,
    pub reason: DenyReason,
    pub stage_timings: StageTimings,
}

impl AccessDecision {
    pub fn new(reason: DenyReason, stage_timings: StageTimings) -> Self {
        Self {
            granted: reason == DenyReason::Ok,
            reason,
            stage_timings,
        }
    }
}

/// Enabled flag and validity window, in that order.
pub fn check_token_validity(token: &CapToken, now: u64) -> Result<(), DenyReason> {
    if !token.enabled {
        Err(DenyReason::Disabled)
    } else if now < token.not_before {
        Err(DenyReason::NotYetValid)
    } else if now > token.not_after {
        Err(DenyReason::Expired)
    } else {
        Ok(())
    }
}

pub fn check_access_right(token: &CapToken, resource: &str, action: Action) -> Result<(), DenyReason> {
    if !resource_matches(&token.resource, resource) {
        Err(DenyReason::WrongResource)
    } else if !token.actions.contains(&action) {
        Err(DenyReason::WrongAction)
    } else {
        Ok(())
    }
}

/// The decision sequence without timing, for callers that already hold the
/// identity result and the looked-up token.
pub fn decide(identity_ok: bool, token: Option<&CapToken>, resource: &str, action: Action, now: u64) -> DenyReason {
    if !identity_ok {
        return DenyReason::IdentityFailed;
    }
    let Some(token) = token else {
        return DenyReason::NoToken;
    };
    check_token_validity(token, now)
        .and_then(|()| check_access_right(token, resource, action))
        .err()
        .unwrap_or(DenyReason::Ok)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityRule {
    pub resource: String,
    pub actions: BTreeSet<Action>,
    pub max_window_secs: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyDenial {
    #[error("no rule lets {role} access {resource}")]
    ResourceNotAllowed { role: EntityRole, resource: String },
    #[error("actions not allowed for {role} on {resource}")]
    ActionNotAllowed { role: EntityRole, resource: String },
    #[error("window of {requested}s exceeds the {max}s maximum")]
    WindowTooLong { requested: u64, max: u64 },
    #[error("empty or inverted validity window")]
    InvalidWindow,
    #[error("{role} may not write {kind} contracts")]
    AbiNotAllowed { role: EntityRole, kind: String },
}

/// Management and access-control policy, loaded from `config/policy.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationPolicy {
    /// Contract kinds each role may be granted writer access to.
    pub abi_grants: BTreeMap<EntityRole, BTreeSet<ContractKind>>,
    /// Capability rules keyed by the subject's role.
    pub capabilities: BTreeMap<EntityRole, Vec<CapabilityRule>>,
}

impl Default for AuthorizationPolicy {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_POLICY_JSON).expect("built-in policy parses")
    }
}

pub const DEFAULT_POLICY_JSON: &str = r#"{
  "abi_grants": {
    "edge_service": ["hashed_index"],
    "fog_service": ["capac"],
    "admin": ["capac", "hashed_index"]
  },
  "capabilities": {
    "client": [
      { "resource": "/data/query", "actions": ["GET"], "max_window_secs": 86400 }
    ],
    "admin": [
      { "resource": "/*", "actions": ["GET", "POST", "PUT", "DELETE"], "max_window_secs": 31536000 }
    ]
  }
}
"#;

impl AuthorizationPolicy {
    pub fn allow_abi(&self, role: EntityRole, kind: ContractKind) -> Result<(), PolicyDenial> {
        if self.abi_grants.get(&role).is_some_and(|k| k.contains(&kind)) {
            Ok(())
        } else {
            Err(PolicyDenial::AbiNotAllowed {
                role,
                kind: kind.as_str().to_string(),
            })
        }
    }

    /// A request passes if one rule covers the resource, includes every
    /// requested action and permits the window length.
    pub fn allow_capability(
        &self,
        role: EntityRole,
        resource: &str,
        actions: &BTreeSet<Action>,
        not_before: u64,
        not_after: u64,
    ) -> Result<(), PolicyDenial> {
        if actions.is_empty() || not_after < not_before {
            return Err(PolicyDenial::InvalidWindow);
        }
        let rules: Vec<&CapabilityRule> = self
            .capabilities
            .get(&role)
            .into_iter()
            .flatten()
            .filter(|r| resource_matches(&r.resource, resource))
            .collect();
        if rules.is_empty() {
            return Err(PolicyDenial::ResourceNotAllowed {
                role,
                resource: resource.to_string(),
            });
        }
        let with_actions: Vec<&&CapabilityRule> = rules.iter().filter(|r| actions.is_subset(&r.actions)).collect();
        if with_actions.is_empty() {
            return Err(PolicyDenial::ActionNotAllowed {
                role,
                resource: resource.to_string(),
            });
        }
        let requested = not_after - not_before;
        let max = with_actions.iter().map(|r| r.max_window_secs).max().unwrap_or(0);
        if requested > max {
            return Err(PolicyDenial::WindowTooLong { requested, max });
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RequestError {
    #[error("public key does not match the requester address")]
    KeyMismatch,
    #[error("request signature does not verify")]
    BadSignature,
    #[error("request timestamp {timestamp} is outside the freshness window at {now}")]
    Stale { timestamp: u64, now: u64 },
}

/// Envelope for signed HTTP requests. `body` is the operation-specific
/// payload; the signature covers a domain tag, the requester and the body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedRequest<T> {
    pub requester: Address,
    pub public_key: PublicKey,
    pub timestamp: u64,
    pub body: T,
    pub signature: Signature,
}

pub trait SignedBody {
    const DOMAIN: &'static str;
    fn encode_body(&self, enc: &mut Encoder);
}

impl<T: SignedBody> SignedRequest<T> {
    fn signing_bytes(requester: &Address, timestamp: u64, body: &T) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(T::DOMAIN).value(requester).u64(timestamp);
        body.encode_body(&mut enc);
        enc.finish()
    }

    pub fn sign(account: &Account, timestamp: u64, body: T) -> Self {
        let requester = account.address();
        let signature = account.sign(&Self::signing_bytes(&requester, timestamp, &body));
        Self {
            requester,
            public_key: account.public_key(),
            timestamp,
            body,
            signature,
        }
    }

    pub fn verify(&self, now: u64) -> Result<(), RequestError> {
        if self.public_key.address() != self.requester {
            return Err(RequestError::KeyMismatch);
        }
        if self.timestamp.abs_diff(now) > FRESHNESS_WINDOW_SECS {
            return Err(RequestError::Stale {
                timestamp: self.timestamp,
                now,
            });
        }
        let payload = Self::signing_bytes(&self.requester, self.timestamp, &self.body);
        if self.public_key.verify(&payload, &self.signature) {
            Ok(())
        } else {
            Err(RequestError::BadSignature)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterBody {
    pub vid: String,
    pub display_name: String,
    pub entity_role: EntityRole,
}

impl SignedBody for RegisterBody {
    const DOMAIN: &'static str = "blendmas-register";
    fn encode_body(&self, enc: &mut Encoder) {
        enc.str(&self.vid).str(&self.display_name).str(self.entity_role.as_str());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbiGrantBody {
    pub contract_kind: ContractKind,
}

impl SignedBody for AbiGrantBody {
    const DOMAIN: &'static str = "blendmas-abi-grant";
    fn encode_body(&self, enc: &mut Encoder) {
        enc.str(self.contract_kind.as_str());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBody {
    pub subject: Address,
    pub resource: String,
    pub actions: BTreeSet<Action>,
    pub not_before: u64,
    pub not_after: u64,
}

impl SignedBody for TokenBody {
    const DOMAIN: &'static str = "blendmas-token";
    fn encode_body(&self, enc: &mut Encoder) {
        enc.value(&self.subject).str(&self.resource);
        enc.u8(self.actions.iter().fold(0u8, |m, a| m | a.bit()));
        enc.u64(self.not_before).u64(self.not_after);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokeTokenBody {
    pub subject: Address,
    pub resource: String,
}

impl SignedBody for RevokeTokenBody {
    const DOMAIN: &'static str = "blendmas-token-revoke";
    fn encode_body(&self, enc: &mut Encoder) {
        enc.value(&self.subject).str(&self.resource);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataQueryBody {
    pub resource: String,
    pub action: Action,
    pub frame_id: String,
}

impl SignedBody for DataQueryBody {
    const DOMAIN: &'static str = "blendmas-data-query";
    fn encode_body(&self, enc: &mut Encoder) {
        enc.str(&self.resource).u8(self.action.bit()).str(&self.frame_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(b: u8) -> Address {
        Address([b; 20])
    }

    fn token(resource: &str, actions: &[Action], window: (u64, u64), enabled: bool) -> CapToken {
        CapToken {
            token_id: [7; 16],
            issuer: addr(1),
            subject: addr(2),
            resource: resource.into(),
            actions: actions.iter().copied().collect(),
            not_before: window.0,
            not_after: window.1,
            enabled,
        }
    }

    #[test]
    fn canonical_json_sorts_keys_and_is_compact() {
        let v: Value = serde_json::from_str(r#"{"b":1,"a":{"z":[1,{"y":2,"x":3}],"c":"q"}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":{"c":"q","z":[1,{"x":3,"y":2}]},"b":1}"#);
    }

    #[test]
    fn feature_record_hash_is_stable() {
        let r = FeatureRecord {
            frame_id: "f1".into(),
            capture_time: 1_700_000_000,
            features: vec![Feature {
                object_class: "person".into(),
                bbox: [1, 2, 3, 4],
                confidence: 0.5,
            }],
            producer: addr(3),
        };
        let expected = format!(
            r#"{{"capture_time":1700000000,"features":[{{"bbox":[1,2,3,4],"confidence":0.5,"object_class":"person"}}],"frame_id":"f1","producer":"{}"}}"#,
            addr(3)
        );
        assert_eq!(String::from_utf8(r.canonical_bytes()).unwrap(), expected);
        assert_eq!(r.content_hash(), sha256(expected.as_bytes()));
        assert_eq!(r.clone().content_hash(), r.content_hash());
        assert_eq!(r.index_key(), "frame:f1");
    }

    #[test]
    fn every_single_field_perturbation_changes_the_hash() {
        let base = synthetic_records(9, 1, addr(4), 100).remove(0);
        let mut record = base.clone();
        record.features = (0..3)
            .map(|i| Feature {
                object_class: "car".into(),
                bbox: [i, i + 1, i + 2, i + 3],
                confidence: 0.9,
            })
            .collect();
        let h = record.content_hash();
        for f in 0..3 {
            for k in 0..4 {
                let mut m = record.clone();
                m.features[f].bbox[k] += 1;
                assert_ne!(m.content_hash(), h, "feature {f} bbox {k}");
            }
        }
    }

    #[test]
    fn synthetic_records_are_deterministic_and_distinct() {
        let a = synthetic_records(1, 50, addr(5), 0);
        assert_eq!(a, synthetic_records(1, 50, addr(5), 0));
        let hashes: BTreeSet<Hash> = a.iter().map(FeatureRecord::content_hash).collect();
        assert_eq!(hashes.len(), 50);
    }

    #[test]
    fn decision_truth_table() {
        let get = [Action::Get];
        let cases: Vec<(bool, Option<CapToken>, &str, Action, DenyReason)> = vec![
            (true, Some(token("/data/query", &get, (10, 20), true)), "/data/query", Action::Get, DenyReason::Ok),
            (true, None, "/data/query", Action::Get, DenyReason::NoToken),
            (true, Some(token("/data/query", &get, (10, 20), false)), "/data/query", Action::Get, DenyReason::Disabled),
            (true, Some(token("/data/query", &get, (0, 14), true)), "/data/query", Action::Get, DenyReason::Expired),
            (true, Some(token("/data/query", &get, (16, 20), true)), "/data/query", Action::Get, DenyReason::NotYetValid),
            (true, Some(token("/data", &get, (10, 20), true)), "/data/query", Action::Get, DenyReason::WrongResource),
            (true, Some(token("/data/query", &get, (10, 20), true)), "/data/query", Action::Post, DenyReason::WrongAction),
            (false, Some(token("/data/query", &get, (10, 20), true)), "/data/query", Action::Get, DenyReason::IdentityFailed),
        ];
        let reached: BTreeSet<&str> = cases
            .iter()
            .map(|(id, tok, res, act, want)| {
                let got = decide(*id, tok.as_ref(), res, *act, 15);
                assert_eq!(got, *want);
                got.as_str()
            })
            .collect();
        assert_eq!(reached.len(), DenyReason::ALL.len());
    }

    #[test]
    fn window_bounds_are_inclusive() {
        let t = token("/x", &[Action::Get], (10, 20), true);
        assert_eq!(check_token_validity(&t, 10), Ok(()));
        assert_eq!(check_token_validity(&t, 20), Ok(()));
        assert_eq!(check_token_validity(&t, 9), Err(DenyReason::NotYetValid));
        assert_eq!(check_token_validity(&t, 21), Err(DenyReason::Expired));
    }

    #[test]
    fn decision_invariant_granted_iff_ok() {
        for r in DenyReason::ALL {
            let d = AccessDecision::new(r, StageTimings::default());
            assert_eq!(d.granted, r == DenyReason::Ok);
        }
    }

    #[test]
    fn default_policy_window_boundary() {
        let p = AuthorizationPolicy::default();
        let get: BTreeSet<Action> = [Action::Get].into();
        assert_eq!(p.allow_capability(EntityRole::Client, "/data/query", &get, 0, 86_400), Ok(()));
        assert_eq!(
            p.allow_capability(EntityRole::Client, "/data/query", &get, 0, 86_401),
            Err(PolicyDenial::WindowTooLong { requested: 86_401, max: 86_400 })
        );
        let delete: BTreeSet<Action> = [Action::Delete].into();
        assert!(matches!(
            p.allow_capability(EntityRole::Client, "/admin/users", &delete, 0, 10),
            Err(PolicyDenial::ResourceNotAllowed { .. })
        ));
        assert!(matches!(
            p.allow_capability(EntityRole::Client, "/data/query", &delete, 0, 10),
            Err(PolicyDenial::ActionNotAllowed { .. })
        ));
        assert_eq!(p.allow_capability(EntityRole::Admin, "/admin/users", &delete, 0, 10), Ok(()));
    }

    #[test]
    fn default_policy_abi_table() {
        let p = AuthorizationPolicy::default();
        assert!(p.allow_abi(EntityRole::EdgeService, ContractKind::HashedIndex).is_ok());
        assert!(p.allow_abi(EntityRole::Client, ContractKind::Capac).is_err());
        assert!(p.allow_abi(EntityRole::FogService, ContractKind::Capac).is_ok());
        assert!(p.allow_abi(EntityRole::Admin, ContractKind::Capac).is_ok());
    }

    #[test]
    fn signed_requests_check_key_freshness_and_signature() {
        let a = Account::from_secret(&[3; 32]);
        let body = DataQueryBody {
            resource: "/data/query".into(),
            action: Action::Get,
            frame_id: "f".into(),
        };
        let req = SignedRequest::sign(&a, 1000, body);
        assert_eq!(req.verify(1000), Ok(()));
        assert_eq!(req.verify(1030), Ok(()));
        assert!(matches!(req.verify(1031), Err(RequestError::Stale { .. })));
        let mut tampered = req.clone();
        tampered.body.frame_id = "g".into();
        assert_eq!(tampered.verify(1000), Err(RequestError::BadSignature));
        let mut swapped = req.clone();
        swapped.public_key = Account::generate().public_key();
        assert_eq!(swapped.verify(1000), Err(RequestError::KeyMismatch));
    }

    #[test]
    fn stage_timings_keep_insertion_order() {
        let mut timer = StageTimer::new(None);
        for s in SERVE_STAGES {
            timer.time(s, || ());
        }
        let t = timer.into_timings();
        assert_eq!(t.stages().collect::<Vec<_>>(), SERVE_STAGES.to_vec());
        let json = serde_json::to_string(&t).unwrap();
        let back: StageTimings = serde_json::from_str(&json).unwrap();
        assert_eq!(back.stages().collect::<Vec<_>>(), SERVE_STAGES.to_vec());
    }

    #[test]
    fn throttle_stretches_stages() {
        let throttle = Throttle::new(0.25).unwrap();
        let mut timer = StageTimer::new(Some(throttle));
        timer.time("spin", || std::thread::sleep(Duration::from_millis(2)));
        assert!(timer.timings().get("spin").unwrap() >= 7_000);
        assert!(Throttle::new(0.0).is_none());
        assert!(Throttle::new(1.5).is_none());
    }
}
