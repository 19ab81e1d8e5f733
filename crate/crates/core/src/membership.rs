//! Oracle-administered membership: join requests, the signed static-node
//! roster, revocation, and roster installation on recipients.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::consensus::{Validator, ValidatorHistory, ValidatorSet};
use crate::crypto::{Account, Address, PublicKey, Signature};

const JOIN_DOMAIN: &str = "blendmas-join";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Miner,
    Service,
    Client,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Miner => "miner",
            Role::Service => "service",
            Role::Client => "client",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Role::Miner => 0,
            Role::Service => 1,
            Role::Client => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        match tag {
            0 => Ok(Role::Miner),
            1 => Ok(Role::Service),
            2 => Ok(Role::Client),
            _ => Err(DecodeError::InvalidValue("role tag")),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "miner" => Ok(Role::Miner),
            "service" => Ok(Role::Service),
            "client" => Ok(Role::Client),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub address: Address,
    pub public_key: PublicKey,
    pub host: String,
    pub port: u16,
    pub role: Role,
    /// Unix seconds.
    pub enrolled_at: u64,
}

impl Encode for NodeRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.address)
            .value(&self.public_key)
            .str(&self.host)
            .u16(self.port)
            .u8(self.role.tag())
            .u64(self.enrolled_at);
    }
}

impl Decode for NodeRecord {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(NodeRecord {
            address: dec.value()?,
            public_key: dec.value()?,
            host: dec.string()?,
            port: dec.u16()?,
            role: Role::from_tag(dec.u8()?)?,
            enrolled_at: dec.u64()?,
        })
    }
}

/// Entry on the revocation list carried by every roster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revocation {
    pub address: Address,
    pub reason: String,
    /// Epoch of the roster that removed the member.
    pub epoch: u64,
    /// Oracle clock at revocation, unix milliseconds.
    pub revoked_at_ms: u64,
    /// Set when the admin lifts the ban; the entry stays for block validation.
    pub cleared: bool,
}

impl Encode for Revocation {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.address)
            .str(&self.reason)
            .u64(self.epoch)
            .u64(self.revoked_at_ms)
            .bool(self.cleared);
    }
}

impl Decode for Revocation {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Revocation {
            address: dec.value()?,
            reason: dec.string()?,
            epoch: dec.u64()?,
            revoked_at_ms: dec.u64()?,
            cleared: dec.bool()?,
        })
    }
}

/// The oracle-signed roster. The JSON form produced by serde is the
/// human-readable mirror written next to the canonical binary file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticNodesFile {
    pub epoch: u64,
    pub records: Vec<NodeRecord>,
    #[serde(default)]
    pub revocations: Vec<Revocation>,
    pub oracle_signature: Signature,
}

impl StaticNodesFile {
    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.u64(self.epoch).list(&self.records).list(&self.revocations);
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        enc.finish()
    }

    pub fn verify(&self, oracle_key: &PublicKey) -> bool {
        oracle_key.verify(&self.signing_bytes(), &self.oracle_signature)
    }

    pub fn record(&self, address: &Address) -> Option<&NodeRecord> {
        self.records.iter().find(|r| r.address == *address)
    }

    pub fn is_enrolled(&self, address: &Address) -> bool {
        self.record(address).is_some()
    }

    pub fn is_banned(&self, address: &Address) -> bool {
        self.revocations.iter().any(|r| r.address == *address && !r.cleared)
    }

    pub fn records_with_role(&self, role: Role) -> impl Iterator<Item = &NodeRecord> {
        self.records.iter().filter(move |r| r.role == role)
    }

    pub fn validator_set(&self) -> ValidatorSet {
        ValidatorSet::new(
            self.epoch,
            self.records_with_role(Role::Miner).map(|r| Validator {
                address: r.address,
                public_key: r.public_key,
            }),
        )
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("roster serializes")
    }
}

impl Encode for StaticNodesFile {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.value(&self.oracle_signature);
    }
}

impl Decode for StaticNodesFile {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(StaticNodesFile {
            epoch: dec.u64()?,
            records: dec.list()?,
            revocations: dec.list()?,
            oracle_signature: dec.value()?,
        })
    }
}

/// Node information submitted with a join request (no enrollment time yet).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinCandidate {
    pub address: Address,
    pub public_key: PublicKey,
    pub host: String,
    pub port: u16,
    pub role: Role,
}

impl Encode for JoinCandidate {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.address)
            .value(&self.public_key)
            .str(&self.host)
            .u16(self.port)
            .u8(self.role.tag());
    }
}

impl JoinCandidate {
    pub fn for_account(account: &Account, host: impl Into<String>, port: u16, role: Role) -> Self {
        Self {
            address: account.address(),
            public_key: account.public_key(),
            host: host.into(),
            port,
            role,
        }
    }
}

/// Bytes the candidate signs to prove key ownership for a challenge.
pub fn join_proof_payload(candidate: &JoinCandidate, challenge: &[u8; 16]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str(JOIN_DOMAIN).value(candidate).fixed(challenge);
    enc.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRequest {
    pub candidate: JoinCandidate,
    pub proof: Signature,
}

impl JoinRequest {
    pub fn sign(account: &Account, candidate: JoinCandidate, challenge: &[u8; 16]) -> Self {
        let proof = account.sign(&join_proof_payload(&candidate, challenge));
        Self { candidate, proof }
    }

    pub fn verify(&self, challenge: &[u8; 16]) -> bool {
        self.candidate.public_key.address() == self.candidate.address
            && self
                .candidate
                .public_key
                .verify(&join_proof_payload(&self.candidate, challenge), &self.proof)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approval {
    Auto,
    Manual,
}

/// Role-based identification policy. The JSON form maps role → approval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityPolicy(pub BTreeMap<Role, Approval>);

impl Default for IdentityPolicy {
    fn default() -> Self {
        IdentityPolicy(BTreeMap::from([
            (Role::Miner, Approval::Manual),
            (Role::Service, Approval::Auto),
            (Role::Client, Approval::Auto),
        ]))
    }
}

impl IdentityPolicy {
    /// Roles missing from the table require manual approval.
    pub fn approval_for(&self, role: Role) -> Approval {
        self.0.get(&role).copied().unwrap_or(Approval::Manual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingStatus {
    AwaitingProof,
    AwaitingAdmin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingJoin {
    pub id: u64,
    pub candidate: JoinCandidate,
    #[serde(with = "hex_challenge")]
    pub challenge: [u8; 16],
    pub status: PendingStatus,
}

mod hex_challenge {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let raw = hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)?;
        raw.try_into().map_err(|_| serde::de::Error::custom("challenge must be 16 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinOutcome {
    Approved(StaticNodesFile),
    AwaitingAdmin,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MembershipError {
    #[error("{0} is already enrolled")]
    AlreadyEnrolled(Address),
    #[error("{0} is banned")]
    Banned(Address),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("join proof does not verify")]
    AuthenticationFailed,
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
}

/// Persistent oracle state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleState {
    pub history: Vec<StaticNodesFile>,
    pub pending: BTreeMap<u64, PendingJoin>,
    pub next_id: u64,
}

/// The network administrator. All roster mutations go through `&mut self`,
/// so the owner serializes them.
#[derive(Debug)]
pub struct Oracle {
    account: Account,
    policy: IdentityPolicy,
    state: OracleState,
}

impl Oracle {
    pub fn new(account: Account, policy: IdentityPolicy) -> Self {
        let mut genesis = StaticNodesFile {
            epoch: 0,
            records: Vec::new(),
            revocations: Vec::new(),
            oracle_signature: Signature::EMPTY,
        };
        genesis.oracle_signature = account.sign(&genesis.signing_bytes());
        Self {
            account,
            policy,
            state: OracleState {
                history: vec![genesis],
                pending: BTreeMap::new(),
                next_id: 1,
            },
        }
    }

    pub fn restore(account: Account, policy: IdentityPolicy, state: OracleState) -> Self {
        assert!(!state.history.is_empty(), "oracle state needs at least the epoch-0 roster");
        Self { account, policy, state }
    }

    pub fn state(&self) -> &OracleState {
        &self.state
    }

    pub fn public_key(&self) -> PublicKey {
        self.account.public_key()
    }

    pub fn address(&self) -> Address {
        self.account.address()
    }

    pub fn roster(&self) -> &StaticNodesFile {
        self.state.history.last().expect("history is never empty")
    }

    pub fn history(&self) -> &[StaticNodesFile] {
        &self.state.history
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingJoin> {
        self.state.pending.values()
    }

    pub fn pending_join(&self, id: u64) -> Option<&PendingJoin> {
        self.state.pending.get(&id)
    }

    fn admissible(&self, candidate: &JoinCandidate) -> Result<(), MembershipError> {
        if candidate.public_key.address() != candidate.address {
            return Err(MembershipError::InvalidCandidate(
                "address is not derived from the public key".into(),
            ));
        }
        let roster = self.roster();
        if roster.is_enrolled(&candidate.address) {
            return Err(MembershipError::AlreadyEnrolled(candidate.address));
        }
        if roster.is_banned(&candidate.address) {
            return Err(MembershipError::Banned(candidate.address));
        }
        Ok(())
    }

    /// Stores a pending request and returns its id and a fresh 16-byte challenge.
    pub fn request_join(&mut self, candidate: JoinCandidate) -> Result<(u64, [u8; 16]), MembershipError> {
        self.admissible(&candidate)?;
        let id = self.state.next_id;
        self.state.next_id += 1;
        let challenge: [u8; 16] = rand::random();
        self.state.pending.insert(
            id,
            PendingJoin {
                id,
                candidate,
                challenge,
                status: PendingStatus::AwaitingProof,
            },
        );
        Ok((id, challenge))
    }

    /// Checks the proof and applies the identity policy. Roles that need
    /// manual approval stay pending until [`Oracle::admin_confirm`].
    pub fn approve_join(&mut self, id: u64, proof: Signature, now_secs: u64) -> Result<JoinOutcome, MembershipError> {
        let pending = self
            .state
            .pending
            .get(&id)
            .cloned()
            .ok_or_else(|| MembershipError::NotFound(format!("pending request {id}")))?;
        if pending.status == PendingStatus::AwaitingAdmin {
            return Ok(JoinOutcome::AwaitingAdmin);
        }
        let request = JoinRequest {
            candidate: pending.candidate.clone(),
            proof,
        };
        if !request.verify(&pending.challenge) {
            return Err(MembershipError::AuthenticationFailed);
        }
        match self.policy.approval_for(pending.candidate.role) {
            Approval::Auto => self.enroll(id, now_secs).map(JoinOutcome::Approved),
            Approval::Manual => {
                if let Some(p) = self.state.pending.get_mut(&id) {
                    p.status = PendingStatus::AwaitingAdmin;
                }
                Ok(JoinOutcome::AwaitingAdmin)
            }
        }
    }

    /// Admin confirmation for a request whose proof already verified.
    pub fn admin_confirm(&mut self, id: u64, now_secs: u64) -> Result<StaticNodesFile, MembershipError> {
        match self.state.pending.get(&id) {
            None => Err(MembershipError::NotFound(format!("pending request {id}"))),
            Some(p) if p.status != PendingStatus::AwaitingAdmin => Err(MembershipError::Conflict(format!(
                "request {id} has not presented a valid proof"
            ))),
            Some(_) => self.enroll(id, now_secs),
        }
    }

    fn enroll(&mut self, id: u64, now_secs: u64) -> Result<StaticNodesFile, MembershipError> {
        let candidate = self.state.pending[&id].candidate.clone();
        self.admissible(&candidate)?;
        let roster = self.roster();
        // Port 0 marks a participant without a listening endpoint.
        if candidate.port != 0
            && roster
                .records
                .iter()
                .any(|r| r.host == candidate.host && r.port == candidate.port)
        {
            return Err(MembershipError::Conflict(format!(
                "{}:{} is already in use",
                candidate.host, candidate.port
            )));
        }
        let mut records = roster.records.clone();
        records.push(NodeRecord {
            address: candidate.address,
            public_key: candidate.public_key,
            host: candidate.host,
            port: candidate.port,
            role: candidate.role,
            enrolled_at: now_secs,
        });
        let revocations = roster.revocations.clone();
        self.state.pending.remove(&id);
        Ok(self.publish(records, revocations))
    }

    pub fn revoke_member(&mut self, address: &Address, reason: &str, now_ms: u64) -> Result<StaticNodesFile, MembershipError> {
        let roster = self.roster();
        if !roster.is_enrolled(address) {
            return Err(MembershipError::NotFound(address.to_string()));
        }
        let records = roster.records.iter().filter(|r| r.address != *address).cloned().collect();
        let mut revocations = roster.revocations.clone();
        revocations.push(Revocation {
            address: *address,
            reason: reason.to_string(),
            epoch: roster.epoch + 1,
            revoked_at_ms: now_ms,
            cleared: false,
        });
        Ok(self.publish(records, revocations))
    }

    /// Lifts a ban so the address may apply again.
    pub fn clear_ban(&mut self, address: &Address) -> Result<StaticNodesFile, MembershipError> {
        let roster = self.roster();
        if !roster.is_banned(address) {
            return Err(MembershipError::NotFound(format!("no active ban for {address}")));
        }
        let records = roster.records.clone();
        let mut revocations = roster.revocations.clone();
        for r in revocations.iter_mut().filter(|r| r.address == *address) {
            r.cleared = true;
        }
        Ok(self.publish(records, revocations))
    }

    fn publish(&mut self, records: Vec<NodeRecord>, revocations: Vec<Revocation>) -> StaticNodesFile {
        let mut file = StaticNodesFile {
            epoch: self.roster().epoch + 1,
            records,
            revocations,
            oracle_signature: Signature::EMPTY,
        };
        file.oracle_signature = self.account.sign(&file.signing_bytes());
        self.state.history.push(file.clone());
        file
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RosterError {
    #[error("roster signature does not verify under the oracle key")]
    BadSignature,
    #[error("stale roster: local epoch {local}, offered {offered}")]
    Stale { local: u64, offered: u64 },
}

/// A participant's installed roster plus the validator history derived from
/// every roster it has seen.
#[derive(Debug, Clone)]
pub struct LocalRoster {
    oracle_key: PublicKey,
    current: Option<StaticNodesFile>,
    validators: ValidatorHistory,
}

impl LocalRoster {
    pub fn new(oracle_key: PublicKey) -> Self {
        Self {
            oracle_key,
            current: None,
            validators: ValidatorHistory::default(),
        }
    }

    pub fn oracle_key(&self) -> &PublicKey {
        &self.oracle_key
    }

    pub fn oracle_address(&self) -> Address {
        self.oracle_key.address()
    }

    pub fn current(&self) -> Option<&StaticNodesFile> {
        self.current.as_ref()
    }

    pub fn epoch(&self) -> Option<u64> {
        self.current.as_ref().map(|f| f.epoch)
    }

    pub fn validators(&self) -> &ValidatorHistory {
        &self.validators
    }

    pub fn current_validators(&self) -> ValidatorSet {
        self.current.as_ref().map(StaticNodesFile::validator_set).unwrap_or_default()
    }

    pub fn is_enrolled(&self, address: &Address) -> bool {
        self.current.as_ref().is_some_and(|f| f.is_enrolled(address))
    }

    pub fn record(&self, address: &Address) -> Option<&NodeRecord> {
        self.current.as_ref().and_then(|f| f.record(address))
    }

    fn learn(&mut self, file: &StaticNodesFile) {
        self.validators.insert_set(file.validator_set());
        for r in &file.revocations {
            self.validators.note_revocation(r.address, r.epoch, r.revoked_at_ms);
        }
    }

    /// Installs `file` if it is oracle-signed and newer than the local epoch.
    pub fn install(&mut self, file: StaticNodesFile) -> Result<(), RosterError> {
        if !file.verify(&self.oracle_key) {
            return Err(RosterError::BadSignature);
        }
        if let Some(local) = self.epoch() {
            if file.epoch <= local {
                return Err(RosterError::Stale {
                    local,
                    offered: file.epoch,
                });
            }
        }
        self.learn(&file);
        self.current = Some(file);
        Ok(())
    }

    /// Records an older signed roster for block validation without changing the current one.
    pub fn learn_history(&mut self, file: &StaticNodesFile) -> Result<(), RosterError> {
        if !file.verify(&self.oracle_key) {
            return Err(RosterError::BadSignature);
        }
        self.learn(file);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle() -> Oracle {
        Oracle::new(Account::from_secret(&[200; 32]), IdentityPolicy::default())
    }

    fn enroll(oracle: &mut Oracle, account: &Account, port: u16, role: Role) -> StaticNodesFile {
        let candidate = JoinCandidate::for_account(account, "127.0.0.1", port, role);
        let (id, challenge) = oracle.request_join(candidate.clone()).unwrap();
        let req = JoinRequest::sign(account, candidate, &challenge);
        match oracle.approve_join(id, req.proof, 100).unwrap() {
            JoinOutcome::Approved(file) => file,
            JoinOutcome::AwaitingAdmin => oracle.admin_confirm(id, 100).unwrap(),
        }
    }

    #[test]
    fn client_is_auto_approved() {
        let mut o = oracle();
        let a = Account::generate();
        let file = enroll(&mut o, &a, 9000, Role::Client);
        assert_eq!(file.epoch, 1);
        assert!(file.is_enrolled(&a.address()));
        assert!(file.verify(&o.public_key()));
        assert_eq!(
            o.request_join(JoinCandidate::for_account(&a, "127.0.0.1", 9001, Role::Client)),
            Err(MembershipError::AlreadyEnrolled(a.address()))
        );
    }

    #[test]
    fn wrong_key_proof_fails() {
        let mut o = oracle();
        let a = Account::generate();
        let candidate = JoinCandidate::for_account(&a, "h", 1, Role::Service);
        let (id, challenge) = o.request_join(candidate.clone()).unwrap();
        let forged = JoinRequest::sign(&Account::generate(), candidate, &challenge);
        assert_eq!(o.approve_join(id, forged.proof, 1), Err(MembershipError::AuthenticationFailed));
        assert!(matches!(o.approve_join(77, forged.proof, 1), Err(MembershipError::NotFound(_))));
    }

    #[test]
    fn policy_table_walkthrough() {
        for (role, needs_admin) in [(Role::Miner, true), (Role::Service, false), (Role::Client, false)] {
            let mut o = oracle();
            let a = Account::generate();
            let candidate = JoinCandidate::for_account(&a, "h", 1, role);
            let (id, challenge) = o.request_join(candidate.clone()).unwrap();
            let req = JoinRequest::sign(&a, candidate, &challenge);
            let outcome = o.approve_join(id, req.proof, 5).unwrap();
            assert_eq!(outcome == JoinOutcome::AwaitingAdmin, needs_admin, "{role}");
            if needs_admin {
                assert_eq!(o.roster().epoch, 0);
                assert_eq!(o.pending_join(id).unwrap().status, PendingStatus::AwaitingAdmin);
                let file = o.admin_confirm(id, 6).unwrap();
                assert_eq!(file.validator_set().addresses(), vec![a.address()]);
            }
        }
    }

    #[test]
    fn admin_cannot_confirm_without_proof() {
        let mut o = oracle();
        let a = Account::generate();
        let (id, _) = o.request_join(JoinCandidate::for_account(&a, "h", 1, Role::Miner)).unwrap();
        assert!(matches!(o.admin_confirm(id, 1), Err(MembershipError::Conflict(_))));
    }

    #[test]
    fn host_port_must_be_unique() {
        let mut o = oracle();
        enroll(&mut o, &Account::generate(), 7000, Role::Service);
        let b = Account::generate();
        let candidate = JoinCandidate::for_account(&b, "127.0.0.1", 7000, Role::Service);
        let (id, challenge) = o.request_join(candidate.clone()).unwrap();
        let req = JoinRequest::sign(&b, candidate, &challenge);
        assert!(matches!(o.approve_join(id, req.proof, 1), Err(MembershipError::Conflict(_))));
    }

    #[test]
    fn revoke_bans_and_shrinks_validators() {
        let mut o = oracle();
        let miners: Vec<Account> = (0..3).map(|_| Account::generate()).collect();
        for (i, m) in miners.iter().enumerate() {
            enroll(&mut o, m, 8000 + i as u16, Role::Miner);
        }
        let before = o.roster().validator_set();
        assert_eq!(before.len(), 3);
        let b = &miners[1];
        let file = o.revoke_member(&b.address(), "misbehaving", 5_000).unwrap();
        assert_eq!(file.epoch, before.epoch + 1);
        assert_eq!(file.validator_set().len(), 2);
        assert!(!file.validator_set().contains(&b.address()));
        assert!(file.is_banned(&b.address()));
        assert_eq!(
            o.request_join(JoinCandidate::for_account(b, "127.0.0.1", 8001, Role::Miner)),
            Err(MembershipError::Banned(b.address()))
        );
        assert!(matches!(o.revoke_member(&b.address(), "again", 1), Err(MembershipError::NotFound(_))));

        let cleared = o.clear_ban(&b.address()).unwrap();
        assert!(!cleared.is_banned(&b.address()));
        assert!(o.request_join(JoinCandidate::for_account(b, "127.0.0.1", 8001, Role::Miner)).is_ok());
    }

    #[test]
    fn recipients_accept_only_newer_signed_rosters() {
        let mut o = oracle();
        let f1 = enroll(&mut o, &Account::generate(), 1, Role::Client);
        let f2 = enroll(&mut o, &Account::generate(), 2, Role::Client);
        let mut local = LocalRoster::new(o.public_key());
        local.install(f1.clone()).unwrap();
        local.install(f2.clone()).unwrap();
        assert_eq!(local.install(f1), Err(RosterError::Stale { local: 2, offered: 1 }));
        assert_eq!(local.epoch(), Some(2));

        let mut forged = f2.clone();
        forged.epoch = 3;
        forged.records[0].port ^= 1;
        let mut fresh = LocalRoster::new(o.public_key());
        assert_eq!(fresh.install(forged), Err(RosterError::BadSignature));
        assert_eq!(fresh.epoch(), None);
    }

    #[test]
    fn every_roster_change_bumps_the_epoch() {
        let mut o = oracle();
        let mut epochs = vec![o.roster().epoch];
        let a = Account::generate();
        epochs.push(enroll(&mut o, &a, 1, Role::Client).epoch);
        epochs.push(o.revoke_member(&a.address(), "x", 1).unwrap().epoch);
        epochs.push(o.clear_ban(&a.address()).unwrap().epoch);
        assert!(epochs.windows(2).all(|w| w[1] == w[0] + 1));
        assert!(o.history().iter().all(|f| f.verify(&o.public_key())));
    }

    #[test]
    fn roster_canonical_and_json_forms_agree() {
        let mut o = oracle();
        let file = enroll(&mut o, &Account::generate(), 1, Role::Miner);
        let decoded = StaticNodesFile::from_canonical_bytes(&file.to_canonical_bytes()).unwrap();
        let mirrored: StaticNodesFile = serde_json::from_str(&file.to_json_pretty()).unwrap();
        assert_eq!(decoded, file);
        assert_eq!(mirrored, file);
        let json: serde_json::Value = serde_json::from_str(&file.to_json_pretty()).unwrap();
        let rec = &json["records"][0];
        for field in ["address", "public_key", "host", "port", "role", "enrolled_at"] {
            assert!(rec.get(field).is_some(), "missing {field}");
        }
    }
}
