//! Built-in deterministic contracts: the capability-token registry (`capac`)
//! and the hashed-index registry (`hashed_index`).
//!
//! Every handler is a pure function of (storage, args, caller, height). The
//! function names and argument encodings form the ABI documented in
//! `docs/ABI.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::crypto::{sha256_concat, Address, Hash, ADDRESS_LEN, HASH_LEN};

pub const FN_DEPLOY: &str = "deploy";
pub const FN_GRANT_WRITER: &str = "grant_writer";
pub const FN_REVOKE_WRITER: &str = "revoke_writer";
pub const FN_SET_TOKEN: &str = "set_token";
pub const FN_REVOKE_TOKEN: &str = "revoke_token";
pub const FN_QUERY_TOKEN: &str = "query_token";
pub const FN_RECORD: &str = "record";
pub const FN_QUERY: &str = "query";

/// Target of `deploy` transactions.
pub const SYSTEM_ADDRESS: Address = Address::ZERO;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("unknown contract kind {0:?}")]
    UnknownKind(String),
    #[error("no contract at {0}")]
    NotFound(Address),
    #[error("function {function:?} is not part of the {kind} ABI")]
    UnknownFunction { kind: String, function: String },
    #[error("function {0:?} is read-only and cannot be sent as a transaction")]
    ReadOnly(String),
    #[error("caller is not the contract owner")]
    NotOwner,
    #[error("caller is not an authorized writer")]
    NotAuthorized,
    #[error("malformed token: {0}")]
    MalformedToken(&'static str),
    #[error("no token for the given subject and resource")]
    NoSuchToken,
    #[error("key {0:?} is already recorded and immutable")]
    ImmutableKey(String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("contract address collision at {0}")]
    AddressCollision(Address),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractKind {
    Capac,
    HashedIndex,
}

impl ContractKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContractKind::Capac => "capac",
            ContractKind::HashedIndex => "hashed_index",
        }
    }

    /// Functions accepted inside transactions.
    pub fn write_functions(self) -> &'static [&'static str] {
        match self {
            ContractKind::Capac => &[FN_GRANT_WRITER, FN_REVOKE_WRITER, FN_SET_TOKEN, FN_REVOKE_TOKEN],
            ContractKind::HashedIndex => &[FN_GRANT_WRITER, FN_REVOKE_WRITER, FN_RECORD],
        }
    }

    pub fn read_functions(self) -> &'static [&'static str] {
        match self {
            ContractKind::Capac => &[FN_QUERY_TOKEN],
            ContractKind::HashedIndex => &[FN_QUERY],
        }
    }

    fn tag(self) -> u8 {
        match self {
            ContractKind::Capac => 0,
            ContractKind::HashedIndex => 1,
        }
    }
}

impl fmt::Display for ContractKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContractKind {
    type Err = ContractError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "capac" => Ok(ContractKind::Capac),
            "hashed_index" => Ok(ContractKind::HashedIndex),
            other => Err(ContractError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Get,
    Post,
    Put,
    Delete,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Get, Action::Post, Action::Put, Action::Delete];

    pub fn bit(self) -> u8 {
        match self {
            Action::Get => 0b0001,
            Action::Post => 0b0010,
            Action::Put => 0b0100,
            Action::Delete => 0b1000,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Get => "GET",
            Action::Post => "POST",
            Action::Put => "PUT",
            Action::Delete => "DELETE",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

/// Capability token binding a subject to a resource, an action set and a validity window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapToken {
    #[serde(with = "hex_16")]
    pub token_id: [u8; 16],
    pub issuer: Address,
    pub subject: Address,
    pub resource: String,
    pub actions: BTreeSet<Action>,
    pub not_before: u64,
    pub not_after: u64,
    pub enabled: bool,
}

impl CapToken {
    pub fn check_well_formed(&self) -> Result<(), ContractError> {
        if self.not_before > self.not_after {
            return Err(ContractError::MalformedToken("not_before is after not_after"));
        }
        if self.actions.is_empty() {
            return Err(ContractError::MalformedToken("empty action set"));
        }
        if !self.resource.starts_with('/') {
            return Err(ContractError::MalformedToken("resource must be an absolute path"));
        }
        Ok(())
    }
}

impl Encode for CapToken {
    fn encode(&self, enc: &mut Encoder) {
        let mask = self.actions.iter().fold(0u8, |m, a| m | a.bit());
        enc.fixed(&self.token_id)
            .value(&self.issuer)
            .value(&self.subject)
            .str(&self.resource)
            .u8(mask)
            .u64(self.not_before)
            .u64(self.not_after)
            .bool(self.enabled);
    }
}

impl Decode for CapToken {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let token_id = dec.array()?;
        let issuer = dec.value()?;
        let subject = dec.value()?;
        let resource = dec.string()?;
        let mask = dec.u8()?;
        if mask & !0b1111 != 0 {
            return Err(DecodeError::InvalidValue("unknown action bits"));
        }
        let actions = Action::ALL.into_iter().filter(|a| mask & a.bit() != 0).collect();
        Ok(CapToken {
            token_id,
            issuer,
            subject,
            resource,
            actions,
            not_before: dec.u64()?,
            not_after: dec.u64()?,
            enabled: dec.bool()?,
        })
    }
}

mod hex_16 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let text = String::deserialize(d)?;
        let raw = hex::decode(text).map_err(serde::de::Error::custom)?;
        raw.try_into()
            .map_err(|_| serde::de::Error::custom("token id must be 16 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedIndexRecord {
    pub key: String,
    pub value_hash: Hash,
    pub recorder: Address,
    pub height: u64,
}

impl Encode for HashedIndexRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.key)
            .value(&self.value_hash)
            .value(&self.recorder)
            .u64(self.height);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Storage {
    /// Keyed by (subject, resource): at most one token per pair.
    Capac(BTreeMap<(Address, String), CapToken>),
    HashedIndex(BTreeMap<String, HashedIndexRecord>),
}

impl Storage {
    fn empty(kind: ContractKind) -> Self {
        match kind {
            ContractKind::Capac => Storage::Capac(BTreeMap::new()),
            ContractKind::HashedIndex => Storage::HashedIndex(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Storage::Capac(m) => m.len(),
            Storage::HashedIndex(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractAccount {
    pub address: Address,
    pub kind: ContractKind,
    pub owner: Address,
    pub authorized_writers: BTreeSet<Address>,
    pub storage: Storage,
}

impl ContractAccount {
    pub fn can_write(&self, caller: &Address) -> bool {
        *caller == self.owner || self.authorized_writers.contains(caller)
    }
}

impl Encode for ContractAccount {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.address).u8(self.kind.tag()).value(&self.owner);
        let writers: Vec<Address> = self.authorized_writers.iter().copied().collect();
        enc.list(&writers);
        match &self.storage {
            Storage::Capac(tokens) => {
                enc.u32(tokens.len() as u32);
                for ((subject, resource), token) in tokens {
                    enc.value(subject).str(resource).value(token);
                }
            }
            Storage::HashedIndex(records) => {
                enc.u32(records.len() as u32);
                for (key, record) in records {
                    enc.str(key).value(record);
                }
            }
        }
    }
}

/// All deployed contracts, ordered by address so serialization is canonical.
pub type ContractRegistry = BTreeMap<Address, ContractAccount>;

/// Last 20 bytes of SHA-256(deployer ‖ deployer nonce as u64 big-endian).
pub fn contract_address(deployer: &Address, nonce: u64) -> Address {
    let digest = sha256_concat(&[deployer.as_bytes(), &nonce.to_be_bytes()]);
    Address::from_slice(&digest.0[HASH_LEN - ADDRESS_LEN..]).expect("20-byte suffix")
}

/// Context of a state-changing contract call.
#[derive(Debug, Clone, Copy)]
pub struct Call<'a> {
    pub caller: Address,
    /// Caller nonce before this transaction is applied.
    pub caller_nonce: u64,
    /// Height of the block the call is included in.
    pub height: u64,
    pub target: Address,
    pub function: &'a str,
    pub args: &'a [Vec<u8>],
}

/// Checks that `(target, function)` names a transactable ABI entry.
pub fn resolve(contracts: &ContractRegistry, target: &Address, function: &str) -> Result<(), ContractError> {
    if *target == SYSTEM_ADDRESS {
        return if function == FN_DEPLOY {
            Ok(())
        } else {
            Err(ContractError::UnknownFunction {
                kind: "system".into(),
                function: function.into(),
            })
        };
    }
    let contract = contracts.get(target).ok_or(ContractError::NotFound(*target))?;
    resolve_kind(contract.kind, function)
}

fn resolve_kind(kind: ContractKind, function: &str) -> Result<(), ContractError> {
    if kind.write_functions().contains(&function) {
        Ok(())
    } else if kind.read_functions().contains(&function) {
        Err(ContractError::ReadOnly(function.into()))
    } else {
        Err(ContractError::UnknownFunction {
            kind: kind.as_str().into(),
            function: function.into(),
        })
    }
}

fn arg<'a>(args: &'a [Vec<u8>], i: usize, name: &str) -> Result<&'a [u8], ContractError> {
    args.get(i)
        .map(Vec::as_slice)
        .ok_or_else(|| ContractError::BadArgs(format!("missing argument {i} ({name})")))
}

fn expect_arity(args: &[Vec<u8>], n: usize) -> Result<(), ContractError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(ContractError::BadArgs(format!("expected {n} arguments, got {}", args.len())))
    }
}

fn address_arg(args: &[Vec<u8>], i: usize, name: &str) -> Result<Address, ContractError> {
    Address::from_slice(arg(args, i, name)?).map_err(|e| ContractError::BadArgs(format!("{name}: {e}")))
}

fn text_arg(args: &[Vec<u8>], i: usize, name: &str) -> Result<String, ContractError> {
    String::from_utf8(arg(args, i, name)?.to_vec())
        .map_err(|_| ContractError::BadArgs(format!("{name}: invalid utf-8")))
}

/// Routes a transaction to its handler. On error the registry is unchanged.
pub fn dispatch(contracts: &mut ContractRegistry, call: &Call<'_>) -> Result<(), ContractError> {
    resolve(contracts, &call.target, call.function)?;
    if call.target == SYSTEM_ADDRESS {
        deploy(contracts, call).map(|_| ())
    } else {
        let contract = contracts
            .get_mut(&call.target)
            .ok_or(ContractError::NotFound(call.target))?;
        match call.function {
            FN_GRANT_WRITER => grant_writer(contract, call),
            FN_REVOKE_WRITER => revoke_writer(contract, call),
            FN_SET_TOKEN => capac_set_token(contract, call),
            FN_REVOKE_TOKEN => capac_revoke_token(contract, call),
            FN_RECORD => hidx_record(contract, call),
            // resolve() has already rejected everything else
            other => unreachable!("unresolved function {other}"),
        }
    }
}

fn deploy(contracts: &mut ContractRegistry, call: &Call<'_>) -> Result<Address, ContractError> {
    expect_arity(call.args, 1)?;
    let kind: ContractKind = text_arg(call.args, 0, "kind")?.parse()?;
    let address = contract_address(&call.caller, call.caller_nonce);
    if contracts.contains_key(&address) {
        return Err(ContractError::AddressCollision(address));
    }
    contracts.insert(
        address,
        ContractAccount {
            address,
            kind,
            owner: call.caller,
            authorized_writers: BTreeSet::new(),
            storage: Storage::empty(kind),
        },
    );
    Ok(address)
}

fn grant_writer(contract: &mut ContractAccount, call: &Call<'_>) -> Result<(), ContractError> {
    expect_arity(call.args, 1)?;
    let writer = address_arg(call.args, 0, "writer")?;
    if call.caller != contract.owner {
        return Err(ContractError::NotOwner);
    }
    contract.authorized_writers.insert(writer);
    Ok(())
}

fn revoke_writer(contract: &mut ContractAccount, call: &Call<'_>) -> Result<(), ContractError> {
    expect_arity(call.args, 1)?;
    let writer = address_arg(call.args, 0, "writer")?;
    if call.caller != contract.owner {
        return Err(ContractError::NotOwner);
    }
    contract.authorized_writers.remove(&writer);
    Ok(())
}

fn capac_set_token(contract: &mut ContractAccount, call: &Call<'_>) -> Result<(), ContractError> {
    expect_arity(call.args, 1)?;
    if !contract.can_write(&call.caller) {
        return Err(ContractError::NotAuthorized);
    }
    let token = CapToken::from_canonical_bytes(arg(call.args, 0, "token")?)
        .map_err(|_| ContractError::MalformedToken("undecodable token bytes"))?;
    token.check_well_formed()?;
    if token.issuer != call.caller {
        return Err(ContractError::MalformedToken("issuer must be the caller"));
    }
    let Storage::Capac(tokens) = &mut contract.storage else {
        unreachable!("resolve() guarantees a capac contract");
    };
    tokens.insert((token.subject, token.resource.clone()), token);
    Ok(())
}

fn capac_revoke_token(contract: &mut ContractAccount, call: &Call<'_>) -> Result<(), ContractError> {
    expect_arity(call.args, 2)?;
    if !contract.can_write(&call.caller) {
        return Err(ContractError::NotAuthorized);
    }
    let subject = address_arg(call.args, 0, "subject")?;
    let resource = text_arg(call.args, 1, "resource")?;
    let Storage::Capac(tokens) = &mut contract.storage else {
        unreachable!("resolve() guarantees a capac contract");
    };
    let token = tokens
        .get_mut(&(subject, resource))
        .ok_or(ContractError::NoSuchToken)?;
    token.enabled = false;
    Ok(())
}

fn hidx_record(contract: &mut ContractAccount, call: &Call<'_>) -> Result<(), ContractError> {
    expect_arity(call.args, 2)?;
    if !contract.can_write(&call.caller) {
        return Err(ContractError::NotAuthorized);
    }
    let key = text_arg(call.args, 0, "key")?;
    let value_hash = Hash::from_slice(arg(call.args, 1, "value_hash")?)
        .map_err(|e| ContractError::BadArgs(format!("value_hash: {e}")))?;
    let Storage::HashedIndex(records) = &mut contract.storage else {
        unreachable!("resolve() guarantees a hashed_index contract");
    };
    if records.contains_key(&key) {
        return Err(ContractError::ImmutableKey(key));
    }
    records.insert(
        key.clone(),
        HashedIndexRecord {
            key,
            value_hash,
            recorder: call.caller,
            height: call.height,
        },
    );
    Ok(())
}

/// True when a token issued for `pattern` covers `resource`. A pattern
/// ending in `/*` covers every path below its prefix; anything else must
/// match exactly.
pub fn resource_matches(pattern: &str, resource: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) if prefix.ends_with('/') => resource.starts_with(prefix),
        _ => pattern == resource,
    }
}

/// Storage keys probed when looking up a token for `resource`: the exact
/// path, then for each enclosing path (deepest first) its `/*` subtree form
/// and the bare path.
pub fn token_lookup_keys(resource: &str) -> Vec<String> {
    let mut keys = vec![resource.to_string()];
    let mut path = resource.trim_end_matches('/');
    while let Some(idx) = path.rfind('/') {
        path = &path[..idx];
        keys.push(format!("{path}/*"));
        keys.push(if path.is_empty() { "/".to_string() } else { path.to_string() });
    }
    keys.dedup();
    keys
}

fn contract_of_kind<'a>(
    contracts: &'a ContractRegistry,
    address: &Address,
    kind: ContractKind,
    function: &str,
) -> Result<&'a ContractAccount, ContractError> {
    let contract = contracts.get(address).ok_or(ContractError::NotFound(*address))?;
    if contract.kind != kind {
        return Err(ContractError::UnknownFunction {
            kind: contract.kind.as_str().into(),
            function: function.into(),
        });
    }
    Ok(contract)
}

/// Token stored for `subject` under the most specific key covering
/// `resource` (see [`token_lookup_keys`]). Read-only.
pub fn capac_query_token(
    contracts: &ContractRegistry,
    contract: &Address,
    subject: &Address,
    resource: &str,
) -> Result<Option<CapToken>, ContractError> {
    let account = contract_of_kind(contracts, contract, ContractKind::Capac, FN_QUERY_TOKEN)?;
    let Storage::Capac(tokens) = &account.storage else {
        unreachable!()
    };
    Ok(token_lookup_keys(resource)
        .into_iter()
        .find_map(|key| tokens.get(&(*subject, key)).cloned()))
}

pub fn hidx_query(
    contracts: &ContractRegistry,
    contract: &Address,
    key: &str,
) -> Result<Option<Hash>, ContractError> {
    let account = contract_of_kind(contracts, contract, ContractKind::HashedIndex, FN_QUERY)?;
    let Storage::HashedIndex(records) = &account.storage else {
        unreachable!()
    };
    Ok(records.get(key).map(|r| r.value_hash))
}

/// ABI entry point for reads: returns the canonical encoding of the result
/// (`Option<CapToken>` or `Option<Hash>`).
pub fn query(
    contracts: &ContractRegistry,
    contract: &Address,
    function: &str,
    args: &[Vec<u8>],
) -> Result<Vec<u8>, ContractError> {
    let account = contracts.get(contract).ok_or(ContractError::NotFound(*contract))?;
    match (account.kind, function) {
        (ContractKind::Capac, FN_QUERY_TOKEN) => {
            expect_arity(args, 2)?;
            let subject = address_arg(args, 0, "subject")?;
            let resource = text_arg(args, 1, "resource")?;
            Ok(capac_query_token(contracts, contract, &subject, &resource)?.to_canonical_bytes())
        }
        (ContractKind::HashedIndex, FN_QUERY) => {
            expect_arity(args, 1)?;
            let key = text_arg(args, 0, "key")?;
            Ok(hidx_query(contracts, contract, &key)?.to_canonical_bytes())
        }
        (kind, function) => Err(ContractError::UnknownFunction {
            kind: kind.as_str().into(),
            function: function.into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(n: u8) -> Address {
        Address([n; 20])
    }

    fn call<'a>(caller: Address, target: Address, function: &'a str, args: &'a [Vec<u8>]) -> Call<'a> {
        Call {
            caller,
            caller_nonce: 0,
            height: 1,
            target,
            function,
            args,
        }
    }

    fn deployed(kind: ContractKind) -> (ContractRegistry, Address) {
        let mut reg = ContractRegistry::new();
        let args = vec![kind.as_str().as_bytes().to_vec()];
        dispatch(&mut reg, &call(addr(1), SYSTEM_ADDRESS, FN_DEPLOY, &args)).unwrap();
        (reg, contract_address(&addr(1), 0))
    }

    fn token(issuer: Address, subject: Address, resource: &str) -> CapToken {
        CapToken {
            token_id: [7; 16],
            issuer,
            subject,
            resource: resource.into(),
            actions: [Action::Get].into(),
            not_before: 10,
            not_after: 20,
            enabled: true,
        }
    }

    #[test]
    fn deploy_derives_address_from_deployer_and_nonce() {
        let (reg, address) = deployed(ContractKind::Capac);
        let c = &reg[&address];
        assert_eq!(c.owner, addr(1));
        assert_eq!(c.kind, ContractKind::Capac);
        assert!(c.storage.is_empty());
        assert_ne!(contract_address(&addr(1), 0), contract_address(&addr(1), 1));
    }

    #[test]
    fn unknown_kind_is_a_dispatch_violation() {
        let mut reg = ContractRegistry::new();
        let args = vec![b"vm".to_vec()];
        let err = dispatch(&mut reg, &call(addr(1), SYSTEM_ADDRESS, FN_DEPLOY, &args)).unwrap_err();
        assert_eq!(err, ContractError::UnknownKind("vm".into()));
        assert!(reg.is_empty());
    }

    #[test]
    fn grant_requires_owner() {
        let (mut reg, c) = deployed(ContractKind::HashedIndex);
        let args = vec![addr(2).0.to_vec()];
        assert_eq!(
            dispatch(&mut reg, &call(addr(3), c, FN_GRANT_WRITER, &args)),
            Err(ContractError::NotOwner)
        );
        dispatch(&mut reg, &call(addr(1), c, FN_GRANT_WRITER, &args)).unwrap();
        assert!(reg[&c].authorized_writers.contains(&addr(2)));
    }

    #[test]
    fn grant_revoke_then_write_is_rejected() {
        let (mut reg, c) = deployed(ContractKind::HashedIndex);
        let writer = vec![addr(2).0.to_vec()];
        dispatch(&mut reg, &call(addr(1), c, FN_GRANT_WRITER, &writer)).unwrap();
        dispatch(&mut reg, &call(addr(1), c, FN_REVOKE_WRITER, &writer)).unwrap();
        let rec = vec![b"frame:1".to_vec(), vec![9; 32]];
        assert_eq!(
            dispatch(&mut reg, &call(addr(2), c, FN_RECORD, &rec)),
            Err(ContractError::NotAuthorized)
        );
    }

    #[test]
    fn set_token_checks_writer_and_window() {
        let (mut reg, c) = deployed(ContractKind::Capac);
        let t = token(addr(5), addr(9), "/data/query");
        let args = vec![t.to_canonical_bytes()];
        assert_eq!(
            dispatch(&mut reg, &call(addr(5), c, FN_SET_TOKEN, &args)),
            Err(ContractError::NotAuthorized)
        );
        let grant = vec![addr(5).0.to_vec()];
        dispatch(&mut reg, &call(addr(1), c, FN_GRANT_WRITER, &grant)).unwrap();
        let mut bad = t.clone();
        bad.not_before = 30;
        let bad_args = vec![bad.to_canonical_bytes()];
        assert!(matches!(
            dispatch(&mut reg, &call(addr(5), c, FN_SET_TOKEN, &bad_args)),
            Err(ContractError::MalformedToken(_))
        ));
        dispatch(&mut reg, &call(addr(5), c, FN_SET_TOKEN, &args)).unwrap();
        assert_eq!(
            capac_query_token(&reg, &c, &addr(9), "/data/query").unwrap(),
            Some(t)
        );
    }

    #[test]
    fn overwrite_keeps_one_token_per_pair() {
        let (mut reg, c) = deployed(ContractKind::Capac);
        let t = token(addr(1), addr(9), "/data/query");
        let mut disabled = t.clone();
        disabled.enabled = false;
        for tok in [&t, &disabled] {
            let args = vec![tok.to_canonical_bytes()];
            dispatch(&mut reg, &call(addr(1), c, FN_SET_TOKEN, &args)).unwrap();
        }
        assert_eq!(reg[&c].storage.len(), 1);
        let found = capac_query_token(&reg, &c, &addr(9), "/data/query").unwrap().unwrap();
        assert!(!found.enabled);
    }

    #[test]
    fn revoke_token_disables() {
        let (mut reg, c) = deployed(ContractKind::Capac);
        let t = token(addr(1), addr(9), "/data/query");
        dispatch(&mut reg, &call(addr(1), c, FN_SET_TOKEN, &[t.to_canonical_bytes()])).unwrap();
        let args = vec![addr(9).0.to_vec(), b"/data/query".to_vec()];
        dispatch(&mut reg, &call(addr(1), c, FN_REVOKE_TOKEN, &args)).unwrap();
        assert!(!capac_query_token(&reg, &c, &addr(9), "/data/query").unwrap().unwrap().enabled);
        let missing = vec![addr(8).0.to_vec(), b"/data/query".to_vec()];
        assert_eq!(
            dispatch(&mut reg, &call(addr(1), c, FN_REVOKE_TOKEN, &missing)),
            Err(ContractError::NoSuchToken)
        );
    }

    #[test]
    fn hashed_index_is_immutable() {
        let (mut reg, c) = deployed(ContractKind::HashedIndex);
        let first = vec![b"frame:1".to_vec(), vec![1; 32]];
        let second = vec![b"frame:1".to_vec(), vec![2; 32]];
        dispatch(&mut reg, &call(addr(1), c, FN_RECORD, &first)).unwrap();
        assert_eq!(
            dispatch(&mut reg, &call(addr(1), c, FN_RECORD, &second)),
            Err(ContractError::ImmutableKey("frame:1".into()))
        );
        assert_eq!(hidx_query(&reg, &c, "frame:1").unwrap(), Some(Hash([1; 32])));
        assert_eq!(hidx_query(&reg, &c, "frame:2").unwrap(), None);
    }

    #[test]
    fn function_names_resolve_per_kind() {
        let (mut reg, capac) = deployed(ContractKind::Capac);
        let args = vec![b"hashed_index".to_vec()];
        let mut c2 = call(addr(1), SYSTEM_ADDRESS, FN_DEPLOY, &args);
        c2.caller_nonce = 1;
        dispatch(&mut reg, &c2).unwrap();
        let hidx = contract_address(&addr(1), 1);
        let all = [
            FN_DEPLOY, FN_GRANT_WRITER, FN_REVOKE_WRITER, FN_SET_TOKEN, FN_REVOKE_TOKEN,
            FN_QUERY_TOKEN, FN_RECORD, FN_QUERY, "bogus",
        ];
        for f in all {
            let on_capac = resolve(&reg, &capac, f);
            let on_hidx = resolve(&reg, &hidx, f);
            let capac_ok = matches!(f, FN_GRANT_WRITER | FN_REVOKE_WRITER | FN_SET_TOKEN | FN_REVOKE_TOKEN);
            let hidx_ok = matches!(f, FN_GRANT_WRITER | FN_REVOKE_WRITER | FN_RECORD);
            assert_eq!(on_capac.is_ok(), capac_ok, "{f} on capac");
            assert_eq!(on_hidx.is_ok(), hidx_ok, "{f} on hashed_index");
        }
        assert!(matches!(resolve(&reg, &capac, FN_QUERY_TOKEN), Err(ContractError::ReadOnly(_))));
        assert!(matches!(resolve(&reg, &hidx, FN_SET_TOKEN), Err(ContractError::UnknownFunction { .. })));
    }

    #[test]
    fn lookup_keys_walk_up_the_path() {
        assert_eq!(
            token_lookup_keys("/data/query"),
            vec!["/data/query", "/data/*", "/data", "/*", "/"]
        );
        assert_eq!(token_lookup_keys("/"), vec!["/"]);
    }

    #[test]
    fn resource_patterns() {
        assert!(resource_matches("/data/query", "/data/query"));
        assert!(resource_matches("/data/*", "/data/query"));
        assert!(resource_matches("/*", "/admin/x"));
        assert!(!resource_matches("/data", "/data/query"));
        assert!(!resource_matches("/data/*", "/admin/query"));
    }

    #[test]
    fn token_encoding_round_trips() {
        let mut t = token(addr(1), addr(2), "/x");
        t.actions = Action::ALL.into();
        assert_eq!(CapToken::from_canonical_bytes(&t.to_canonical_bytes()).unwrap(), t);
    }
}
