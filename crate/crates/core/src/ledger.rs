//! Transactions, blocks and the deterministic world-state transition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::contracts::{self, Call, ContractAccount, ContractError, ContractRegistry};
use crate::crypto::{sha256, Account, Address, Hash, PublicKey, Signature};
use crate::merkle::merkle_root;

/// A signed contract call.
///
/// `public_key` travels with the transaction so any node can check the
/// signature; it must hash to `sender`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Address,
    pub public_key: PublicKey,
    pub nonce: u64,
    pub target: Address,
    pub function: String,
    #[serde(with = "hex_args")]
    pub args: Vec<Vec<u8>>,
    /// Unix seconds.
    pub timestamp: u64,
    pub signature: Signature,
}

impl Transaction {
    pub fn new_signed(
        account: &Account,
        nonce: u64,
        target: Address,
        function: impl Into<String>,
        args: Vec<Vec<u8>>,
        timestamp: u64,
    ) -> Self {
        let mut tx = Transaction {
            sender: account.address(),
            public_key: account.public_key(),
            nonce,
            target,
            function: function.into(),
            args,
            timestamp,
            signature: Signature::EMPTY,
        };
        tx.signature = account.sign(&tx.signing_bytes());
        tx
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.value(&self.sender)
            .value(&self.public_key)
            .u64(self.nonce)
            .value(&self.target)
            .str(&self.function)
            .list(&self.args)
            .u64(self.timestamp);
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        enc.finish()
    }

    pub fn hash(&self) -> Hash {
        sha256(&self.to_canonical_bytes())
    }

    pub fn verify_signature(&self) -> bool {
        self.public_key.address() == self.sender
            && self.public_key.verify(&self.signing_bytes(), &self.signature)
    }
}

impl Encode for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.value(&self.signature);
    }
}

impl Decode for Transaction {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            sender: dec.value()?,
            public_key: dec.value()?,
            nonce: dec.u64()?,
            target: dec.value()?,
            function: dec.string()?,
            args: dec.list()?,
            timestamp: dec.u64()?,
            signature: dec.value()?,
        })
    }
}

mod hex_args {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(args: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(args.iter().map(hex::encode))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|a| hex::decode(a).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub parent_hash: Hash,
    pub tx_root: Hash,
    pub state_root: Hash,
    pub proposer: Address,
    /// Roster epoch whose validator set scheduled this block.
    pub epoch: u64,
    /// Unix milliseconds.
    pub timestamp_ms: u64,
    pub proposer_signature: Signature,
}

impl BlockHeader {
    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.u64(self.height)
            .value(&self.parent_hash)
            .value(&self.tx_root)
            .value(&self.state_root)
            .value(&self.proposer)
            .u64(self.epoch)
            .u64(self.timestamp_ms);
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        enc.finish()
    }

    /// Hash of the full header including the signature.
    pub fn hash(&self) -> Hash {
        sha256(&self.to_canonical_bytes())
    }
}

impl Encode for BlockHeader {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.value(&self.proposer_signature);
    }
}

impl Decode for BlockHeader {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(BlockHeader {
            height: dec.u64()?,
            parent_hash: dec.value()?,
            tx_root: dec.value()?,
            state_root: dec.value()?,
            proposer: dec.value()?,
            epoch: dec.u64()?,
            timestamp_ms: dec.u64()?,
            proposer_signature: dec.value()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn hash(&self) -> Hash {
        self.header.hash()
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn compute_tx_root(transactions: &[Transaction]) -> Hash {
        let leaves: Vec<Vec<u8>> = transactions.iter().map(Encode::to_canonical_bytes).collect();
        merkle_root(&leaves)
    }

    /// Deterministic genesis block for a network administered by `oracle`.
    pub fn genesis(genesis: &GenesisConfig) -> Block {
        Block {
            header: BlockHeader {
                height: 0,
                parent_hash: Hash::ZERO,
                tx_root: Hash::ZERO,
                state_root: WorldState::default().state_root(),
                proposer: genesis.oracle_public_key.address(),
                epoch: 0,
                timestamp_ms: genesis.timestamp_ms,
                proposer_signature: Signature::EMPTY,
            },
            transactions: Vec::new(),
        }
    }

    /// Builds and signs a block on top of `parent` from already-executed transactions.
    pub fn seal(
        proposer: &Account,
        parent: &BlockHeader,
        epoch: u64,
        timestamp_ms: u64,
        transactions: Vec<Transaction>,
        state_root: Hash,
    ) -> Block {
        let mut header = BlockHeader {
            height: parent.height + 1,
            parent_hash: parent.hash(),
            tx_root: Block::compute_tx_root(&transactions),
            state_root,
            proposer: proposer.address(),
            epoch,
            timestamp_ms,
            proposer_signature: Signature::EMPTY,
        };
        header.proposer_signature = proposer.sign(&header.signing_bytes());
        Block { header, transactions }
    }
}

impl Encode for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.header).list(&self.transactions);
    }
}

impl Decode for Block {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Block {
            header: dec.value()?,
            transactions: dec.list()?,
        })
    }
}

/// Chain parameters fixed at network creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub oracle_public_key: PublicKey,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    pub nonces: BTreeMap<Address, u64>,
    pub contracts: ContractRegistry,
    pub height: u64,
}

impl WorldState {
    pub fn nonce(&self, address: &Address) -> u64 {
        self.nonces.get(address).copied().unwrap_or(0)
    }

    pub fn contract(&self, address: &Address) -> Option<&ContractAccount> {
        self.contracts.get(address)
    }

    /// SHA-256 of the canonical, address-sorted serialization.
    pub fn state_root(&self) -> Hash {
        sha256(&self.to_canonical_bytes())
    }
}

impl Encode for WorldState {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.height).u32(self.nonces.len() as u32);
        for (address, nonce) in &self.nonces {
            enc.value(address).u64(*nonce);
        }
        enc.u32(self.contracts.len() as u32);
        for contract in self.contracts.values() {
            enc.value(contract);
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxViolation {
    #[error("public key does not hash to the sender address")]
    KeyMismatch,
    #[error("signature does not verify")]
    BadSignature,
    #[error("nonce mismatch: expected {expected}, got {got}")]
    NonceMismatch { expected: u64, got: u64 },
    #[error("dispatch: {0}")]
    Dispatch(ContractError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockError {
    #[error("block height {got} does not follow state height {state}")]
    HeightMismatch { state: u64, got: u64 },
    #[error("tx_root does not match the contained transactions")]
    TxRootMismatch,
    #[error("transaction {index} is invalid: {violation}")]
    InvalidTransaction { index: usize, violation: TxViolation },
    #[error("state_root mismatch: header {header}, computed {computed}")]
    StateRootMismatch { header: Hash, computed: Hash },
}

/// Signature, nonce and dispatch-target checks against `state`. Never mutates.
pub fn validate_transaction(state: &WorldState, tx: &Transaction) -> Result<(), TxViolation> {
    if tx.public_key.address() != tx.sender {
        return Err(TxViolation::KeyMismatch);
    }
    if !tx.public_key.verify(&tx.signing_bytes(), &tx.signature) {
        return Err(TxViolation::BadSignature);
    }
    let expected = state.nonce(&tx.sender);
    if tx.nonce != expected {
        return Err(TxViolation::NonceMismatch {
            expected,
            got: tx.nonce,
        });
    }
    contracts::resolve(&state.contracts, &tx.target, &tx.function).map_err(TxViolation::Dispatch)
}

/// Validates and applies one transaction as part of the block at `height`.
/// On error `state` is untouched.
pub fn apply_transaction(state: &mut WorldState, tx: &Transaction, height: u64) -> Result<(), TxViolation> {
    validate_transaction(state, tx)?;
    let call = Call {
        caller: tx.sender,
        caller_nonce: tx.nonce,
        height,
        target: tx.target,
        function: &tx.function,
        args: &tx.args,
    };
    contracts::dispatch(&mut state.contracts, &call).map_err(TxViolation::Dispatch)?;
    *state.nonces.entry(tx.sender).or_insert(0) += 1;
    Ok(())
}

/// Applies `transactions` as the block at `state.height + 1`, all or nothing.
pub fn execute_transactions(state: &WorldState, transactions: &[Transaction]) -> Result<WorldState, BlockError> {
    let mut next = state.clone();
    let height = state.height + 1;
    for (index, tx) in transactions.iter().enumerate() {
        apply_transaction(&mut next, tx, height)
            .map_err(|violation| BlockError::InvalidTransaction { index, violation })?;
    }
    next.height = height;
    Ok(next)
}

/// Full block application: height, tx_root, every transaction in order and
/// the resulting state_root. Proposer checks live in `consensus`.
pub fn apply_block(state: &WorldState, block: &Block) -> Result<WorldState, BlockError> {
    let header = &block.header;
    if header.height != state.height + 1 {
        return Err(BlockError::HeightMismatch {
            state: state.height,
            got: header.height,
        });
    }
    if Block::compute_tx_root(&block.transactions) != header.tx_root {
        return Err(BlockError::TxRootMismatch);
    }
    let next = execute_transactions(state, &block.transactions)?;
    let computed = next.state_root();
    if computed != header.state_root {
        return Err(BlockError::StateRootMismatch {
            header: header.state_root,
            computed,
        });
    }
    Ok(next)
}
