use blendmas_core::crypto::{Address, Hash};
use blendmas_core::ledger::{apply_transaction, Transaction, TxViolation, WorldState};
use blendmas_core::membership::LocalRoster;
use indexmap::IndexMap;
use thiserror::Error;

pub const MAX_MEMPOOL: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdmitError {
    #[error("sender {0} is not enrolled")]
    NotEnrolled(Address),
    #[error("{0}")]
    Invalid(TxViolation),
    #[error("mempool is full")]
    Full,
}

/// Pending transactions in arrival order, plus the state they produce on top of the head.
#[derive(Debug, Clone)]
pub struct Mempool {
    txs: IndexMap<Hash, Transaction>,
    pending: WorldState,
}

impl Mempool {
    pub fn new(head: &WorldState) -> Self {
        Self {
            txs: IndexMap::new(),
            pending: head.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.txs.contains_key(hash)
    }

    pub fn transactions(&self) -> Vec<Transaction> {
        self.txs.values().cloned().collect()
    }

    pub fn hashes(&self) -> Vec<Hash> {
        self.txs.keys().copied().collect()
    }

    pub fn pending_nonce(&self, address: &Address) -> u64 {
        self.pending.nonce(address)
    }

    /// Accepts `tx` if its sender is enrolled and it applies cleanly on the
    /// pending state. Returns false for a transaction already held.
    pub fn admit(&mut self, tx: Transaction, roster: &LocalRoster) -> Result<bool, AdmitError> {
        let hash = tx.hash();
        if self.txs.contains_key(&hash) {
            return Ok(false);
        }
        if !roster.is_enrolled(&tx.sender) {
            return Err(AdmitError::NotEnrolled(tx.sender));
        }
        if self.txs.len() >= MAX_MEMPOOL {
            return Err(AdmitError::Full);
        }
        let height = self.pending.height + 1;
        apply_transaction(&mut self.pending, &tx, height).map_err(AdmitError::Invalid)?;
        self.txs.insert(hash, tx);
        Ok(true)
    }

    /// Rebuilds on a new head: `returning` (transactions from abandoned
    /// blocks) go first, then the current pool; anything no longer valid is dropped.
    pub fn rebase(&mut self, head: &WorldState, returning: Vec<Transaction>, roster: &LocalRoster) {
        let before = std::mem::take(&mut self.txs);
        self.pending = head.clone();
        let height = head.height + 1;
        for tx in returning.into_iter().chain(before.into_values()) {
            let hash = tx.hash();
            if self.txs.contains_key(&hash) || !roster.is_enrolled(&tx.sender) {
                continue;
            }
            if apply_transaction(&mut self.pending, &tx, height).is_ok() {
                self.txs.insert(hash, tx);
            }
        }
    }
}
