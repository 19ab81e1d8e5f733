//! Round-robin proof-of-authority over the oracle-certified miner set.
//!
//! The miner at position `height mod n` (miners sorted by address bytes) is
//! scheduled for `height`. If it stays silent, its k-th successor may seal
//! the height once `2k` block intervals have passed since the parent's
//! timestamp. Fork choice prefers the greater height, then the smaller head
//! hash.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Account, Address, Hash, PublicKey};
use crate::ledger::{apply_block, execute_transactions, Block, BlockError, BlockHeader, Transaction, WorldState};

/// Heights at or below `head - FINALITY_DEPTH` are reported as finalized.
pub const FINALITY_DEPTH: u64 = 6;
const MAX_ORPHANS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validator {
    pub address: Address,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidatorSet {
    pub epoch: u64,
    /// Sorted ascending by address bytes; no duplicates.
    miners: Vec<Validator>,
}

impl ValidatorSet {
    pub fn new(epoch: u64, miners: impl IntoIterator<Item = Validator>) -> Self {
        let mut miners: Vec<Validator> = miners.into_iter().collect();
        miners.sort_by_key(|a| a.address);
        miners.dedup_by(|a, b| a.address == b.address);
        Self { epoch, miners }
    }

    pub fn miners(&self) -> &[Validator] {
        &self.miners
    }

    pub fn addresses(&self) -> Vec<Address> {
        self.miners.iter().map(|v| v.address).collect()
    }

    pub fn len(&self) -> usize {
        self.miners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.miners.is_empty()
    }

    pub fn position(&self, address: &Address) -> Option<usize> {
        self.miners.binary_search_by(|v| v.address.cmp(address)).ok()
    }

    pub fn get(&self, address: &Address) -> Option<&Validator> {
        self.position(address).map(|i| &self.miners[i])
    }

    pub fn contains(&self, address: &Address) -> bool {
        self.position(address).is_some()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("validator set is empty")]
    NoValidators,
}

pub fn expected_proposer(height: u64, validators: &ValidatorSet) -> Result<Address, ConsensusError> {
    if validators.is_empty() {
        return Err(ConsensusError::NoValidators);
    }
    let idx = (height % validators.len() as u64) as usize;
    Ok(validators.miners[idx].address)
}

/// How many turns `address` sits after the scheduled proposer at `height`
/// (0 when it is the scheduled proposer).
pub fn proposer_offset(height: u64, validators: &ValidatorSet, address: &Address) -> Option<u64> {
    let n = validators.len() as u64;
    let pos = validators.position(address)? as u64;
    Some((pos + n - height % n) % n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusParams {
    pub block_interval_ms: u64,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        Self { block_interval_ms: 1_000 }
    }
}

impl ConsensusParams {
    /// Earliest timestamp at which a proposer `offset` turns late may seal on
    /// top of a parent stamped `parent_ms`.
    pub fn earliest_seal_ms(&self, parent_ms: u64, offset: u64) -> u64 {
        if offset == 0 {
            parent_ms + self.block_interval_ms
        } else {
            parent_ms + offset * 2 * self.block_interval_ms
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusViolation {
    #[error("proposer {0} is not an authorized miner")]
    NotAuthorized(Address),
    #[error("wrong proposer: expected {expected}, got {got}")]
    WrongProposer { expected: Address, got: Address },
    #[error("proposer signature does not verify")]
    BadSignature,
    #[error("no validator set known for epoch {0}")]
    UnknownEpoch(u64),
    #[error("block epoch {got} is older than parent epoch {parent}")]
    EpochRegressed { parent: u64, got: u64 },
    #[error("timestamp does not advance past the parent")]
    TimestampNotIncreasing,
    #[error("header does not extend the given parent")]
    ParentMismatch,
}

/// Strict single-set check: membership, schedule position, signature.
pub fn verify_proposer(header: &BlockHeader, validators: &ValidatorSet) -> Result<(), ConsensusViolation> {
    let validator = validators
        .get(&header.proposer)
        .ok_or(ConsensusViolation::NotAuthorized(header.proposer))?;
    let expected = expected_proposer(header.height, validators)
        .map_err(|_| ConsensusViolation::NotAuthorized(header.proposer))?;
    if expected != header.proposer {
        return Err(ConsensusViolation::WrongProposer {
            expected,
            got: header.proposer,
        });
    }
    check_signature(header, &validator.public_key)
}

fn check_signature(header: &BlockHeader, key: &PublicKey) -> Result<(), ConsensusViolation> {
    if key.verify(&header.signing_bytes(), &header.proposer_signature) {
        Ok(())
    } else {
        Err(ConsensusViolation::BadSignature)
    }
}

/// Every validator set a node has installed plus the revocation marks from
/// the roster, so blocks are always judged against the epoch they name.
#[derive(Debug, Clone, Default)]
pub struct ValidatorHistory {
    sets: BTreeMap<u64, ValidatorSet>,
    /// address → (epoch that removed it, oracle timestamp in ms)
    revocations: BTreeMap<Address, Vec<(u64, u64)>>,
}

impl ValidatorHistory {
    pub fn insert_set(&mut self, set: ValidatorSet) {
        self.sets.insert(set.epoch, set);
    }

    pub fn note_revocation(&mut self, address: Address, epoch: u64, revoked_at_ms: u64) {
        let marks = self.revocations.entry(address).or_default();
        if !marks.contains(&(epoch, revoked_at_ms)) {
            marks.push((epoch, revoked_at_ms));
        }
    }

    pub fn set_at(&self, epoch: u64) -> Option<&ValidatorSet> {
        self.sets.get(&epoch)
    }

    pub fn current(&self) -> Option<&ValidatorSet> {
        self.sets.values().next_back()
    }

    pub fn current_epoch(&self) -> u64 {
        self.sets.keys().next_back().copied().unwrap_or(0)
    }

    /// True when `address` was removed by an epoch newer than
    /// `block_epoch` at or before `timestamp_ms`.
    pub fn revoked_for(&self, address: &Address, block_epoch: u64, timestamp_ms: u64) -> bool {
        self.revocations
            .get(address)
            .is_some_and(|marks| marks.iter().any(|&(e, at)| e > block_epoch && at <= timestamp_ms))
    }
}

/// Full consensus check of `header` against its `parent`, allowing the
/// timeout-based successor rule.
pub fn verify_block_consensus(
    header: &BlockHeader,
    parent: &BlockHeader,
    history: &ValidatorHistory,
    params: &ConsensusParams,
) -> Result<(), ConsensusViolation> {
    if header.height != parent.height + 1 || header.parent_hash != parent.hash() {
        return Err(ConsensusViolation::ParentMismatch);
    }
    if header.epoch < parent.epoch {
        return Err(ConsensusViolation::EpochRegressed {
            parent: parent.epoch,
            got: header.epoch,
        });
    }
    if header.timestamp_ms <= parent.timestamp_ms {
        return Err(ConsensusViolation::TimestampNotIncreasing);
    }
    let set = history
        .set_at(header.epoch)
        .ok_or(ConsensusViolation::UnknownEpoch(header.epoch))?;
    let validator = set
        .get(&header.proposer)
        .ok_or(ConsensusViolation::NotAuthorized(header.proposer))?;
    if history.revoked_for(&header.proposer, header.epoch, header.timestamp_ms) {
        return Err(ConsensusViolation::NotAuthorized(header.proposer));
    }
    let offset = proposer_offset(header.height, set, &header.proposer).expect("member has a position");
    if offset > 0 && header.timestamp_ms < params.earliest_seal_ms(parent.timestamp_ms, offset) {
        let expected = expected_proposer(header.height, set).expect("non-empty set");
        return Err(ConsensusViolation::WrongProposer {
            expected,
            got: header.proposer,
        });
    }
    check_signature(header, &validator.public_key)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProposeError {
    #[error("not this node's turn")]
    NotMyTurn,
    #[error("scheduled, but the slot opens at {ready_at_ms}")]
    TooEarly { ready_at_ms: u64 },
    #[error("no validator set installed")]
    NoValidators,
}

/// Seals a block on the current head if `account` may propose at `now_ms`.
/// Mempool transactions that fail against the head state are skipped.
pub fn propose_block(
    view: &ChainView,
    mempool: &[Transaction],
    account: &Account,
    validators: &ValidatorSet,
    params: &ConsensusParams,
    now_ms: u64,
) -> Result<Block, ProposeError> {
    if validators.is_empty() {
        return Err(ProposeError::NoValidators);
    }
    let head = view.head();
    let parent = &head.block.header;
    if validators.epoch < parent.epoch {
        return Err(ProposeError::NotMyTurn);
    }
    let height = parent.height + 1;
    let offset = proposer_offset(height, validators, &account.address()).ok_or(ProposeError::NotMyTurn)?;
    let ready_at_ms = params.earliest_seal_ms(parent.timestamp_ms, offset);
    if now_ms < ready_at_ms {
        return Err(if offset == 0 {
            ProposeError::TooEarly { ready_at_ms }
        } else {
            ProposeError::NotMyTurn
        });
    }

    let mut included = Vec::new();
    let mut scratch = (*head.state).clone();
    for tx in mempool {
        if let Ok(next) = execute_transactions(&scratch, std::slice::from_ref(tx)) {
            // execute_transactions bumps the height; keep the parent height
            // until the whole block is sealed.
            scratch = WorldState { height: scratch.height, ..next };
            included.push(tx.clone());
        }
    }
    let post = execute_transactions(&head.state, &included).expect("transactions were pre-checked in order");
    let timestamp_ms = now_ms.max(parent.timestamp_ms + 1);
    Ok(Block::seal(
        account,
        parent,
        validators.epoch,
        timestamp_ms,
        included,
        post.state_root(),
    ))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("consensus: {0}")]
    Consensus(#[from] ConsensusViolation),
    #[error("block: {0}")]
    Block(#[from] BlockError),
}

#[derive(Debug, Clone)]
pub struct ChainEntry {
    pub block: Block,
    pub state: Arc<WorldState>,
}

/// Head switch that abandoned part of the previous main chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reorg {
    pub old_head: Hash,
    pub new_head: Hash,
    pub common_ancestor: Hash,
    /// Transactions from abandoned blocks, oldest first.
    pub abandoned: Vec<Transaction>,
    /// Transactions from the newly adopted blocks, oldest first.
    pub adopted: Vec<Transaction>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    Known,
    Orphan { missing_parent: Hash },
    Added {
        /// The block and any orphans it unlocked, in insertion order.
        added: Vec<Hash>,
        head_changed: bool,
        reorg: Option<Reorg>,
    },
}

/// Block tree rooted at genesis with the post-state of every block.
#[derive(Debug, Clone)]
pub struct ChainView {
    entries: HashMap<Hash, ChainEntry>,
    head: Hash,
    genesis: Hash,
    orphans: HashMap<Hash, Vec<Block>>,
    /// tx hash → height, main chain only
    tx_index: HashMap<Hash, u64>,
}

fn better(a: (u64, &Hash), b: (u64, &Hash)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl ChainView {
    pub fn new(genesis: Block) -> Self {
        let hash = genesis.hash();
        let mut entries = HashMap::new();
        entries.insert(
            hash,
            ChainEntry {
                block: genesis,
                state: Arc::new(WorldState::default()),
            },
        );
        Self {
            entries,
            head: hash,
            genesis: hash,
            orphans: HashMap::new(),
            tx_index: HashMap::new(),
        }
    }

    pub fn head(&self) -> &ChainEntry {
        &self.entries[&self.head]
    }

    pub fn head_hash(&self) -> Hash {
        self.head
    }

    pub fn head_height(&self) -> u64 {
        self.head().block.header.height
    }

    pub fn genesis_hash(&self) -> Hash {
        self.genesis
    }

    pub fn finalized_height(&self) -> u64 {
        self.head_height().saturating_sub(FINALITY_DEPTH)
    }

    pub fn get(&self, hash: &Hash) -> Option<&ChainEntry> {
        self.entries.get(hash)
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.entries.contains_key(hash)
    }

    pub fn orphan_count(&self) -> usize {
        self.orphans.values().map(Vec::len).sum()
    }

    pub fn is_orphan(&self, hash: &Hash) -> bool {
        self.orphans.values().flatten().any(|b| b.hash() == *hash)
    }

    /// Main-chain hashes from genesis to head.
    pub fn main_chain(&self) -> Vec<Hash> {
        let mut out = Vec::with_capacity(self.head_height() as usize + 1);
        let mut cursor = self.head;
        loop {
            out.push(cursor);
            let header = &self.entries[&cursor].block.header;
            if header.height == 0 {
                break;
            }
            cursor = header.parent_hash;
        }
        out.reverse();
        out
    }

    pub fn block_at(&self, height: u64) -> Option<&Block> {
        self.main_chain()
            .get(height as usize)
            .map(|h| &self.entries[h].block)
    }

    /// Main-chain blocks with height in `(from_height, head]`.
    pub fn blocks_after(&self, from_height: u64, limit: usize) -> Vec<Block> {
        self.main_chain()
            .into_iter()
            .skip(from_height as usize + 1)
            .take(limit)
            .map(|h| self.entries[&h].block.clone())
            .collect()
    }

    /// Height at which the main chain includes `tx_hash`.
    pub fn inclusion_height(&self, tx_hash: &Hash) -> Option<u64> {
        self.tx_index.get(tx_hash).copied()
    }

    /// Validates and stores `block`. `check` receives (parent, header) and
    /// performs the consensus checks; state checks run here.
    pub fn insert<F>(&mut self, block: Block, check: F) -> Result<InsertOutcome, ChainError>
    where
        F: Fn(&BlockHeader, &BlockHeader) -> Result<(), ConsensusViolation>,
    {
        let hash = block.hash();
        if self.entries.contains_key(&hash) {
            return Ok(InsertOutcome::Known);
        }
        let parent_hash = block.header.parent_hash;
        if !self.entries.contains_key(&parent_hash) {
            if self.orphan_count() < MAX_ORPHANS && !self.is_orphan(&hash) {
                self.orphans.entry(parent_hash).or_default().push(block);
            }
            return Ok(InsertOutcome::Orphan {
                missing_parent: parent_hash,
            });
        }
        self.attach(block, &check)?;

        let mut added = vec![hash];
        let mut frontier = vec![hash];
        while let Some(parent) = frontier.pop() {
            for orphan in self.orphans.remove(&parent).unwrap_or_default() {
                let h = orphan.hash();
                if self.attach(orphan, &check).is_ok() {
                    added.push(h);
                    frontier.push(h);
                }
            }
        }

        let old_head = self.head;
        for h in &added {
            self.fork_choice(*h);
        }
        let head_changed = self.head != old_head;
        let reorg = if head_changed { self.reindex(old_head) } else { None };
        Ok(InsertOutcome::Added {
            added,
            head_changed,
            reorg,
        })
    }

    fn attach<F>(&mut self, block: Block, check: &F) -> Result<(), ChainError>
    where
        F: Fn(&BlockHeader, &BlockHeader) -> Result<(), ConsensusViolation>,
    {
        let parent = &self.entries[&block.header.parent_hash];
        check(&parent.block.header, &block.header)?;
        let state = apply_block(&parent.state, &block)?;
        self.entries.insert(
            block.hash(),
            ChainEntry {
                block,
                state: Arc::new(state),
            },
        );
        Ok(())
    }

    /// Adopts `candidate` as head if it is a stored block that beats the
    /// current head. Returns the head afterwards.
    pub fn fork_choice(&mut self, candidate: Hash) -> Hash {
        if let Some(entry) = self.entries.get(&candidate) {
            let head_height = self.head_height();
            if better((entry.block.header.height, &candidate), (head_height, &self.head)) {
                self.head = candidate;
            }
        }
        self.head
    }

    fn ancestors_until(&self, mut from: Hash, stop_height: u64) -> Hash {
        while self.entries[&from].block.header.height > stop_height {
            from = self.entries[&from].block.header.parent_hash;
        }
        from
    }

    fn common_ancestor(&self, a: Hash, b: Hash) -> Hash {
        let ha = self.entries[&a].block.header.height;
        let hb = self.entries[&b].block.header.height;
        let mut a = self.ancestors_until(a, ha.min(hb));
        let mut b = self.ancestors_until(b, ha.min(hb));
        while a != b {
            a = self.entries[&a].block.header.parent_hash;
            b = self.entries[&b].block.header.parent_hash;
        }
        a
    }

    fn branch_txs(&self, tip: Hash, ancestor: Hash) -> Vec<Transaction> {
        let mut blocks = Vec::new();
        let mut cursor = tip;
        while cursor != ancestor {
            let block = &self.entries[&cursor].block;
            blocks.push(block);
            cursor = block.header.parent_hash;
        }
        blocks
            .into_iter()
            .rev()
            .flat_map(|b| b.transactions.iter().cloned())
            .collect()
    }

    fn reindex(&mut self, old_head: Hash) -> Option<Reorg> {
        let ancestor = self.common_ancestor(old_head, self.head);
        let abandoned = self.branch_txs(old_head, ancestor);
        let adopted = self.branch_txs(self.head, ancestor);
        let ancestor_height = self.entries[&ancestor].block.header.height;
        self.tx_index.retain(|_, h| *h <= ancestor_height);
        let mut cursor = self.head;
        while cursor != ancestor {
            let block = &self.entries[&cursor].block;
            for tx in &block.transactions {
                self.tx_index.insert(tx.hash(), block.header.height);
            }
            cursor = block.header.parent_hash;
        }
        (ancestor != old_head).then_some(Reorg {
            old_head,
            new_head: self.head,
            common_ancestor: ancestor,
            abandoned,
            adopted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::GenesisConfig;

    fn accounts(n: usize) -> Vec<Account> {
        let mut v: Vec<Account> = (0..n).map(|i| Account::from_secret(&[i as u8 + 1; 32])).collect();
        v.sort_by_key(|a| a.address());
        v
    }

    fn set_of(epoch: u64, accts: &[Account]) -> ValidatorSet {
        ValidatorSet::new(
            epoch,
            accts.iter().map(|a| Validator {
                address: a.address(),
                public_key: a.public_key(),
            }),
        )
    }

    fn genesis() -> Block {
        Block::genesis(&GenesisConfig {
            oracle_public_key: Account::from_secret(&[99; 32]).public_key(),
            timestamp_ms: 10_000,
        })
    }

    const PARAMS: ConsensusParams = ConsensusParams { block_interval_ms: 100 };

    fn history(set: &ValidatorSet) -> ValidatorHistory {
        let mut h = ValidatorHistory::default();
        h.insert_set(set.clone());
        h
    }

    #[test]
    fn schedule_is_height_mod_n() {
        let accts = accounts(3);
        let set = set_of(1, &accts);
        assert_eq!(expected_proposer(0, &set).unwrap(), accts[0].address());
        assert_eq!(expected_proposer(5, &set).unwrap(), accts[2].address());
        assert_eq!(expected_proposer(0, &ValidatorSet::default()), Err(ConsensusError::NoValidators));
    }

    #[test]
    fn schedule_is_fair_over_three_rounds() {
        let accts = accounts(4);
        let set = set_of(1, &accts);
        let mut counts: HashMap<Address, usize> = HashMap::new();
        for h in 0..(3 * set.len() as u64) {
            *counts.entry(expected_proposer(h, &set).unwrap()).or_default() += 1;
        }
        assert!(counts.values().all(|&c| c == 3));
        for start in 0..20u64 {
            let window: std::collections::HashSet<_> =
                (start..start + 4).map(|h| expected_proposer(h, &set).unwrap()).collect();
            assert_eq!(window.len(), 4);
        }
    }

    #[test]
    fn validator_set_is_sorted_and_deduplicated() {
        let accts = accounts(3);
        let mut shuffled = accts.clone();
        shuffled.reverse();
        shuffled.push(accts[0].clone());
        assert_eq!(set_of(1, &shuffled), set_of(1, &accts));
    }

    #[test]
    fn proposals_follow_the_schedule() {
        let accts = accounts(3);
        let set = set_of(1, &accts);
        let view = ChainView::new(genesis());
        let now = 10_000 + PARAMS.block_interval_ms;
        let scheduled = &accts[1]; // height 1
        let block = propose_block(&view, &[], scheduled, &set, &PARAMS, now).unwrap();
        assert_eq!(block.header.height, 1);
        assert!(block.transactions.is_empty());
        assert_eq!(verify_proposer(&block.header, &set), Ok(()));
        assert_eq!(propose_block(&view, &[], &accts[2], &set, &PARAMS, now), Err(ProposeError::NotMyTurn));
    }

    #[test]
    fn out_of_turn_and_revoked_blocks_are_rejected() {
        let accts = accounts(3);
        let set = set_of(1, &accts);
        let g = genesis();
        let rogue = Block::seal(&accts[2], &g.header, 1, 10_100, vec![], WorldState { height: 1, ..Default::default() }.state_root());
        assert!(matches!(verify_proposer(&rogue.header, &set), Err(ConsensusViolation::WrongProposer { .. })));
        assert!(matches!(
            verify_block_consensus(&rogue.header, &g.header, &history(&set), &PARAMS),
            Err(ConsensusViolation::WrongProposer { .. })
        ));

        let scheduled = Block::seal(&accts[1], &g.header, 1, 10_100, vec![], WorldState { height: 1, ..Default::default() }.state_root());
        let shrunk = set_of(2, &[accts[0].clone(), accts[2].clone()]);
        assert_eq!(
            verify_proposer(&scheduled.header, &shrunk),
            Err(ConsensusViolation::NotAuthorized(accts[1].address()))
        );
        let mut h = history(&set);
        h.insert_set(shrunk);
        assert_eq!(verify_block_consensus(&scheduled.header, &g.header, &h, &PARAMS), Ok(()));
        h.note_revocation(accts[1].address(), 2, 10_050);
        assert_eq!(
            verify_block_consensus(&scheduled.header, &g.header, &h, &PARAMS),
            Err(ConsensusViolation::NotAuthorized(accts[1].address()))
        );
    }

    #[test]
    fn successor_may_seal_after_timeout() {
        let accts = accounts(3);
        let set = set_of(1, &accts);
        let view = ChainView::new(genesis());
        let successor = &accts[2]; // one turn after accts[1] at height 1
        assert_eq!(
            propose_block(&view, &[], successor, &set, &PARAMS, 10_150),
            Err(ProposeError::NotMyTurn)
        );
        let block = propose_block(&view, &[], successor, &set, &PARAMS, 10_200).unwrap();
        let g = &view.head().block.header;
        assert_eq!(verify_block_consensus(&block.header, g, &history(&set), &PARAMS), Ok(()));
        assert!(verify_proposer(&block.header, &set).is_err());
    }

    #[test]
    fn mempool_skips_stale_transactions() {
        use crate::contracts::{ContractKind, FN_DEPLOY, SYSTEM_ADDRESS};
        let accts = accounts(1);
        let set = set_of(1, &accts);
        let view = ChainView::new(genesis());
        let user = Account::generate();
        let valid = Transaction::new_signed(&user, 0, SYSTEM_ADDRESS, FN_DEPLOY, vec![ContractKind::Capac.as_str().into()], 1);
        let stale = Transaction::new_signed(&user, 5, SYSTEM_ADDRESS, FN_DEPLOY, vec![ContractKind::Capac.as_str().into()], 1);
        let block = propose_block(&view, &[stale, valid.clone()], &accts[0], &set, &PARAMS, 20_000).unwrap();
        assert_eq!(block.transactions, vec![valid]);
    }

    fn build_chain(view: &mut ChainView, set: &ValidatorSet, accts: &[Account], n: usize, start_ms: u64) -> Vec<Hash> {
        let h = history(set);
        let mut out = Vec::new();
        let mut now = start_ms;
        for _ in 0..n {
            let height = view.head_height() + 1;
            let proposer = accts.iter().find(|a| expected_proposer(height, set).unwrap() == a.address()).unwrap();
            now += PARAMS.block_interval_ms;
            let block = propose_block(view, &[], proposer, set, &PARAMS, now).unwrap();
            out.push(block.hash());
            view.insert(block, |p, hd| verify_block_consensus(hd, p, &h, &PARAMS)).unwrap();
        }
        out
    }

    #[test]
    fn longer_chain_wins_and_ties_take_smaller_hash() {
        let accts = accounts(2);
        let set = set_of(1, &accts);
        let h = history(&set);
        let mut a = ChainView::new(genesis());
        let mut b = a.clone();
        build_chain(&mut a, &set, &accts, 3, 10_000);
        build_chain(&mut b, &set, &accts, 2, 10_050);

        let mut merged_ab = a.clone();
        for hash in b.main_chain().into_iter().skip(1) {
            let block = b.get(&hash).unwrap().block.clone();
            merged_ab.insert(block, |p, hd| verify_block_consensus(hd, p, &h, &PARAMS)).unwrap();
        }
        assert_eq!(merged_ab.head_hash(), a.head_hash());

        let mut merged_ba = b.clone();
        for hash in a.main_chain().into_iter().skip(1) {
            let block = a.get(&hash).unwrap().block.clone();
            merged_ba.insert(block, |p, hd| verify_block_consensus(hd, p, &h, &PARAMS)).unwrap();
        }
        assert_eq!(merged_ba.head_hash(), a.head_hash());

        // Equal heights resolve to the smaller hash regardless of order.
        let mut c = ChainView::new(genesis());
        let mut d = c.clone();
        let ca = build_chain(&mut c, &set, &accts, 2, 10_000);
        let da = build_chain(&mut d, &set, &accts, 2, 10_030);
        let winner = std::cmp::min(*ca.last().unwrap(), *da.last().unwrap());
        for (mut base, other) in [(c.clone(), d.clone()), (d, c)] {
            for hash in other.main_chain().into_iter().skip(1) {
                let block = other.get(&hash).unwrap().block.clone();
                base.insert(block, |p, hd| verify_block_consensus(hd, p, &h, &PARAMS)).unwrap();
            }
            assert_eq!(base.head_hash(), winner);
        }
    }

    #[test]
    fn orphans_attach_when_parent_arrives() {
        let accts = accounts(2);
        let set = set_of(1, &accts);
        let h = history(&set);
        let mut src = ChainView::new(genesis());
        let hashes = build_chain(&mut src, &set, &accts, 3, 10_000);
        let mut dst = ChainView::new(genesis());
        let blocks: Vec<Block> = hashes.iter().map(|x| src.get(x).unwrap().block.clone()).collect();
        for b in blocks.iter().rev().take(2) {
            let out = dst.insert(b.clone(), |p, hd| verify_block_consensus(hd, p, &h, &PARAMS)).unwrap();
            assert!(matches!(out, InsertOutcome::Orphan { .. }));
        }
        let out = dst.insert(blocks[0].clone(), |p, hd| verify_block_consensus(hd, p, &h, &PARAMS)).unwrap();
        assert!(matches!(out, InsertOutcome::Added { ref added, .. } if added.len() == 3));
        assert_eq!(dst.head_hash(), src.head_hash());
    }

    #[test]
    fn reorg_reports_abandoned_transactions() {
        use crate::contracts::{ContractKind, FN_DEPLOY, SYSTEM_ADDRESS};
        let accts = accounts(2);
        let set = set_of(1, &accts);
        let h = history(&set);
        let check = |p: &BlockHeader, hd: &BlockHeader| verify_block_consensus(hd, p, &h, &PARAMS);
        let mut view = ChainView::new(genesis());
        let user = Account::generate();
        let tx = Transaction::new_signed(&user, 0, SYSTEM_ADDRESS, FN_DEPLOY, vec![ContractKind::Capac.as_str().into()], 1);

        let p1 = accts.iter().find(|a| expected_proposer(1, &set).unwrap() == a.address()).unwrap();
        let with_tx = propose_block(&view, std::slice::from_ref(&tx), p1, &set, &PARAMS, 10_100).unwrap();
        view.insert(with_tx.clone(), check).unwrap();
        assert_eq!(view.inclusion_height(&tx.hash()), Some(1));

        // A competing two-block branch without the transaction.
        let mut other = ChainView::new(genesis());
        build_chain(&mut other, &set, &accts, 2, 10_020);
        let mut reorgs = Vec::new();
        for hash in other.main_chain().into_iter().skip(1) {
            if let InsertOutcome::Added { reorg: Some(r), .. } = view.insert(other.get(&hash).unwrap().block.clone(), check).unwrap() {
                reorgs.push(r);
            }
        }
        assert_eq!(reorgs.len(), 1);
        assert_eq!(reorgs[0].abandoned, vec![tx.clone()]);
        assert!(reorgs[0].adopted.is_empty());
        assert_eq!(view.head_hash(), other.head_hash());
        assert_eq!(view.inclusion_height(&tx.hash()), None);
    }
}
