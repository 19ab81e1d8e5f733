//! Deterministic fixtures shared by the benchmarks.

use blendmas_core::contracts::{FN_DEPLOY, SYSTEM_ADDRESS};
use blendmas_core::crypto::Account;
use blendmas_core::ledger::{execute_transactions, Block, GenesisConfig, Transaction, WorldState};
use blendmas_core::ContractKind;

pub fn account(seed: u8) -> Account {
    Account::from_secret(&[seed; 32])
}

/// `n` deploy transactions from distinct senders, all valid on an empty state.
pub fn deploy_batch(n: usize) -> Vec<Transaction> {
    (0..n)
        .map(|i| {
            let acct = Account::from_secret(&seed_bytes(i as u64));
            let kind = if i % 2 == 0 { ContractKind::Capac } else { ContractKind::HashedIndex };
            Transaction::new_signed(&acct, 0, SYSTEM_ADDRESS, FN_DEPLOY, vec![kind.as_str().into()], 1)
        })
        .collect()
}

/// A sealed block carrying `txs`, on top of a fixed genesis.
pub fn block_with(txs: Vec<Transaction>) -> Block {
    let oracle = account(42);
    let genesis = Block::genesis(&GenesisConfig {
        oracle_public_key: oracle.public_key(),
        timestamp_ms: 1_000,
    });
    let state = execute_transactions(&WorldState::default(), &txs).expect("fixture transactions are valid");
    Block::seal(&oracle, &genesis.header, 0, 2_000, txs, state.state_root())
}

fn seed_bytes(i: u64) -> [u8; 32] {
    let mut s = [7u8; 32];
    s[..8].copy_from_slice(&i.to_be_bytes());
    s
}
