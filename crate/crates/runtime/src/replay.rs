//! Deterministic re-execution of a chain's transaction log from genesis.

use std::path::Path;

use anyhow::{bail, Context, Result};
use blendmas_core::crypto::Hash;
use blendmas_core::ledger::{execute_transactions, Block, Transaction, WorldState};
use serde::{Deserialize, Serialize};

use crate::chain_client::ChainClient;
use crate::http::ApiError;

/// Transactions grouped by the block height they were included at.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLog {
    pub entries: Vec<TxLogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLogEntry {
    pub height: u64,
    pub transactions: Vec<Transaction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub height: u64,
    pub transactions: usize,
    pub state_root: Hash,
}

impl TxLog {
    /// Log of a main chain given from height 1 upwards.
    pub fn from_blocks(blocks: &[Block]) -> Self {
        Self {
            entries: blocks
                .iter()
                .filter(|b| b.height() > 0)
                .map(|b| TxLogEntry {
                    height: b.height(),
                    transactions: b.transactions.clone(),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::util::read_json(path).with_context(|| format!("reading {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_json(path, self)
    }
}

/// Executes the log against an empty genesis state. Heights must be contiguous from 1.
pub fn replay(log: &TxLog) -> Result<ReplayReport> {
    let mut state = WorldState::default();
    let mut count = 0;
    for entry in &log.entries {
        if entry.height != state.height + 1 {
            bail!("log jumps from height {} to {}", state.height, entry.height);
        }
        state = execute_transactions(&state, &entry.transactions)
            .with_context(|| format!("replaying height {}", entry.height))?;
        count += entry.transactions.len();
    }
    Ok(ReplayReport {
        height: state.height,
        transactions: count,
        state_root: state.state_root(),
    })
}

/// Downloads the main chain of a node, from genesis to its head.
pub async fn fetch_chain(chain: &ChainClient) -> Result<Vec<Block>, ApiError> {
    const PAGE: usize = 256;
    let mut blocks = chain.blocks(None, PAGE).await?;
    loop {
        let last = blocks.last().map(|b| b.height()).unwrap_or(0);
        let page = chain.blocks(Some(last), PAGE).await?;
        if page.is_empty() {
            return Ok(blocks);
        }
        blocks.extend(page);
    }
}
