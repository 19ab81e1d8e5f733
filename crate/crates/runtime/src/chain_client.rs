//! HTTP client for a node's RPC, plus a nonce-tracking transaction sender.

use std::time::Duration;

use blendmas_core::codec::Decode;
use blendmas_core::contracts::{CapToken, FN_QUERY, FN_QUERY_TOKEN};
use blendmas_core::crypto::{Account, Address, Hash};
use blendmas_core::ledger::{Block, Transaction};
use tokio::sync::Mutex;

use crate::http::{get_json, post_json, ApiError};
use crate::node::{HeadInfo, RejectedBlock};
use crate::node_rpc::{ContractInfo, NonceReply, PartitionBody, QueryReply, QueryRequest, TxStatus, TxStatusReply, ValidatorsReply};
use crate::util::{http_client, now_secs};

#[derive(Debug, Clone)]
pub struct ChainClient {
    base: String,
    http: reqwest::Client,
}

#[derive(serde::Deserialize)]
struct HashReply {
    hash: Hash,
}

#[derive(serde::Deserialize)]
struct MempoolReply {
    transactions: Vec<Hash>,
}

impl ChainClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: http_client(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn head(&self) -> Result<HeadInfo, ApiError> {
        let resp = self
            .http
            .get(self.url("/head"))
            .send()
            .await
            .map_err(|e| ApiError::unavailable(e.to_string()))?;
        resp.json().await.map_err(|e| ApiError::unavailable(e.to_string()))
    }

    pub async fn nonce(&self, address: &Address) -> Result<NonceReply, ApiError> {
        get_json(&self.http, &self.url(&format!("/nonce/{address}"))).await
    }

    pub async fn submit(&self, tx: &Transaction) -> Result<Hash, ApiError> {
        let reply: HashReply = post_json(&self.http, &self.url("/tx"), tx).await?;
        Ok(reply.hash)
    }

    pub async fn tx_status(&self, hash: &Hash, wait: Duration) -> Result<TxStatusReply, ApiError> {
        get_json(
            &self.http,
            &self.url(&format!("/tx/{hash}?wait_ms={}", wait.as_millis())),
        )
        .await
    }

    /// Waits until `hash` is on the main chain; returns the inclusion height.
    pub async fn wait_included(&self, hash: &Hash, timeout: Duration) -> Result<u64, ApiError> {
        let deadline = tokio::time::Instant::now() + timeout;
        let mut unknown_streak = 0;
        loop {
            let remaining = deadline.saturating_duration_since(tokio::time::Instant::now());
            if remaining.is_zero() {
                return Err(ApiError::unavailable(format!("transaction {hash} not included within {timeout:?}")));
            }
            let status = self.tx_status(hash, remaining.min(Duration::from_secs(10))).await?;
            match status.status {
                TxStatus::Included => return Ok(status.height.unwrap_or_default()),
                TxStatus::Pending => unknown_streak = 0,
                TxStatus::Unknown => {
                    unknown_streak += 1;
                    // A transaction can be briefly absent during a reorg.
                    if unknown_streak > 20 {
                        return Err(ApiError::unavailable(format!("transaction {hash} was dropped")));
                    }
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            }
        }
    }

    pub async fn query(&self, contract: &Address, function: &str, args: &[Vec<u8>]) -> Result<Vec<u8>, ApiError> {
        let body = QueryRequest {
            contract: *contract,
            function: function.to_string(),
            args: args.iter().map(hex::encode).collect(),
        };
        let reply: QueryReply = post_json(&self.http, &self.url("/query"), &body).await?;
        hex::decode(reply.result).map_err(|e| ApiError::unavailable(format!("bad query result: {e}")))
    }

    pub async fn query_token(&self, contract: &Address, subject: &Address, resource: &str) -> Result<Option<CapToken>, ApiError> {
        let raw = self
            .query(contract, FN_QUERY_TOKEN, &[subject.0.to_vec(), resource.as_bytes().to_vec()])
            .await?;
        Option::<CapToken>::from_canonical_bytes(&raw).map_err(|e| ApiError::unavailable(e.to_string()))
    }

    pub async fn query_hash(&self, contract: &Address, key: &str) -> Result<Option<Hash>, ApiError> {
        let raw = self.query(contract, FN_QUERY, &[key.as_bytes().to_vec()]).await?;
        Option::<Hash>::from_canonical_bytes(&raw).map_err(|e| ApiError::unavailable(e.to_string()))
    }

    pub async fn contracts(&self) -> Result<Vec<ContractInfo>, ApiError> {
        let resp = self
            .http
            .get(self.url("/contracts"))
            .send()
            .await
            .map_err(|e| ApiError::unavailable(e.to_string()))?;
        resp.json().await.map_err(|e| ApiError::unavailable(e.to_string()))
    }

    pub async fn validators(&self) -> Result<ValidatorsReply, ApiError> {
        get_json(&self.http, &self.url("/validators")).await
    }

    pub async fn mempool(&self) -> Result<Vec<Hash>, ApiError> {
        let r: MempoolReply = get_json(&self.http, &self.url("/mempool")).await?;
        Ok(r.transactions)
    }

    pub async fn rejected(&self) -> Result<Vec<RejectedBlock>, ApiError> {
        let resp = self
            .http
            .get(self.url("/rejected"))
            .send()
            .await
            .map_err(|e| ApiError::unavailable(e.to_string()))?;
        resp.json().await.map_err(|e| ApiError::unavailable(e.to_string()))
    }

    /// Drops traffic to and from `blocked` at this node (test hook).
    pub async fn partition(&self, blocked: Vec<Address>) -> Result<(), ApiError> {
        let _: serde_json::Value = post_json(&self.http, &self.url("/admin/partition"), &PartitionBody { blocked }).await?;
        Ok(())
    }

    /// Main-chain blocks above `after` (all blocks from genesis when `None`).
    pub async fn blocks(&self, after: Option<u64>, limit: usize) -> Result<Vec<Block>, ApiError> {
        let url = match after {
            Some(a) => self.url(&format!("/blocks?after={a}&limit={limit}")),
            None => self.url(&format!("/blocks?limit={limit}")),
        };
        let resp = self
            .http
            .get(url)
            .send()
            .await
            .map_err(|e| ApiError::unavailable(e.to_string()))?;
        resp.json().await.map_err(|e| ApiError::unavailable(e.to_string()))
    }
}

/// Signs and submits transactions for one account with sequential nonces.
#[derive(Debug)]
pub struct TxSender {
    account: Account,
    chain: ChainClient,
    next_nonce: Mutex<Option<u64>>,
}

impl TxSender {
    pub fn new(account: Account, chain: ChainClient) -> Self {
        Self {
            account,
            chain,
            next_nonce: Mutex::new(None),
        }
    }

    pub fn address(&self) -> Address {
        self.account.address()
    }

    pub fn chain(&self) -> &ChainClient {
        &self.chain
    }

    /// Submits a call; the nonce is reserved only if the node accepts it.
    /// A stale cached nonce is refreshed from the node once.
    pub async fn send(&self, target: Address, function: &str, args: Vec<Vec<u8>>) -> Result<(Transaction, Hash), ApiError> {
        let mut next = self.next_nonce.lock().await;
        let mut refreshed = next.is_none();
        loop {
            let nonce = match *next {
                Some(n) => n,
                None => self.chain.nonce(&self.account.address()).await?.pending,
            };
            let tx = Transaction::new_signed(&self.account, nonce, target, function, args.clone(), now_secs());
            match self.chain.submit(&tx).await {
                Ok(hash) => {
                    *next = Some(nonce + 1);
                    return Ok((tx, hash));
                }
                Err(e) => {
                    *next = None;
                    if refreshed || !e.reason.contains("nonce mismatch") {
                        return Err(e);
                    }
                    refreshed = true;
                }
            }
        }
    }

    pub async fn send_and_wait(
        &self,
        target: Address,
        function: &str,
        args: Vec<Vec<u8>>,
        timeout: Duration,
    ) -> Result<(Transaction, u64), ApiError> {
        let (tx, hash) = self.send(target, function, args).await?;
        let height = self.chain.wait_included(&hash, timeout).await?;
        Ok((tx, height))
    }
}
