use std::time::{Duration, Instant};

use blendmas_core::bench::Mode;
use blendmas_core::contracts::{ContractKind, FN_DEPLOY, SYSTEM_ADDRESS};
use blendmas_core::crypto::Account;
use blendmas_core::ledger::Transaction;
use blendmas_core::membership::Role;
use blendmas_runtime::node_rpc::TxStatus;
use blendmas_runtime::provision::{wait_converged, LocalNetwork, NetworkSpec};
use blendmas_runtime::util::now_secs;

fn spec(miners: usize, interval: u64) -> NetworkSpec {
    NetworkSpec {
        miners,
        mode: Mode::Mono,
        block_interval_ms: interval,
        ..NetworkSpec::default()
    }
}

async fn enrolled_client(net: &LocalNetwork) -> Account {
    let a = Account::generate();
    net.oracle_client().join(&a, "127.0.0.1", 0, Role::Client).await.unwrap();
    a
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn transaction_reaches_every_node_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let net = LocalNetwork::start_chain(dir.path(), spec(6, 2000)).await.unwrap();
    let client = enrolled_client(&net).await;
    let tx = Transaction::new_signed(&client, 0, SYSTEM_ADDRESS, FN_DEPLOY, vec![ContractKind::Capac.as_str().into()], now_secs());
    let chains = net.chains();
    let hash = chains[3].submit(&tx).await.unwrap();
    let started = Instant::now();
    let mut missing = chains.len();
    while missing > 0 && started.elapsed() < Duration::from_secs(2) {
        missing = 0;
        for c in &chains {
            let seen = c.mempool().await.unwrap().contains(&hash)
                || c.tx_status(&hash, Duration::ZERO).await.unwrap().status == TxStatus::Included;
            if !seen {
                missing += 1;
            }
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(missing, 0, "tx not seen everywhere within 2 s");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn fresh_node_syncs_existing_chain() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = LocalNetwork::start_chain(dir.path(), spec(2, 100)).await.unwrap();
    let chains = net.chains();
    wait_converged(&chains, 20, Duration::from_secs(30)).await.expect("20 blocks");
    net.add_miner().await.unwrap();
    let head = wait_converged(&net.chains(), 21, Duration::from_secs(30)).await;
    assert!(head.is_some(), "new node did not converge");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn stale_and_forged_transactions_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let net = LocalNetwork::start_chain(dir.path(), spec(1, 200)).await.unwrap();
    let chain = &net.chains()[0];
    let stranger = Account::generate();
    let tx = Transaction::new_signed(&stranger, 0, SYSTEM_ADDRESS, FN_DEPLOY, vec![b"capac".to_vec()], now_secs());
    let err = chain.submit(&tx).await.unwrap_err();
    assert!(err.reason.contains("not enrolled"), "{}", err.reason);

    let client = enrolled_client(&net).await;
    let mut forged = Transaction::new_signed(&client, 0, SYSTEM_ADDRESS, FN_DEPLOY, vec![b"capac".to_vec()], now_secs());
    forged.args = vec![b"hashed_index".to_vec()];
    assert!(chain.submit(&forged).await.is_err());
}
