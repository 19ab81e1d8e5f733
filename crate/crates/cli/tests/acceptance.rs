//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p blendmas-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::future::Future;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, ensure, Context, Result};
use blendmas_core::bench::{aggregate, compare_modes, dominates, reference, Mode, ScenarioConfig, TrialRecord};
use blendmas_core::contracts::{Action, ContractKind, FN_DEPLOY, SYSTEM_ADDRESS};
use blendmas_core::crypto::{Account, Address};
use blendmas_core::ledger::Transaction;
use blendmas_core::membership::Role;
use blendmas_core::merkle::merkle_root;
use blendmas_core::security::{
    frame_key, DenyReason, EntityRole, STAGE_ACCESS_VERIFICATION, STAGE_QUERY_TOKEN, STAGE_TOKEN_VALIDATION,
};
use blendmas_runtime::chain_client::ChainClient;
use blendmas_runtime::client::ClientSession;
use blendmas_runtime::harness::run_scenario;
use blendmas_runtime::node_rpc::TxStatus;
use blendmas_runtime::provision::{
    setup_workload, wait_converged, LocalNetwork, NetworkSpec, ProcessNetwork, Workload, QUERY_RESOURCE,
};
use blendmas_runtime::replay::{replay, TxLog};
use blendmas_runtime::util::{now_secs, wait_for};
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

const TRIALS: u32 = 50;
const RECORDS: usize = 50;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Warn,
    Fail,
}

struct Verdict {
    status: Status,
    detail: String,
}

fn judge(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

struct Report {
    lines: BTreeMap<u8, (String, Verdict)>,
}

impl Report {
    fn record(&mut self, id: u8, name: &str, result: Result<Verdict>) {
        let v = result.unwrap_or_else(|e| Verdict {
            status: Status::Fail,
            detail: format!("error: {e:#}"),
        });
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Warn => "PASS (warn)",
            Status::Fail => "FAIL",
        };
        println!("criterion {id} [{tag}] {name}: {}", v.detail);
        self.lines.insert(id, (name.to_string(), v));
    }
}

async fn within<T>(limit: Duration, f: impl Future<Output = Result<T>>) -> Result<T> {
    tokio::time::timeout(limit, f)
        .await
        .map_err(|_| anyhow!("timed out after {limit:?}"))?
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_blendmas"))
}

fn spec(miners: usize, mode: Mode, interval: u64) -> NetworkSpec {
    NetworkSpec {
        miners,
        mode,
        block_interval_ms: interval,
        ..NetworkSpec::default()
    }
}

/// Enrolls `account` with `role` (no listener) and registers it.
async fn onboard(net_urls: &BTreeMap<blendmas_runtime::config::ServiceKind, String>, oracle: &blendmas_runtime::oracle::OracleClient, role: Role, entity: EntityRole, vid: &str) -> Result<ClientSession> {
    let s = ClientSession::new(Account::generate(), net_urls.clone());
    oracle.join(&s.account, "127.0.0.1", 0, role).await?;
    s.register(vid, entity).await?;
    Ok(s)
}

// ---- criterion 9 -------------------------------------------------------

fn oracle_root(leaves: &[Vec<u8>]) -> [u8; 32] {
    fn h(parts: &[&[u8]]) -> [u8; 32] {
        let mut d = Sha256::new();
        for p in parts {
            d.update(p);
        }
        d.finalize().into()
    }
    if leaves.is_empty() {
        return [0; 32];
    }
    let mut level: Vec<[u8; 32]> = leaves.iter().map(|l| h(&[&[0u8], l])).collect();
    loop {
        let mut next = Vec::new();
        let mut i = 0;
        while i < level.len() {
            let left = level[i];
            let right = if i + 1 < level.len() { level[i + 1] } else { left };
            next.push(h(&[&[1u8], &left, &right]));
            i += 2;
        }
        level = next;
        if level.len() == 1 {
            return level[0];
        }
    }
}

fn criterion_9() -> Result<Verdict> {
    let started = Instant::now();
    let mut rng = rand::rngs::StdRng::seed_from_u64(9);
    let mut lists = 0;
    for n in 0..=8usize {
        let mut cases: Vec<Vec<Vec<u8>>> = vec![vec![vec![7u8; 4]; n], (0..n).map(|i| vec![i as u8]).collect()];
        for _ in 0..50 {
            cases.push((0..n).map(|_| (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect()).collect());
        }
        for leaves in cases {
            let ours = merkle_root(&leaves);
            ensure!(ours.0 == oracle_root(&leaves), "merkle mismatch for {n} leaves");
            lists += 1;
        }
    }
    let mut flips = 0;
    for _ in 0..1000 {
        let account = Account::generate();
        let msg: Vec<u8> = (0..rng.gen_range(1..256)).map(|_| rng.gen()).collect();
        let sig = account.sign(&msg);
        ensure!(account.public_key().verify(&msg, &sig), "valid signature rejected");
        let mut bad_msg = msg.clone();
        let i = rng.gen_range(0..bad_msg.len());
        bad_msg[i] ^= rng.gen_range(1..=255u8);
        ensure!(!account.public_key().verify(&bad_msg, &sig), "flipped message accepted");
        let mut bad_sig = sig;
        let j = rng.gen_range(0..bad_sig.0.len());
        bad_sig.0[j] ^= rng.gen_range(1..=255u8);
        ensure!(!account.public_key().verify(&msg, &bad_sig), "flipped signature accepted");
        flips += 2;
    }
    let elapsed = started.elapsed();
    Ok(judge(
        elapsed < Duration::from_secs(30),
        format!("{lists} merkle lists (sizes 0-8) match the oracle; 1000 round trips, {flips}/{flips} flips rejected; {elapsed:.2?} (limit 30 s)"),
    ))
}

// ---- criterion 3 -------------------------------------------------------

async fn criterion_3(dir: &Path) -> Result<Verdict> {
    let mut net = LocalNetwork::start(dir, spec(2, Mode::Mono, 300)).await?;
    let w = setup_workload(&net.endpoints, Account::generate(), 2, 3).await?;
    let urls = net.endpoints.services.clone();
    let oracle = net.oracle_client();
    let client = &w.client;
    let token = &w.token.token;

    let untokened = onboard(&urls, &oracle, Role::Client, EntityRole::Client, "c3-no-token").await?;
    let disabled = onboard(&urls, &oracle, Role::Client, EntityRole::Client, "c3-disabled").await?;
    let now = now_secs();
    disabled
        .request_token(disabled.address(), QUERY_RESOURCE, BTreeSet::from([Action::Get]), now - 10, now + 600)
        .await?;
    disabled.revoke_token(disabled.address(), QUERY_RESOURCE).await?;
    let admin = onboard(&urls, &oracle, Role::Client, EntityRole::Admin, "c3-admin").await?;
    admin
        .request_token(admin.address(), "/data", BTreeSet::from([Action::Get]), now - 10, now + 600)
        .await?;

    let cases: Vec<(DenyReason, Address, &str, Action, Option<u64>)> = vec![
        (DenyReason::Ok, client.address(), QUERY_RESOURCE, Action::Get, None),
        (DenyReason::NoToken, untokened.address(), QUERY_RESOURCE, Action::Get, None),
        (DenyReason::Disabled, disabled.address(), QUERY_RESOURCE, Action::Get, None),
        (DenyReason::Expired, client.address(), QUERY_RESOURCE, Action::Get, Some(token.not_after + 1)),
        (DenyReason::NotYetValid, client.address(), QUERY_RESOURCE, Action::Get, Some(token.not_before - 1)),
        (DenyReason::WrongResource, admin.address(), QUERY_RESOURCE, Action::Get, None),
        (DenyReason::WrongAction, client.address(), QUERY_RESOURCE, Action::Post, None),
        (DenyReason::IdentityFailed, Account::generate().address(), QUERY_RESOURCE, Action::Get, None),
    ];
    let mut seen = BTreeSet::new();
    let mut wrong = Vec::new();
    for (expected, subject, resource, action, at) in cases {
        let d = client.validate(subject, resource, action, at).await?;
        if d.reason == expected && d.granted == (expected == DenyReason::Ok) {
            seen.insert(expected.as_str());
        } else {
            wrong.push(format!("{} gave {}", expected.as_str(), d.reason.as_str()));
        }
    }
    // The same reasons surface through the data endpoint.
    let frame = &w.frame_ids()[0];
    let through_data = [
        (client.query(frame, QUERY_RESOURCE, Action::Post).await?, "wrong_action"),
        (untokened.query(frame, QUERY_RESOURCE, Action::Get).await?, "no_token"),
        (client.query(frame, QUERY_RESOURCE, Action::Get).await?, "ok"),
    ];
    for (out, want) in &through_data {
        if out.reason != *want {
            wrong.push(format!("data query expected {want}, got {} ({})", out.reason, out.status));
        }
    }
    for s in net.services.iter_mut() {
        s.shutdown();
    }
    Ok(judge(
        wrong.is_empty() && seen.len() == 8,
        if wrong.is_empty() {
            format!("8/8 reasons reached exactly: {}", seen.into_iter().collect::<Vec<_>>().join(", "))
        } else {
            format!("mismatches: {}", wrong.join("; "))
        },
    ))
}

// ---- criterion 4 -------------------------------------------------------

async fn criterion_4(dir: &Path) -> Result<Verdict> {
    let interval = 500;
    let net = LocalNetwork::start(dir, spec(6, Mode::Mono, interval)).await?;
    let w = setup_workload(&net.endpoints, Account::generate(), 1, 4).await?;
    let oracle = net.oracle_client();
    let chains = net.chains();
    let victim_idx = 5;
    let victim = net.nodes[victim_idx].address();
    let honest: Vec<&ChainClient> = chains.iter().enumerate().filter(|(i, _)| *i != victim_idx).map(|(_, c)| c).collect();
    let window = Duration::from_millis(2 * interval);

    // (a) miner
    let revoke_height = honest[0].head().await?.height;
    let revoked_at = Instant::now();
    oracle.revoke(victim, "acceptance").await?;
    let excluded = wait_for(window, Duration::from_millis(20), || async {
        for c in &honest {
            let v = c.validators().await.ok()?;
            if v.miners.contains(&victim) || v.upcoming.contains(&victim) {
                return None;
            }
        }
        Some(revoked_at.elapsed())
    })
    .await;
    // Let the victim keep producing on its stale roster, then look for its blocks.
    let rejected_everywhere = wait_for(Duration::from_millis(12 * interval), Duration::from_millis(100), || async {
        for c in &honest {
            let r = c.rejected().await.ok()?;
            if !r.iter().any(|b| b.proposer == victim) {
                return None;
            }
        }
        Some(())
    })
    .await
    .is_some();
    let mut victim_blocks_on_honest = 0;
    for c in &honest {
        let blocks = c.blocks(Some(revoke_height), 1000).await?;
        victim_blocks_on_honest += blocks.iter().filter(|b| b.header.proposer == victim).count();
    }
    let progressed = honest[0].head().await?.height > revoke_height;

    // (b) client
    let client = &w.client;
    let revoked_at = Instant::now();
    oracle.revoke(client.address(), "acceptance").await?;
    let client_locked_out = wait_for(window, Duration::from_millis(20), || async {
        let auth = client.authenticate(&client.address()).await.ok()?;
        if auth.authentic {
            return None;
        }
        let now = now_secs();
        let denied = client
            .request_token(client.address(), QUERY_RESOURCE, BTreeSet::from([Action::Get]), now, now + 60)
            .await
            .is_err();
        denied.then(|| revoked_at.elapsed())
    })
    .await;

    let ok = excluded.is_some() && rejected_everywhere && victim_blocks_on_honest == 0 && progressed && client_locked_out.is_some();
    Ok(judge(
        ok,
        format!(
            "6 nodes; miner excluded from schedule after {:?}, its blocks rejected by all 5 honest nodes: {rejected_everywhere}, \
             victim blocks on honest chains: {victim_blocks_on_honest}, chain progressed: {progressed}; \
             client identity and token issuance refused after {:?} (limit {window:?})",
            excluded, client_locked_out
        ),
    ))
}

// ---- criterion 6 -------------------------------------------------------

async fn criterion_6(dir: &Path) -> Result<Verdict> {
    let interval: u64 = 400;
    let net = LocalNetwork::start_chain(dir, spec(4, Mode::Mono, interval)).await?;
    let oracle = net.oracle_client();
    let chains = net.chains();
    let a = Account::generate();
    let b = Account::generate();
    oracle.join(&a, "127.0.0.1", 0, Role::Client).await?;
    oracle.join(&b, "127.0.0.1", 0, Role::Client).await?;
    wait_converged(&chains, 2, Duration::from_secs(10)).await.context("no common head")?;

    let sides = [vec![0usize, 1], vec![2usize, 3]];
    let addrs: Vec<Address> = net.nodes.iter().map(|n| n.address()).collect();
    for (s, other) in [(0, 1), (1, 0)] {
        let blocked: HashSet<Address> = sides[other].iter().map(|&i| addrs[i]).collect();
        for &i in &sides[s] {
            net.nodes[i].node.p2p().set_blocked(blocked.clone());
        }
    }
    let base = chains[0].head().await?.height.max(chains[2].head().await?.height);
    let deploy = |acct: &Account| Transaction::new_signed(acct, 0, SYSTEM_ADDRESS, FN_DEPLOY, vec![ContractKind::Capac.as_str().into()], now_secs());
    let tx_a = chains[0].submit(&deploy(&a)).await?;
    let tx_b = chains[2].submit(&deploy(&b)).await?;

    // Heal once both sides included their transaction, or one side reached 3 blocks.
    let deadline = Instant::now() + Duration::from_secs(20);
    let (mut grown_a, mut grown_b);
    loop {
        let (ha, hb) = (chains[0].head().await?.height, chains[2].head().await?.height);
        grown_a = ha.saturating_sub(base);
        grown_b = hb.saturating_sub(base);
        let inc_a = chains[0].tx_status(&tx_a, Duration::ZERO).await?.status == TxStatus::Included;
        let inc_b = chains[2].tx_status(&tx_b, Duration::ZERO).await?.status == TxStatus::Included;
        if (inc_a && inc_b) || grown_a >= 3 || grown_b >= 3 || Instant::now() > deadline {
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    let heads_before = (chains[0].head().await?, chains[2].head().await?);
    let forked = heads_before.0.hash != heads_before.1.hash;
    for n in &net.nodes {
        n.node.p2p().set_blocked(HashSet::new());
    }
    let healed = Instant::now();
    let converged = wait_converged(&chains, 0, Duration::from_millis(5 * interval)).await;
    let took = healed.elapsed();
    ensure!(converged.is_some(), "no single head within 5 intervals ({grown_a} vs {grown_b} blocks per side)");
    // The side whose pre-heal head is off the final chain lost; its tx must survive the reorg.
    let final_at = chains[0].blocks(Some(heads_before.0.height - 1), 1).await?;
    let a_won = final_at.first().map(|blk| blk.hash()) == Some(heads_before.0.hash);
    let (loser_tx, loser_side) = if a_won { (tx_b, &sides[1]) } else { (tx_a, &sides[0]) };
    let mut recovered = true;
    for &i in loser_side {
        if chains[i].tx_status(&loser_tx, Duration::ZERO).await?.status == TxStatus::Unknown {
            recovered = false;
        }
    }
    let included_everywhere = wait_for(Duration::from_millis(10 * interval), Duration::from_millis(50), || async {
        for c in &chains {
            for t in [&tx_a, &tx_b] {
                if c.tx_status(t, Duration::ZERO).await.ok()?.status != TxStatus::Included {
                    return None;
                }
            }
        }
        Some(())
    })
    .await
    .is_some();
    let small = grown_a <= 3 && grown_b <= 3;
    Ok(judge(
        forked && small && recovered && included_everywhere,
        format!(
            "sides grew {grown_a} and {grown_b} blocks (forked: {forked}); one head on 4 nodes {took:?} after healing (limit {:?}); \
             losing-branch tx pending or re-included on its side: {recovered}, both txs on the final chain: {included_everywhere}",
            Duration::from_millis(5 * interval)
        ),
    ))
}

// ---- criteria 1, 5, 7, 8, 2 ----------------------------------------------

struct MicroRun {
    net: ProcessNetwork,
    workload: Workload,
}

async fn criterion_1(dir: &Path) -> Result<(Verdict, MicroRun)> {
    let started = Instant::now();
    let net = ProcessNetwork::start(&bin(), dir, &spec(4, Mode::Micro, 500)).await?;
    let w = setup_workload(&net.endpoints, Account::generate(), RECORDS, 1).await?;
    // Writer access for a further edge entity, beyond the services' own grants.
    let edge = onboard(&net.endpoints.services, &net.endpoints.oracle_client(), Role::Service, EntityRole::EdgeService, "edge-analytics").await?;
    let grant = edge.grant(ContractKind::HashedIndex).await?;
    let mut granted = 0;
    for id in w.frame_ids() {
        let out = w.client.query(&id, QUERY_RESOURCE, Action::Get).await?;
        if out.granted() && out.reason == "ok" {
            granted += 1;
        }
    }
    let elapsed = started.elapsed();
    let v = judge(
        granted == RECORDS && elapsed < Duration::from_secs(180),
        format!(
            "micro mode, 4 miners as processes: client registered, writer grant at height {}, token issued, {RECORDS} records, {granted}/{RECORDS} queries 200/ok; {elapsed:.1?} (limit 180 s)",
            grant.height
        ),
    );
    Ok((v, MicroRun { net, workload: w }))
}

async fn criterion_5(run: &MicroRun, dir: &Path) -> Result<Verdict> {
    let node = run.net.endpoints.nodes[1].clone();
    let log_path = dir.join("txlog.json");
    let out = tokio::process::Command::new(bin())
        .args(["replay", "--node", &node, "--repeat", "3", "--save-log"])
        .arg(&log_path)
        .output()
        .await?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let roots: Vec<&str> = stdout
        .lines()
        .filter(|l| l.starts_with("replay "))
        .filter_map(|l| l.rsplit(' ').next())
        .collect();
    let head = stdout
        .lines()
        .find_map(|l| l.strip_prefix("node head state_root "))
        .ok_or_else(|| anyhow!("no head root in replay output: {stdout}"))?;
    ensure!(roots.len() == 3, "expected 3 replays, got: {stdout}");
    // A second, in-process replay of the saved log.
    let log = TxLog::load(&log_path)?;
    let local = replay(&log)?;
    let txs: usize = log.entries.iter().map(|e| e.transactions.len()).sum();
    let same = roots.iter().all(|r| *r == head) && local.state_root.to_string() == head;
    Ok(judge(
        same && out.status.success(),
        format!(
            "{} blocks, {txs} txs replayed 3x in a separate process plus once in-process; all roots {} head {}",
            local.height,
            if same { "equal" } else { "DIFFER from" },
            &head[..16]
        ),
    ))
}

async fn scenario(w: &Workload, mode: Mode, ac: bool) -> Result<Vec<TrialRecord>> {
    let mut cfg = ScenarioConfig::new(mode, ac, "");
    cfg.trials = TRIALS;
    Ok(run_scenario(&w.client, &cfg, &w.frame_ids()).await?)
}

fn criterion_7(records: &[TrialRecord]) -> Result<Verdict> {
    let s = aggregate(records)?;
    let cell = s.cell(Mode::Micro, true).context("no ac-on cell")?;
    let q = cell.stage_mean(STAGE_QUERY_TOKEN).unwrap_or(0.0);
    let tv = cell.stage_mean(STAGE_TOKEN_VALIDATION).unwrap_or(0.0);
    let av = cell.stage_mean(STAGE_ACCESS_VERIFICATION).unwrap_or(0.0);
    Ok(judge(
        dominates(q, tv) && dominates(q, av) && cell.trials == TRIALS as usize,
        format!(
            "{} trials: query_token {:.3} ms vs token_validation {:.3} ms vs access_verification {:.3} ms (needs >= 5x); published {} / {} / {} ms",
            cell.trials,
            q / 1000.0,
            tv / 1000.0,
            av / 1000.0,
            reference::QUERY_TOKEN_MS_EDGE,
            reference::TOKEN_VALIDATION_MS_EDGE,
            reference::ACCESS_VERIFICATION_MS_EDGE
        ),
    ))
}

fn criterion_8(records: &[TrialRecord]) -> Result<Verdict> {
    let s = aggregate(records)?;
    let cmp = compare_modes(&s)?;
    let required = cmp.checks.iter().filter(|c| c.name.starts_with("ac_on_above_off")).all(|c| c.passed);
    let micro = cmp.check("micro_above_mono").context("missing check")?;
    let mean = |m, ac| s.cell(m, ac).map(|c| c.total.mean / 1000.0).unwrap_or(f64::NAN);
    let detail = format!(
        "mono on {:.2} / off {:.2} ms, micro on {:.2} / off {:.2} ms; micro-mono {:+.2} ms ({}); published fog mono {} / {}, micro {} / {}",
        mean(Mode::Mono, true),
        mean(Mode::Mono, false),
        mean(Mode::Micro, true),
        mean(Mode::Micro, false),
        mean(Mode::Micro, true) - mean(Mode::Mono, true),
        if micro.passed { "micro above mono" } else { "inverted, warn only" },
        reference::MONO_FOG_AC_ON_MS,
        reference::MONO_FOG_AC_OFF_MS,
        reference::MICRO_FOG_AC_ON_MS,
        reference::MICRO_FOG_AC_OFF_MS
    );
    Ok(Verdict {
        status: match (required, micro.passed) {
            (false, _) => Status::Fail,
            (true, true) => Status::Pass,
            (true, false) => Status::Warn,
        },
        detail,
    })
}

async fn criterion_2(w: &Workload) -> Result<Verdict> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(2);
    let (mut controls_ok, mut detected, mut via_query) = (0, 0, 0);
    for r in &w.records {
        let key = frame_key(&r.frame_id);
        let bytes = r.canonical_bytes();
        if w.client.verify(&key, &bytes).await?.matched {
            controls_ok += 1;
        }
        let offset = rng.gen_range(0..bytes.len());
        let xor = rng.gen_range(1..=255u8);
        let mut mutated = bytes.clone();
        mutated[offset] ^= xor;
        if !w.client.verify(&key, &mutated).await?.matched {
            detected += 1;
        }
        w.client.tamper(&r.frame_id, offset, xor).await?;
        let out = w.client.query(&r.frame_id, QUERY_RESOURCE, Action::Get).await?;
        if out.status == 403 && out.reason == "hash_mismatch" {
            via_query += 1;
        }
    }
    let n = w.records.len();
    Ok(judge(
        detected == n && via_query == n && controls_ok == n,
        format!("{detected}/{n} mutations detected ({via_query}/{n} via data query), {controls_ok}/{n} untampered controls matched, 0 false matches: {}", controls_ok == n),
    ))
}

async fn mono_cells(dir: &Path) -> Result<Vec<TrialRecord>> {
    let net = ProcessNetwork::start(&bin(), dir, &spec(4, Mode::Mono, 500)).await?;
    let w = setup_workload(&net.endpoints, Account::generate(), RECORDS, 8).await?;
    let mut rows = scenario(&w, Mode::Mono, true).await?;
    rows.extend(scenario(&w, Mode::Mono, false).await?);
    drop(net);
    Ok(rows)
}

fn main() -> std::process::ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(8)
        .enable_all()
        .build()
        .expect("runtime");
    let root = tempfile::tempdir().expect("tempdir");
    let mut report = Report { lines: BTreeMap::new() };
    let limit = Duration::from_secs(300);

    let only: Option<BTreeSet<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));

    if wanted(9) {
        report.record(9, "merkle/crypto micro-suite", criterion_9());
    }
    rt.block_on(async {
        if wanted(3) {
            report.record(3, "access-control truth table", within(limit, criterion_3(&root.path().join("c3"))).await);
        }
        if wanted(6) {
            report.record(6, "fork convergence", within(limit, criterion_6(&root.path().join("c6"))).await);
        }
        if wanted(4) {
            report.record(4, "revocation completeness", within(limit, criterion_4(&root.path().join("c4"))).await);
        }
        if ![1, 2, 5, 7, 8].iter().any(|&i| wanted(i)) {
            return;
        }

        let c1 = within(limit, criterion_1(&root.path().join("c1"))).await;
        let run = match c1 {
            Ok((v, run)) => {
                report.record(1, "end-to-end happy path", Ok(v));
                Some(run)
            }
            Err(e) => {
                report.record(1, "end-to-end happy path", Err(e));
                None
            }
        };
        let Some(run) = run else {
            for (id, name) in [(5, "determinism"), (7, "stage-breakdown ordering"), (8, "mode comparison"), (2, "tamper evidence")] {
                report.record(id, name, Err(anyhow!("skipped: criterion 1 network unavailable")));
            }
            return;
        };
        report.record(5, "determinism", within(limit, criterion_5(&run, root.path())).await);
        let micro_on = within(limit, scenario(&run.workload, Mode::Micro, true)).await;
        let micro_off = within(limit, scenario(&run.workload, Mode::Micro, false)).await;
        match &micro_on {
            Ok(rows) => report.record(7, "stage-breakdown ordering", criterion_7(rows)),
            Err(e) => report.record(7, "stage-breakdown ordering", Err(anyhow!("{e:#}"))),
        }
        report.record(2, "tamper evidence", within(limit, criterion_2(&run.workload)).await);
        drop(run);
        let c8 = async {
            let mut rows = micro_on.map_err(|e| anyhow!("micro ac-on: {e:#}"))?;
            rows.extend(micro_off.map_err(|e| anyhow!("micro ac-off: {e:#}"))?);
            rows.extend(mono_cells(&root.path().join("c8-mono")).await?);
            criterion_8(&rows)
        };
        report.record(8, "mode comparison", within(limit, c8).await);
    });

    println!("acceptance summary:");
    let mut failed = 0;
    for (id, (name, v)) in &report.lines {
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Warn => "WARN",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
        };
        println!("  {id}. {tag} {name}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        return std::process::ExitCode::FAILURE;
    }
    std::process::ExitCode::SUCCESS
}

