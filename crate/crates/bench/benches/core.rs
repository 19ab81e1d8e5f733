use blendmas_bench::{account, block_with, deploy_batch};
use blendmas_core::bench::{aggregate, trial_rows, Mode};
use blendmas_core::codec::{Decode, Encode};
use blendmas_core::ledger::{apply_block, Block, WorldState};
use blendmas_core::merkle::merkle_root;
use blendmas_core::security::{canonical_json, StageTimings};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn merkle(c: &mut Criterion) {
    let mut g = c.benchmark_group("merkle_root");
    for n in [1usize, 16, 256, 4096] {
        let leaves: Vec<Vec<u8>> = (0..n).map(|i| (i as u64).to_be_bytes().repeat(16)).collect();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &leaves, |b, l| b.iter(|| merkle_root(black_box(l))));
    }
    g.finish();
}

fn signatures(c: &mut Criterion) {
    let acct = account(1);
    let msg = vec![0xabu8; 256];
    let sig = acct.sign(&msg);
    let pk = acct.public_key();
    c.bench_function("ed25519_sign_256b", |b| b.iter(|| acct.sign(black_box(&msg))));
    c.bench_function("ed25519_verify_256b", |b| b.iter(|| pk.verify(black_box(&msg), black_box(&sig))));
}

fn encoding(c: &mut Criterion) {
    let block = block_with(deploy_batch(32));
    let bytes = block.to_canonical_bytes();
    c.bench_function("block_encode_32tx", |b| b.iter(|| black_box(&block).to_canonical_bytes()));
    c.bench_function("block_decode_32tx", |b| b.iter(|| Block::from_canonical_bytes(black_box(&bytes)).unwrap()));
    let value: serde_json::Value = serde_json::from_str(
        r#"{"frame_id":"f-1","producer":"00","objects":[{"label":"car","score":0.9,"bbox":[1,2,3,4]}],"ts":1}"#,
    )
    .unwrap();
    c.bench_function("canonical_json_record", |b| b.iter(|| canonical_json(black_box(&value))));
}

fn apply(c: &mut Criterion) {
    let mut g = c.benchmark_group("apply_block");
    for n in [0usize, 8, 64] {
        let block = block_with(deploy_batch(n));
        g.bench_with_input(BenchmarkId::from_parameter(n), &block, |b, blk| {
            b.iter(|| apply_block(&WorldState::default(), black_box(blk)).unwrap())
        });
    }
    g.finish();
}

fn summary(c: &mut Criterion) {
    let mut rows = Vec::new();
    for trial in 0..50u32 {
        let mut t = StageTimings::default();
        t.record("query_token", 40_000 + trial as u64);
        t.record("token_validation", 100);
        t.record("access_verification", 500);
        rows.extend(trial_rows(trial, Mode::Micro, true, &t.0, t.total()));
    }
    c.bench_function("aggregate_50_trials", |b| b.iter(|| aggregate(black_box(&rows)).unwrap()));
}

criterion_group!(benches, merkle, signatures, encoding, apply, summary);
criterion_main!(benches);
