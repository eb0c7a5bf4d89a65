use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulshadow_core::airtime::{resolve_reception, AllocationId, CaptureConfig, Transmission};
use ulshadow_core::attacker::{check_deadline, compute_latency, CostPreset, Pipeline};
use ulshadow_core::codecs::*;
use ulshadow_core::EntityId;

fn registration_request() -> NasMessage {
    let key = HomeNetworkKey::new(1, [7; 16]);
    let suci = conceal_supi(Supi(1010000001000), &key, &mut ChaCha8Rng::seed_from_u64(1));
    NasMessage::RegistrationRequest { identity: MobileIdentity::Suci(suci), capabilities: SecurityCapabilities::poisoned() }
}

fn codecs(c: &mut Criterion) {
    let req = registration_request();
    let wrap = RrcWrap::SetupComplete(SetupCompleteTemplate::default());
    let pdu = layer_stack_encode(&req, wrap, 128).unwrap();
    let bytes = encode_mac_pdu(&pdu).unwrap();

    let mut g = c.benchmark_group("codecs");
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.bench_function("layer_stack_encode_128", |b| b.iter(|| layer_stack_encode(black_box(&req), wrap, 128)));
    g.bench_function("encode_mac_pdu_128", |b| b.iter(|| encode_mac_pdu(black_box(&pdu))));
    g.bench_function("decode_uplink_128", |b| b.iter(|| decode_uplink(black_box(&bytes))));
    g.finish();

    let key = HomeNetworkKey::new(1, [7; 16]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let suci = conceal_supi(Supi(1010000001000), &key, &mut rng);
    c.bench_function("conceal_supi", |b| b.iter(|| conceal_supi(black_box(Supi(1010000001000)), &key, &mut rng)));
    c.bench_function("deconceal_suci", |b| b.iter(|| deconceal_suci(black_box(&suci), &key)));
}

fn attacker_budget(c: &mut Criterion) {
    let cost = CostPreset::low_latency().mean;
    let p = Pipeline::ue_grant();
    c.bench_function("compute_latency", |b| b.iter(|| compute_latency(black_box(&cost), black_box(&p))));
    c.bench_function("check_deadline", |b| b.iter(|| check_deadline(black_box(&cost), &p, 0, 500_000)));

    let tx = |sender, power| Transmission {
        allocation_id: AllocationId(1),
        sender,
        payload: vec![0; 16],
        tx_power_dbm: power,
        timing_advance_us: 1.0,
        sender_distance_us: 0.5,
    };
    let txs = vec![tx(EntityId::Ue(0), 23.0), tx(EntityId::Attacker, 29.0)];
    let cfg = CaptureConfig::default();
    c.bench_function("resolve_reception_2", |b| b.iter(|| resolve_reception(black_box(&txs), &cfg)));
}

criterion_group!(benches, codecs, attacker_budget);
criterion_main!(benches);
