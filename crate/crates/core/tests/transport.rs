mod common;

use common::random_instance;
use lawful_core::chaining::{run_protocol, ChainConfig, ChainRun, Protocol, Warrant};
use lawful_core::crypto::ParamSet;
use lawful_core::deploy::Deployment;
use lawful_core::intersection::{run_intersection_net, EncryptedSet, IntersectWarrant};
use lawful_core::transport::TransportKind;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn chain(dep: &Deployment, seed: u64, protocol: Protocol, transport: TransportKind, workers: usize) -> ChainRun {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut inst = random_instance(&mut rng, 400, 3.0, 4, 3);
    inst.k = 3;
    let parts = inst.partitions();
    let w = Warrant::for_deployment(dep, &parts, inst.x, inst.k, inst.d);
    let cfg = ChainConfig { protocol, transport, workers, seed, anon_capacity: 32, ..ChainConfig::default() };
    run_protocol(dep, &parts, &w, &cfg).unwrap()
}

#[test]
fn chaining_is_bit_identical_across_transports_and_workers() {
    let dep = Deployment::generate(ParamSet::Test512, 3, 4, 6).unwrap();
    for seed in 0..3 {
        for protocol in [Protocol::Revealing, Protocol::Hiding] {
            let base = chain(&dep, seed, protocol, TransportKind::InProc, 1);
            assert!(!base.output.is_empty());
            for (t, w) in [(TransportKind::Tcp, 1), (TransportKind::InProc, 8), (TransportKind::Tcp, 8)] {
                let other = chain(&dep, seed, protocol, t, w);
                assert_eq!(base.output, other.output, "{protocol} {t} {w}");
                assert_eq!(base.logs, other.logs, "{protocol} {t} {w}");
            }
        }
    }
}

#[test]
fn intersection_is_identical_across_transports_and_workers() {
    let dep = Deployment::generate(ParamSet::Test512, 3, 4, 6).unwrap();
    let y = dep.combined_key();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let ids: [Vec<u64>; 3] = [(1..80).collect(), (40..120).collect(), (70..90).collect()];
    let sets: Vec<EncryptedSet> = ids
        .iter()
        .enumerate()
        .map(|(i, s)| EncryptedSet {
            label: format!("s{i}"),
            ciphertexts: s.iter().map(|&id| y.encrypt_id(id, &mut rng).unwrap()).collect(),
        })
        .collect();
    let w = IntersectWarrant::new(vec!["s0".into(), "s1".into(), "s2".into()], 10, dep.agency_names()).unwrap();
    let mut outcomes = Vec::new();
    for (t, workers) in [(TransportKind::InProc, 1), (TransportKind::Tcp, 1), (TransportKind::InProc, 8), (TransportKind::Tcp, 8)] {
        let mut keys = dep.intersection_keys(9);
        let out = run_intersection_net(&dep.params, &w, sets.clone(), &mut keys, workers, t).unwrap();
        outcomes.push((out.revealed, out.tags));
    }
    assert_eq!(outcomes[0].0, Some((70..80).collect()));
    assert!(outcomes.windows(2).all(|p| p[0] == p[1]));
}
