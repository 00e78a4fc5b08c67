//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{bfs_oracle, path_oracle, random_instance, sorted_logs, within, Instance};
use lawful_core::bench::{linear_fit, GraphSource, DEFAULT_WEIGHTS};
use lawful_core::chaining::{
    audit, decrypted_map, run_protocol, run_zero_crypto, ChainConfig, ChainError, Fault, Protocol, Warrant,
};
use lawful_core::crypto::{
    AgencyCiphertext, AgencyId, CombinedAgencyKey, DeterministicTag, ElGamalKeyPair, ParamSet,
    PhKey, TelecomId,
};
use lawful_core::deploy::Deployment;
use lawful_core::graph::{partition, CommGraph, GraphPartition, LoadedGraph};
use lawful_core::intersection::{
    reveal_with, run_intersection, run_intersection_net, EncryptedSet, IntersectWarrant, Transcript,
};
use lawful_core::party::PartyId;
use lawful_core::transport::TransportKind;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::Integer;

type Outcome = Result<String, String>;

/// Tallies shared between criteria whose audits ride on other suites.
#[derive(Default)]
struct AuditTally {
    intersection_transcripts: usize,
    unwrap_violations: usize,
    hidden_transcripts: usize,
    hidden_violations: usize,
    permutation_checks: usize,
    permutation_violations: usize,
    logged_ids: usize,
    overreach: usize,
    fault_runs: usize,
    fault_violations: usize,
}

fn criterion(name: &str, failures: &mut usize, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let took = start.elapsed().as_secs_f64();
    match res {
        Ok(detail) => println!("PASS {name}: {detail} [{took:.1} s]"),
        Err(detail) => {
            *failures += 1;
            println!("FAIL {name}: {detail} [{took:.1} s]");
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Commutativity over toy-23, against u64 arithmetic.

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    r
}

fn commutativity() -> Outcome {
    const P: u64 = 23;
    const Q: u64 = 11;
    let params = ParamSet::Toy23.params();
    let encode = |m: u64| if pow_mod(m, Q, P) == 1 { m } else { P - m };
    let sk_grid = [1u64, 3, 7, 10];
    let z_grid = [1u64, 2, 6, 10];
    let mut orders = Vec::new();
    let mut ops = [0usize, 1, 2, 3];
    permutations(&mut ops, 0, &mut orders);

    let start = Instant::now();
    let (mut checked, mut failures) = (0u64, 0u64);
    for &s0 in &sk_grid {
        for &s1 in &sk_grid {
            let eg = [s0, s1].map(|s| ElGamalKeyPair::from_secret(params.clone(), AgencyId(0), Integer::from(s)).unwrap());
            let eg = [eg[0].clone_for(AgencyId(0)), eg[1].clone_for(AgencyId(1))];
            let key = CombinedAgencyKey::from_keypairs(&eg).unwrap();
            for &z0 in &z_grid {
                for &z1 in &z_grid {
                    let ph = [
                        PhKey::from_exponent(params.clone(), AgencyId(0), Integer::from(z0)).unwrap(),
                        PhKey::from_exponent(params.clone(), AgencyId(1), Integer::from(z1)).unwrap(),
                    ];
                    for m in 1..=10u64 {
                        let want = pow_mod(encode(m), z0 * z1 % Q, P);
                        let pt = params.encode_id(m).unwrap();
                        for r in 1..=10u64 {
                            let ct = key.encrypt_with(&pt, &Integer::from(r));
                            for order in &orders {
                                let mut c: AgencyCiphertext = ct.clone();
                                for &op in order {
                                    c = if op < 2 { eg[op].strip_layer(&c) } else { ph[op - 2].apply(&c) }.unwrap();
                                }
                                let tag = DeterministicTag::from_converted(&c, 2).unwrap();
                                checked += 1;
                                if tag.value.as_integer().to_u64() != Some(want) {
                                    failures += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let took = start.elapsed();
    check(failures == 0, || format!("{failures} of {checked} interleavings gave the wrong tag"))?;
    check(took < Duration::from_secs(10), || format!("took {took:?}, limit 10 s"))?;
    Ok(format!("{checked} interleavings (m, r in 1..=10, 4x4 key grids, 24 orders), 0 failures in {:.2} s", took.as_secs_f64()))
}

fn permutations(ops: &mut [usize; 4], i: usize, out: &mut Vec<[usize; 4]>) {
    if i == ops.len() {
        out.push(*ops);
        return;
    }
    for j in i..ops.len() {
        ops.swap(i, j);
        permutations(ops, i + 1, out);
        ops.swap(i, j);
    }
}

trait CloneFor {
    fn clone_for(&self, id: AgencyId) -> ElGamalKeyPair;
}

impl CloneFor for ElGamalKeyPair {
    fn clone_for(&self, id: AgencyId) -> ElGamalKeyPair {
        ElGamalKeyPair::from_secret(self.params().clone(), id, self.secret().clone()).unwrap()
    }
}

// ---------------------------------------------------------------------------
// Intersection.

fn encrypt_sets(dep: &Deployment, sets: &[Vec<u64>], rng: &mut ChaCha20Rng) -> Vec<EncryptedSet> {
    let y = dep.combined_key();
    sets.iter()
        .enumerate()
        .map(|(i, s)| EncryptedSet {
            label: format!("s{i}"),
            ciphertexts: s.iter().map(|&id| y.encrypt_id(id, rng).unwrap()).collect(),
        })
        .collect()
}

fn plain_intersection(sets: &[Vec<u64>]) -> Vec<u64> {
    let mut it = sets.iter().map(|s| s.iter().copied().collect::<BTreeSet<u64>>());
    let first = it.next().unwrap_or_default();
    it.fold(first, |acc, s| &acc & &s).into_iter().collect()
}

/// Random sets with a planted common core of `common` identifiers.
fn planted_sets(rng: &mut ChaCha20Rng, n_sets: usize, max_len: usize, common: usize, universe: u64) -> Vec<Vec<u64>> {
    let core: Vec<u64> = (0..common).map(|_| rng.random_range(1..=universe)).collect();
    (0..n_sets)
        .map(|_| {
            let len = rng.random_range(common..=max_len.max(common));
            let mut s = core.clone();
            s.extend((common..len).map(|_| rng.random_range(1..=universe)));
            s.shuffle(rng);
            s
        })
        .collect()
}

fn intersection_oracle(tally: &mut AuditTally) -> Outcome {
    let dep = Deployment::generate(ParamSet::Test512, 3, 4, 21).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let (mut reveals, mut aborts, mut mismatches) = (0, 0, Vec::new());
    for trial in 0..1000u64 {
        let n_sets = rng.random_range(2..=3);
        let common = rng.random_range(0..=4);
        // Small universes make accidental overlaps and duplicates likely too.
        let universe = if trial % 4 == 0 { 300 } else { 1 << 40 };
        let sets = planted_sets(&mut rng, n_sets, 200, common, universe);
        let expected = plain_intersection(&sets);
        let abort_path = !expected.is_empty() && trial % 5 == 0;
        let max_reveal = if abort_path { expected.len() - 1 } else { expected.len() + rng.random_range(0..3) };
        let labels = (0..n_sets).map(|i| format!("s{i}")).collect();
        let w = IntersectWarrant::new(labels, max_reveal, dep.agency_names()).unwrap();
        let mut keys = dep.intersection_keys(trial);
        let cts = encrypt_sets(&dep, &sets, &mut rng);
        let out = run_intersection(&dep.params, &w, cts, &mut keys, 2).map_err(|e| format!("trial {trial}: {e}"))?;
        tally.intersection_transcripts += 1;
        if !out.transcript.unwraps_within(&dep.params, &out.tags) {
            tally.unwrap_violations += 1;
        }
        if abort_path {
            aborts += 1;
            let later = reveal_with(&dep.params, &out.tags, &keys, &mut Transcript::default());
            if out.revealed.is_some() || later.is_ok() {
                mismatches.push(format!("trial {trial}: abort path revealed"));
            }
        } else {
            reveals += 1;
            if out.revealed.as_ref() != Some(&expected) {
                mismatches.push(format!("trial {trial}: got {:?}, want {expected:?}", out.revealed));
            }
        }
    }
    check(mismatches.is_empty(), || format!("{} mismatches, first: {}", mismatches.len(), mismatches[0]))?;
    Ok(format!("1000 trials ({reveals} reveal, {aborts} abort with later reveal refused), 100% match"))
}

fn hcb_run(dep: &Deployment, per_set: usize, seed: u64) -> Result<(Duration, Duration, usize), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let planted = rng.random_range(1..=1u64 << 40);
    let sets: Vec<Vec<u64>> = (0..3)
        .map(|_| {
            let mut s: Vec<u64> = (1..per_set).map(|_| rng.random_range(1..=1u64 << 40)).collect();
            s.insert(rng.random_range(0..per_set), planted);
            s
        })
        .collect();
    let expected = plain_intersection(&sets);
    let start = Instant::now();
    let cts = encrypt_sets(dep, &sets, &mut rng);
    let total: usize = cts.iter().map(|s| s.ciphertexts.len()).sum();
    let w = IntersectWarrant::new(vec!["s0".into(), "s1".into(), "s2".into()], 1, dep.agency_names()).unwrap();
    let mut keys = dep.intersection_keys(seed);
    let out = run_intersection_net(&dep.params, &w, cts, &mut keys, 8, TransportKind::InProc).map_err(|e| e.to_string())?;
    let end_to_end = start.elapsed();
    check(expected == vec![planted], || format!("oracle intersection {expected:?}"))?;
    check(out.revealed == Some(vec![planted]), || format!("revealed {:?}, planted {planted}", out.revealed))?;
    Ok((end_to_end, out.wall_time, total))
}

fn high_country_bandits() -> Outcome {
    let dep = Deployment::generate(ParamSet::Prod2048, 3, 4, 31).unwrap();
    let (small, _, small_n) = hcb_run(&dep, 5_000, 7)?;
    check(small <= Duration::from_secs(180), || format!("{small_n}-ciphertext run took {small:?}, limit 3 min"))?;
    let (full, full_proto, full_n) = hcb_run(&dep, 50_000, 8)?;
    check(full <= Duration::from_secs(30 * 60), || format!("{full_n}-ciphertext run took {full:?}, limit 30 min"))?;
    Ok(format!(
        "{full_n} ciphertexts: planted id revealed, {:.1} min end to end ({:.1} min protocol; 1-core host), \
         {small_n} ciphertexts: {:.1} s (limit 180 s)",
        full.as_secs_f64() / 60.0,
        full_proto.as_secs_f64() / 60.0,
        small.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// Chaining.

/// Random relabeling of telecoms that keeps `fixed` in place.
fn permutation_fixing(rng: &mut ChaCha20Rng, telecoms: usize, fixed: u8) -> Vec<u8> {
    let mut rest: Vec<u8> = (0..telecoms as u8).filter(|&t| t != fixed).collect();
    rest.shuffle(rng);
    let mut it = rest.into_iter();
    (0..telecoms as u8).map(|t| if t == fixed { t } else { it.next().unwrap() }).collect()
}

fn agency_skeletons(run: &lawful_core::chaining::ChainRun, agencies: usize) -> Vec<Vec<audit::SkeletonItem>> {
    let tap = run.transcript.as_ref().expect("recording on");
    (0..agencies as u8).map(|a| audit::skeleton(&tap.received_by(PartyId::Agency(a)))).collect()
}

fn chaining_oracle(tally: &mut AuditTally) -> Outcome {
    let deps: Vec<Deployment> = (1..=4).map(|t| Deployment::generate(ParamSet::Test512, 3, t, 40 + t as u64).unwrap()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let (mut tiny, mut with_cap_hits, mut outputs) = (0, 0, 0usize);
    for i in 0..500u64 {
        let telecoms = rng.random_range(1..=4);
        let dep = &deps[telecoms - 1];
        let small = i % 5 < 2;
        let n = if small { rng.random_range(2..=50) } else { rng.random_range(51..=5000) };
        let avg = rng.random_range(1.5..4.0);
        let inst = random_instance(&mut rng, n, avg, telecoms, 3);
        let adj = inst.adjacency();
        let expected = bfs_oracle(&adj, inst.x, inst.k, inst.d);
        if small {
            tiny += 1;
            let paths = path_oracle(&inst.edges, inst.x, inst.k, inst.d);
            check(paths == expected, || format!("instance {i}: BFS and path oracles disagree"))?;
        }
        if expected != within(&adj, inst.x, inst.k) {
            with_cap_hits += 1;
        }
        outputs += expected.len();
        let parts = inst.partitions();
        let w = Warrant::for_deployment(dep, &parts, inst.x, inst.k, inst.d);
        let cfg = ChainConfig { workers: 2, seed: i, anon_capacity: 64, ..ChainConfig::default() };
        let zero = run_zero_crypto(&parts, &w, &cfg).map_err(|e| format!("instance {i}: {e}"))?;
        check(zero.vertices == expected, || format!("instance {i}: zero-crypto differs from oracle"))?;

        let reach = within(&adj, inst.x, inst.k);
        for protocol in [Protocol::Revealing, Protocol::Hiding] {
            let record = protocol == Protocol::Hiding;
            let run = run_protocol(dep, &parts, &w, &ChainConfig { protocol, record, ..cfg.clone() })
                .map_err(|e| format!("instance {i} {protocol}: {e}"))?;
            let got = decrypted_map(&run, dep).map_err(|e| e.to_string())?;
            check(got == zero.vertices, || format!("instance {i} {protocol}: output differs from zero-crypto"))?;
            audit::logs_match_output(&run.logs, parts[0].serving(), TelecomId(0), &got)
                .map_err(|e| format!("instance {i} {protocol}: {e}"))?;
            check(sorted_logs(&run.logs) == sorted_logs(&zero.logs), || format!("instance {i}: logs differ"))?;
            for log in &run.logs {
                for (id, _) in &log.entries {
                    tally.logged_ids += 1;
                    if !reach.contains_key(id) {
                        tally.overreach += 1;
                    }
                }
            }
            if record {
                let tap = run.transcript.as_ref().unwrap();
                for a in 0..3 {
                    tally.hidden_transcripts += 1;
                    if audit::check_ownership_hidden(&dep.params, &tap.received_by(PartyId::Agency(a))).is_err() {
                        tally.hidden_violations += 1;
                    }
                }
                if i % 10 == 0 && telecoms > 1 {
                    permutation_audit(dep, &inst, &w, &cfg, &run, &mut rng, tally)?;
                }
            }
            if i % 10 == 5 {
                fault_audit(dep, &parts, &w, &cfg, protocol, run.metrics.rounds, &mut rng, tally);
            }
        }
    }
    Ok(format!(
        "500 instances ({tiny} with n <= 50 checked by path enumeration, {with_cap_hits} where the degree cap bites, \
         {outputs} output vertices): protocol 1 and 2 match zero-crypto and the oracles, 100%"
    ))
}

fn permutation_audit(
    dep: &Deployment,
    inst: &Instance,
    w: &Warrant,
    cfg: &ChainConfig,
    run: &lawful_core::chaining::ChainRun,
    rng: &mut ChaCha20Rng,
    tally: &mut AuditTally,
) -> Result<(), String> {
    let serving = inst.partitions()[0].serving().clone();
    let fixed = serving.owner_of(inst.x).unwrap_or(TelecomId(0)).0;
    let perm = permutation_fixing(rng, inst.telecoms, fixed);
    let g = CommGraph::from_edges(inst.owners.keys().copied(), inst.edges.iter().copied());
    let parts: Vec<GraphPartition> = partition(&g, Arc::new(serving.permuted(&perm))).unwrap();
    let w2 = Warrant::for_deployment(dep, &parts, w.x, w.k, w.d);
    let other = run_protocol(dep, &parts, &w2, &ChainConfig { protocol: Protocol::Hiding, record: true, ..cfg.clone() })
        .map_err(|e| e.to_string())?;
    tally.permutation_checks += 1;
    if agency_skeletons(run, 3) != agency_skeletons(&other, 3) {
        tally.permutation_violations += 1;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fault_audit(
    dep: &Deployment,
    parts: &[GraphPartition],
    w: &Warrant,
    cfg: &ChainConfig,
    protocol: Protocol,
    rounds: u32,
    rng: &mut ChaCha20Rng,
    tally: &mut AuditTally,
) {
    let round = rng.random_range(0..rounds.max(1));
    let agency = rng.random_range(0..3u8);
    let fault = Some(Fault::DropSignature { round, agency });
    tally.fault_runs += 1;
    match run_protocol(dep, parts, w, &ChainConfig { protocol, fault, ..cfg.clone() }) {
        Err(f) if matches!(f.error, ChainError::UnsignedMessageRejected) => {
            if f.logs.iter().any(|l| l.entries.iter().any(|&(_, r)| r >= round)) {
                tally.fault_violations += 1;
            }
        }
        _ => tally.fault_violations += 1,
    }
}

struct Big {
    dep: Deployment,
    graph: LoadedGraph,
    x: u64,
    skipped: usize,
    p1: Option<(usize, Duration, Duration)>,
}

fn big_instance() -> Result<Big, String> {
    let dep = Deployment::generate(ParamSet::Prod2048, 3, 4, 5).unwrap();
    let source = GraphSource::Synthetic { n: 300_000, avg_degree: 30.0 };
    let graph = source.load(&DEFAULT_WEIGHTS, &dep.telecom_names(), 1).map_err(|e| e.to_string())?;
    let cfg = ChainConfig { workers: 8, ..ChainConfig::default() };
    for x in 1..=200u64 {
        let w = Warrant::for_deployment(&dep, &graph.partitions, x, 3, 100);
        let out = run_zero_crypto(&graph.partitions, &w, &cfg).map_err(|e| e.to_string())?;
        if (25_000..=30_000).contains(&out.vertices.len()) {
            return Ok(Big { dep, graph, x, skipped: (x - 1) as usize, p1: None });
        }
    }
    Err("no target in 1..=200 yields 25,000-30,000 vertices".into())
}

fn chain_27k(big: &mut Big) -> Outcome {
    let parts = &big.graph.partitions;
    let w = Warrant::for_deployment(&big.dep, parts, big.x, 3, 100);
    let mut lines = Vec::new();
    for protocol in [Protocol::Revealing, Protocol::Hiding] {
        let cfg = ChainConfig { protocol, workers: 8, seed: 3, ..ChainConfig::default() };
        let run = run_protocol(&big.dep, parts, &w, &cfg).map_err(|e| e.to_string())?;
        let n = run.output.len();
        let wall = run.metrics.wall_time;
        let rate = n as f64 / wall.as_secs_f64();
        check((25_000..=30_000).contains(&n), || format!("{protocol}: {n} ciphertexts"))?;
        check(wall <= Duration::from_secs(360), || format!("{protocol}: {wall:?}, limit 6 min"))?;
        check(rate >= 50.0, || format!("{protocol}: {rate:.1} ciphertexts/s, need 50"))?;
        if protocol == Protocol::Revealing {
            big.p1 = Some((n, wall, run.metrics.telecom_cpu()));
        }
        lines.push(format!(
            "{protocol}: {n} ciphertexts in {:.1} s ({rate:.0}/s, telecom cpu {:.1} s, agency cpu {:.1} s)",
            wall.as_secs_f64(),
            run.metrics.telecom_cpu().as_secs_f64(),
            run.metrics.agency_cpu().as_secs_f64()
        ));
    }
    Ok(format!("x={} k=3 d=100 on ER n=300000 deg 30, prod-2048, 4 telecoms x 8 workers; {}", big.x, lines.join("; ")))
}

fn zero_crypto_separation(big: &Big) -> Outcome {
    let (n, _, crypto_cpu) = big.p1.ok_or("27k crypto run did not complete")?;
    let w = Warrant::for_deployment(&big.dep, &big.graph.partitions, big.x, 3, 100);
    let cfg = ChainConfig { workers: 8, seed: 3, ..ChainConfig::default() };
    let zero = run_zero_crypto(&big.graph.partitions, &w, &cfg).map_err(|e| e.to_string())?;
    check(zero.vertices.len() == n, || format!("zero-crypto found {} vertices, crypto {n}", zero.vertices.len()))?;
    let zero_cpu = zero.metrics.telecom_cpu();
    let ratio = zero_cpu.as_secs_f64() / crypto_cpu.as_secs_f64();
    check(ratio <= 0.10, || format!("zero-crypto telecom cpu is {:.1}% of crypto", ratio * 100.0))?;
    Ok(format!(
        "telecom cpu {:.3} s vs {:.1} s = {:.2}% (limit 10%)",
        zero_cpu.as_secs_f64(),
        crypto_cpu.as_secs_f64(),
        ratio * 100.0
    ))
}

fn linearity(big: &Big) -> Outcome {
    let parts = &big.graph.partitions;
    let (n27, wall27, _) = big.p1.ok_or("27k crypto run did not complete")?;
    let mut points = vec![(n27 as f64, wall27.as_secs_f64())];
    let xs = [big.x, big.x + 1, big.x + 2];
    let mut grid: Vec<(u64, u8, u32)> = Vec::new();
    for &x in &xs {
        grid.push((x, 1, 100));
        grid.push((x, 2, 30));
        grid.push((x, 2, 100));
    }
    grid.extend([(big.x, 3, 26), (big.x, 3, 28), (big.x, 3, 30), (xs[1], 3, 26), (xs[2], 3, 26)]);
    for (i, &(x, k, d)) in grid.iter().enumerate() {
        let w = Warrant::for_deployment(&big.dep, parts, x, k, d);
        let cfg = ChainConfig { workers: 8, seed: i as u64, ..ChainConfig::default() };
        let run = run_protocol(&big.dep, parts, &w, &cfg).map_err(|e| e.to_string())?;
        points.push((run.output.len() as f64, run.metrics.wall_time.as_secs_f64()));
    }
    let (cts, secs): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let lo = cts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cts.iter().copied().fold(0.0, f64::max);
    check(points.len() >= 15, || format!("only {} runs", points.len()))?;
    check(hi / lo >= 100.0, || format!("output sizes span {lo}..{hi}, under two orders of magnitude"))?;
    let fit = linear_fit(&cts, &secs).ok_or("degenerate fit")?;
    check(fit.r >= 0.95, || format!("r = {:.4}", fit.r))?;
    Ok(format!(
        "{} runs, d > 25, {lo}..{hi} ciphertexts; r = {:.4}, {:.3} ms per ciphertext",
        points.len(),
        fit.r,
        fit.slope * 1e3
    ))
}

fn audits(t: &AuditTally) -> Outcome {
    let lines = [
        ("(a) intersection unwraps outside the intersection", t.intersection_transcripts, t.unwrap_violations),
        ("(b) protocol-2 agency transcripts exposing a telecom", t.hidden_transcripts, t.hidden_violations),
        ("(b) sender-permutation skeleton changes", t.permutation_checks, t.permutation_violations),
        ("(c) telecom-decrypted ids beyond k hops", t.logged_ids, t.overreach),
        ("(d) missing-signature runs not rejected cleanly", t.fault_runs, t.fault_violations),
    ];
    let bad: Vec<String> = lines.iter().filter(|l| l.2 > 0).map(|(n, c, v)| format!("{n}: {v}/{c}")).collect();
    check(lines.iter().all(|l| l.1 > 0), || "an audit had no samples".into())?;
    check(bad.is_empty(), || bad.join("; "))?;
    Ok(lines.iter().map(|(n, c, v)| format!("{n}: {v}/{c}")).collect::<Vec<_>>().join("; "))
}

fn transport_transparency() -> Outcome {
    let dep = Deployment::generate(ParamSet::Test512, 3, 4, 90).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(91);
    let variants = [(TransportKind::InProc, 1), (TransportKind::Tcp, 1), (TransportKind::InProc, 8), (TransportKind::Tcp, 8)];
    let mut compared = 0;
    for i in 0..6u64 {
        let mut inst = random_instance(&mut rng, 1500, 3.0, 4, 3);
        inst.k = rng.random_range(2..=3);
        let parts = inst.partitions();
        let w = Warrant::for_deployment(&dep, &parts, inst.x, inst.k, inst.d);
        for protocol in [Protocol::Revealing, Protocol::Hiding] {
            let mut seen = None;
            for (transport, workers) in variants {
                let cfg = ChainConfig { protocol, transport, workers, seed: i, anon_capacity: 64, ..ChainConfig::default() };
                let run = run_protocol(&dep, &parts, &w, &cfg).map_err(|e| e.to_string())?;
                let key = (run.output, run.logs);
                match &seen {
                    None => seen = Some(key),
                    Some(first) => {
                        check(*first == key, || format!("instance {i} {protocol} {transport} x{workers}: C or L_T differs"))?
                    }
                }
                compared += 1;
            }
        }
    }
    for i in 0..4u64 {
        let sets = planted_sets(&mut rng, 3, 120, 3, 1 << 40);
        let expected = plain_intersection(&sets);
        let cts = encrypt_sets(&dep, &sets, &mut rng);
        let w = IntersectWarrant::new(vec!["s0".into(), "s1".into(), "s2".into()], 5, dep.agency_names()).unwrap();
        for (transport, workers) in variants {
            let mut keys = dep.intersection_keys(i);
            let out = run_intersection_net(&dep.params, &w, cts.clone(), &mut keys, workers, transport)
                .map_err(|e| e.to_string())?;
            check(out.revealed.as_ref() == Some(&expected), || format!("intersection {i} {transport} x{workers}"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} seeded runs over inproc/tcp x 1/8 workers: C, L_T and revealed sets bit-identical"))
}

fn main() {
    let mut failures = 0;
    let mut tally = AuditTally::default();
    criterion("crypto commutativity", &mut failures, commutativity);
    criterion("transport transparency", &mut failures, transport_transparency);
    criterion("intersection oracle equivalence", &mut failures, || intersection_oracle(&mut tally));
    criterion("chaining oracle equivalence", &mut failures, || chaining_oracle(&mut tally));
    criterion("privacy structure audits", &mut failures, || audits(&tally));
    match catch_unwind(big_instance) {
        Ok(Ok(mut big)) => {
            println!("# 27k instance: x={} after {} smaller candidates", big.x, big.skipped);
            criterion("27k-ciphertext chaining run", &mut failures, || chain_27k(&mut big));
            criterion("zero-crypto cost separation", &mut failures, || zero_crypto_separation(&big));
            criterion("linearity", &mut failures, || linearity(&big));
        }
        other => {
            let why = match other {
                Ok(Err(e)) => e,
                _ => "panicked while building the instance".into(),
            };
            for name in ["27k-ciphertext chaining run", "zero-crypto cost separation", "linearity"] {
                failures += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    criterion("high-country-bandits-scale intersection", &mut failures, high_country_bandits);
    println!("{} criteria failed", failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
