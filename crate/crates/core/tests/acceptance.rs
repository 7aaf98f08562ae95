//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL` line. Run with
//! `cargo test --test acceptance -- --nocapture --test-threads=1`
//! to see the lines in order.
//!
//! Every simulation run goes through [`run`], which asserts payload and
//! energy conservation, so criterion 11's conservation half is enforced on
//! all acceptance runs.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use iamac::engine::rng_stream;
use iamac::fixtures::{run_fixture, FixtureName};
use iamac::harness::{
    check_trend, run_experiment, sweep, Experiment, Status, SweepSpec, TrendKind,
};
use iamac::metrics::{mean, std_error};
use iamac::network::Protocol;
use iamac::packet::DataPacket;
use iamac::recovery::{
    arq_capacity, arq_transfer, rts_success_prob, seda_capacity, seda_transfer, BerChannel,
    ContentionMode, RecoveryScheme,
};
use iamac::scenario::Scenario;

const SEEDS: [u64; 3] = [1, 2, 3];
const ENERGY_TOLERANCE: f64 = 1e-9;

fn report(n: u32, pass: bool, detail: impl AsRef<str>) -> bool {
    println!(
        "criterion {n}: {} - {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    pass
}

fn assert_conserved(e: &Experiment) {
    if let Some(r) = &e.result {
        assert!(
            r.payload_conserved,
            "payload not conserved: {}",
            e.summary()
        );
        assert!(
            r.energy_conservation_error <= ENERGY_TOLERANCE,
            "energy ledger off by {} in {}",
            r.energy_conservation_error,
            e.summary()
        );
    }
}

/// Runs a scenario that must be connected, checking conservation.
fn run(s: &Scenario) -> Experiment {
    let e = run_experiment(s).expect("valid scenario");
    assert_eq!(e.status, Status::Ok, "{}", e.summary());
    assert_conserved(&e);
    e
}

fn metric(e: &Experiment, name: &str) -> f64 {
    e.metric(name).expect("run produced metrics")
}

fn seeded(base: &Scenario, seed: u64) -> Scenario {
    Scenario {
        seed,
        ..base.clone()
    }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

/// Counts assignments of `n` contenders to `w` slots with no shared slot.
fn distinct_assignments(n: u32, w: u32) -> u64 {
    fn go(left: u32, w: u32, used: &mut Vec<bool>) -> u64 {
        if left == 0 {
            return 1;
        }
        let mut total = 0;
        for s in 0..w as usize {
            if !used[s] {
                used[s] = true;
                total += go(left - 1, w, used);
                used[s] = false;
            }
        }
        total
    }
    go(n, w, &mut vec![false; w as usize])
}

fn choose(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
}

#[test]
fn criterion_01_contention_analytics() {
    let t = Instant::now();
    let mut mismatches = Vec::new();
    for w in 1..=6u32 {
        for n in 1..=w + 1 {
            let total = u64::from(w).pow(n) as f64;
            let distinct = distinct_assignments(n, w) as f64 / total;
            let printed = (choose(u64::from(w), u64::from(n)) * u64::from(n)) as f64 / total;
            let d = rts_success_prob(n, w, ContentionMode::DistinctSlot).unwrap();
            let p = rts_success_prob(n, w, ContentionMode::Printed).unwrap();
            if (d - distinct).abs() > 1e-12 || (p - printed).abs() > 1e-12 {
                mismatches.push(format!(
                    "n={n} w={w}: distinct {d} vs {distinct}, printed {p} vs {printed}"
                ));
            }
        }
    }
    let anchors = [ContentionMode::Printed, ContentionMode::DistinctSlot]
        .iter()
        .all(|&m| {
            rts_success_prob(1, 8, m).unwrap() == 1.0 && rts_success_prob(2, 4, m).unwrap() == 0.75
        });
    let fast = within(t.elapsed(), 1.0);
    let pass = report(
        1,
        mismatches.is_empty() && anchors && fast,
        format!(
            "enumeration mismatches {}, anchors {}, {:?}{}",
            mismatches.len(),
            if anchors { "ok" } else { "wrong" },
            t.elapsed(),
            mismatches
                .first()
                .map(|m| format!("; first: {m}"))
                .unwrap_or_default()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_capacity_analytics() {
    let t = Instant::now();
    let params = Scenario::default().recovery_params();
    let arq = arq_capacity(1.0, 0.0, &params).unwrap();
    let seda = seda_capacity(1.0, 0.0, &params).unwrap();
    let mut ordering = Vec::new();
    for ber in [0.0, 1e-5, 1e-4, 1e-3, 1e-2] {
        let a = arq_capacity(1.0, ber, &params).unwrap() as usize * params.payload_len;
        let s = seda_capacity(1.0, ber, &params).unwrap() as usize * params.payload_len;
        ordering.push((ber, a, s));
    }
    let ordered = ordering.iter().all(|&(_, a, s)| s >= a);
    let pass = report(
        2,
        arq == 35 && seda == 76 && ordered && within(t.elapsed(), 1.0),
        format!("arq {arq} (want 35), seda {seda} (want 76), payload per frame (ber, arq, seda) {ordering:?}"),
    );
    assert!(pass);
}

fn packets(n: usize) -> VecDeque<DataPacket> {
    (0..n as u64)
        .map(|id| DataPacket {
            id,
            origin: 1,
            born_at: 0.0,
            hops: 0,
        })
        .collect()
}

#[test]
fn criterion_03_analytics_match_event_level_transfers() {
    const FRAMES: usize = 500;
    let t = Instant::now();
    let params = Scenario::default().recovery_params();
    let mut lines = Vec::new();
    let mut pass = true;
    for ber in [1e-4, 1e-3] {
        for scheme in [RecoveryScheme::Arq, RecoveryScheme::Seda] {
            let cap = match scheme {
                RecoveryScheme::Arq => arq_capacity(1.0, ber, &params).unwrap(),
                RecoveryScheme::Seda => seda_capacity(1.0, ber, &params).unwrap(),
            };
            let mut ch = BerChannel {
                ber,
                rng: rng_stream(7, &format!("criterion-3-{scheme:?}-{ber}")),
            };
            let backlog = 4 * cap as usize + 8;
            let total: usize = (0..FRAMES)
                .map(|_| {
                    let r = match scheme {
                        RecoveryScheme::Arq => {
                            arq_transfer(packets(backlog), &mut ch, 1.0, &params)
                        }
                        RecoveryScheme::Seda => {
                            seda_transfer(packets(backlog), &mut ch, 1.0, &params)
                        }
                    };
                    r.delivered_payload(params.payload_len)
                })
                .sum();
            let measured = total as f64 / FRAMES as f64;
            let predicted = f64::from(cap) * params.payload_len as f64;
            let rel = measured / predicted - 1.0;
            let ok = rel.abs() <= 0.10;
            pass &= ok;
            lines.push(format!(
                "{scheme:?}@{ber:e} {measured:.1} vs {predicted:.0} B ({:+.1}%{})",
                100.0 * rel,
                if ok { "" } else { " out of 10%" }
            ));
        }
    }
    pass &= within(t.elapsed(), 30.0);
    let pass = report(3, pass, lines.join(", "));
    assert!(pass);
}

fn desk_iamac() -> Scenario {
    Scenario {
        protocol: Protocol::Iamac,
        ..Scenario::desk()
    }
}

#[test]
fn criterion_04_05_interference() {
    let t = Instant::now();
    let base = desk_iamac();

    let mut nonzero_frames = 0usize;
    let mut frames = 0usize;
    for seed in SEEDS {
        let mut s = seeded(&base, seed);
        s.ideal_control = true;
        let e = run(&s);
        let l = &e.result.as_ref().unwrap().ledger;
        frames += l.cs_per_frame.len();
        nonzero_frames += l.cs_per_frame.iter().filter(|&&c| c > 0).count();
    }

    let mut cs_means = Vec::new();
    let mut distances = Vec::new();
    for seed in SEEDS {
        let e = run(&seeded(&base, seed));
        let r = e.result.as_ref().unwrap();
        cs_means.push(r.ledger.mean_cs_sum());
        distances.extend_from_slice(&r.ledger.interferer_distances);
    }
    let per_200 = mean(&cs_means).unwrap() * 200.0 / base.node_count as f64;
    let ok4 = frames > 0 && nonzero_frames == 0 && per_200 <= 5.0 && within(t.elapsed(), 120.0);
    let pass4 = report(
        4,
        ok4,
        format!(
            "ideal control: {nonzero_frames} of {frames} frames with CS > 0; with corruption: mean CS sum {:.3} per \
             {}-node frame = {per_200:.3} per 200-node frame (limit 5)",
            mean(&cs_means).unwrap(),
            base.node_count
        ),
    );

    let diag = (base.area.width.powi(2) + base.area.height.powi(2)).sqrt();
    let region =
        base.link
            .transitional_region(base.output_power, base.packets.data_packet_len(), diag);
    let cut = 0.9 * region.end;
    let far = distances.iter().filter(|&&d| d > cut).count();
    let frac = if distances.is_empty() {
        f64::NAN
    } else {
        far as f64 / distances.len() as f64
    };
    let pass5 = report(
        5,
        !distances.is_empty() && frac >= 0.6,
        format!(
            "{far} of {} interferers beyond {cut:.2} m (0.9 x transitional end {:.2} m): {:.0}% (need 60%)",
            distances.len(),
            region.end,
            100.0 * frac
        ),
    );
    assert!(pass4 && pass5);
}

#[test]
fn criterion_06_fixtures() {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in [FixtureName::Fig2, FixtureName::Fig6] {
        let t = Instant::now();
        let r = run_fixture(name).unwrap();
        let fine = r.pass() && within(t.elapsed(), 1.0);
        ok &= fine;
        parts.push(format!("{name:?} {}", if fine { "ok" } else { "failed" }));
        if !r.pass() {
            println!("{}", r.diff());
        }
        for (check, passed) in &r.checks {
            parts.push(format!("[{}] {check}", if *passed { "ok" } else { "x" }));
        }
    }
    let pass = report(6, ok, parts.join("; "));
    assert!(pass);
}

/// Lifetime runs: default desk load, to first death.
fn lifetime_base(protocol: Protocol, frame: f64) -> Scenario {
    let mut s = Scenario::desk();
    s.protocol = protocol;
    s.frame.frame_duration = frame;
    s.horizon = 20_000.0;
    s.stop_at_first_death = true;
    s
}

fn replicate(base: &Scenario) -> Vec<Experiment> {
    SEEDS.iter().map(|&seed| run(&seeded(base, seed))).collect()
}

fn latencies(runs: &[Experiment]) -> Vec<f64> {
    runs.iter()
        .flat_map(|e| e.result.as_ref().unwrap().ledger.latencies.iter().copied())
        .collect()
}

fn lifetimes(runs: &[Experiment]) -> Vec<f64> {
    runs.iter().map(|e| metric(e, "lifetime")).collect()
}

#[test]
fn criterion_07_lifetime_orderings() {
    let t = Instant::now();
    let iamac = replicate(&lifetime_base(Protocol::Iamac, 1.0));
    let adaptive = replicate(&lifetime_base(Protocol::AdaptiveSmac, 1.0));
    let (li, la) = (lifetimes(&iamac), lifetimes(&adaptive));
    let censored = iamac
        .iter()
        .chain(&adaptive)
        .any(|e| metric(e, "censored") > 0.0);
    let a_ok = !censored && li.iter().zip(&la).all(|(i, a)| i > a);

    let densities = [30usize, 50, 70];
    let density_means: Vec<f64> = densities
        .iter()
        .map(|&n| {
            let mut s = lifetime_base(Protocol::AdaptiveSmac, 1.0);
            s.node_count = n;
            mean(&lifetimes(&replicate(&s))).unwrap()
        })
        .collect();
    let trend = check_trend(&density_means, TrendKind::NonIncreasing, 0.05);

    let i10 = replicate(&lifetime_base(Protocol::Iamac, 10.0));
    let s5 = replicate(&lifetime_base(Protocol::Smac, 5.0));
    let (li10, ls5) = (lifetimes(&i10), lifetimes(&s5));
    let (lat_i10, lat_s5) = (
        mean(&latencies(&i10)).unwrap(),
        mean(&latencies(&s5)).unwrap(),
    );
    let c_life = li10.iter().zip(&ls5).all(|(i, s)| i > s);
    let c_ok = c_life && lat_i10 < lat_s5;

    let pass = report(
        7,
        a_ok && trend.pass && c_ok && within(t.elapsed(), 600.0),
        format!(
            "IAMAC {li:.0?} vs Adaptive S-MAC {la:.0?} s at 1 s frames ({}); Adaptive S-MAC lifetime at {densities:?} \
             nodes {density_means:.0?} ({}); IAMAC(10 s) lifetime {li10:.0?} vs S-MAC(5 s) {ls5:.0?} ({}), mean \
             latency {lat_i10:.1} vs {lat_s5:.1} s ({})",
            if a_ok { "ok" } else { "not ordered" },
            trend.detail,
            if c_life { "ok" } else { "not ordered" },
            if lat_i10 < lat_s5 { "ok" } else { "IAMAC slower" },
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_latency_ordering() {
    let arms = [Protocol::AdaptiveSmac, Protocol::Iamac, Protocol::Smac];
    let stats: Vec<(f64, f64)> = arms
        .iter()
        .map(|&p| {
            let lat = latencies(&replicate(&lifetime_base(p, 1.0)));
            (mean(&lat).unwrap(), std_error(&lat).unwrap())
        })
        .collect();
    let separated = stats.windows(2).all(|w| w[1].0 - w[0].0 > w[0].1 + w[1].1);
    let pass = report(
        8,
        separated,
        format!(
            "mean latency ± s.e.: Adaptive S-MAC {:.2}±{:.2}, IAMAC {:.2}±{:.2}, S-MAC {:.2}±{:.2} s",
            stats[0].0, stats[0].1, stats[1].0, stats[1].1, stats[2].0, stats[2].1
        ),
    );
    assert!(pass);
}

/// Denser field used for the power sweep, connected from −8 dBm up.
fn power_base() -> Scenario {
    let mut s = desk_iamac();
    s.name = "power".into();
    s.node_count = 60;
    s.area.width = 25.0;
    s.area.height = 25.0;
    s
}

#[test]
fn criterion_09_throughput_interior_maximum() {
    let t = Instant::now();
    let spec = SweepSpec::from_toml(
        r#"
        parameter = "output_power"
        values = [-8.0, -6.0, -4.0, -2.0, 0.0]
        seeds = [1, 2, 3]
        [trend]
        metric = "throughput"
        kind = "interior-max"
        "#,
    )
    .unwrap();
    let base = power_base();
    let outcome = sweep(&spec, &base, true).unwrap();
    outcome.experiments.iter().for_each(assert_conserved);
    let connected = outcome.experiments.iter().all(|e| e.status == Status::Ok);
    let means: Vec<f64> = outcome
        .means("throughput", None)
        .into_iter()
        .map(|m| m.unwrap_or(f64::NAN))
        .collect();
    let trend = check_trend(&means, TrendKind::InteriorMax, 0.05);

    let below = -14.0;
    let disjoint = SEEDS.iter().all(|&seed| {
        let s = Scenario {
            output_power: below,
            ..seeded(&base, seed)
        };
        run_experiment(&s).unwrap().status == Status::Disjoint
    });
    let pass = report(
        9,
        connected && trend.pass && disjoint && within(t.elapsed(), 300.0),
        format!(
            "throughput at {:?} dBm = {means:.2?} B/s ({}); {} at {below} dBm",
            spec.values,
            trend.detail,
            if disjoint {
                "disjoint for every seed"
            } else {
                "still connected"
            }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_duty_cycle_and_queues() {
    let t = Instant::now();
    let frames = [1.0, 2.0, 5.0, 10.0];
    let duty: Vec<f64> = frames
        .iter()
        .map(|&fd| {
            let mut s = desk_iamac();
            s.frame.frame_duration = fd;
            let runs = replicate(&s);
            mean(
                &runs
                    .iter()
                    .map(|e| metric(e, "mean_duty_cycle"))
                    .collect::<Vec<_>>(),
            )
            .unwrap()
        })
        .collect();
    let decreasing = duty.windows(2).all(|w| w[1] < w[0]);

    let queue = |recovery| -> Vec<f64> {
        let mut s = desk_iamac();
        s.recovery = recovery;
        s.frame.frame_duration = 100.0;
        s.horizon = 3000.0;
        replicate(&s)
            .iter()
            .map(|e| metric(e, "mean_queue"))
            .collect()
    };
    let (qa, qs) = (queue(RecoveryScheme::Arq), queue(RecoveryScheme::Seda));
    let paired = qa.iter().zip(&qs).all(|(a, s)| s < a);
    let ratio = mean(&qa).unwrap() / mean(&qs).unwrap();
    let ratio_ok = (1.4..=3.0).contains(&ratio);
    let pass = report(
        10,
        decreasing && paired && ratio_ok && within(t.elapsed(), 300.0),
        format!(
            "duty cycle at {frames:?} s frames = {duty:.4?} ({}); mean queue at 100 s Super Frame ARQ {qa:.1?} vs \
             Seda {qs:.1?}, ratio {ratio:.2} (need Seda lower on every seed, ratio in [1.4, 3.0])",
            if decreasing { "decreasing" } else { "not decreasing" }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_determinism_and_conservation() {
    let mut identical = true;
    let mut runs = 0;
    for protocol in [Protocol::Iamac, Protocol::Smac, Protocol::AdaptiveSmac] {
        for recovery in [RecoveryScheme::Arq, RecoveryScheme::Seda] {
            let s = Scenario {
                protocol,
                recovery,
                seed: 11,
                ..Scenario::desk()
            };
            let a = run(&s).rows().join("\n");
            let b = run(&s).rows().join("\n");
            identical &= a == b;
            runs += 2;
        }
    }
    let spec = SweepSpec::from_toml(
        r#"
        parameter = "sampling_interval"
        values = [30.0, 120.0]
        seeds = [4, 5]
        arms = [
            { protocol = "iamac", recovery = "arq" },
            { protocol = "adaptive-smac", recovery = "seda" },
        ]
        "#,
    )
    .unwrap();
    let serial = sweep(&spec, &Scenario::desk(), false).unwrap();
    let parallel = sweep(&spec, &Scenario::desk(), true).unwrap();
    serial
        .experiments
        .iter()
        .chain(&parallel.experiments)
        .for_each(assert_conserved);
    let sweep_same = serial.csv() == parallel.csv();
    let pass = report(
        11,
        identical && sweep_same,
        format!(
            "{runs} repeated runs {}; serial and parallel sweep CSVs {}; conservation asserted on every run",
            if identical { "byte-identical" } else { "DIFFER" },
            if sweep_same { "identical" } else { "DIFFER" }
        ),
    );
    assert!(pass);
}
