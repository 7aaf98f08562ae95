//! Experiment execution: bootstrap, runs, sweeps, CSV output and trend checks.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Position, Topology, SINK};
use crate::engine::rng_stream;
use crate::error::{Error, Result};
use crate::metrics::{mean, percentile, std_error};
use crate::network::{Protocol, RunResult, SimConfig, Simulation};
use crate::recovery::{
    arq_capacity, rts_success_prob, seda_capacity, ContentionMode, RecoveryParams, RecoveryScheme,
};
use crate::routing::{build_tree, estimate_links, probe_counts, RoutingTree};
use crate::scenario::{Scenario, SinkPlacement};

/// Column order of every metrics CSV.
pub const CSV_HEADER: &str =
    "scenario,protocol,recovery,parameter,value,seed,status,metric,metric_value";

/// Network after link estimation and tree construction.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub topology: Topology,
    pub tree: RoutingTree,
    pub parents: Vec<Option<usize>>,
    /// Bit error rate each node infers for the link to its parent.
    pub ber_hints: Vec<f64>,
}

fn place(s: &Scenario, seed: u64) -> Vec<Position> {
    let mut rng = rng_stream(seed, "placement");
    let (w, h) = (s.area.width, s.area.height);
    let sink = match s.sink {
        SinkPlacement::TopCenter => Position { x: w / 2.0, y: h },
        SinkPlacement::Center => Position {
            x: w / 2.0,
            y: h / 2.0,
        },
        SinkPlacement::Corner => Position { x: 0.0, y: h },
    };
    let mut out = vec![sink];
    for _ in 1..s.node_count {
        out.push(Position {
            x: rng.gen::<f64>() * w,
            y: rng.gen::<f64>() * h,
        });
    }
    out
}

/// Places nodes, estimates links with probe broadcasts and builds the
/// routing tree. A node without a route makes the network disjoint.
pub fn bootstrap(s: &Scenario, seed: u64) -> Result<Bootstrap> {
    let positions = place(s, seed);
    let mut shadow = rng_stream(seed, "shadowing");
    let topology =
        Topology::from_positions(&s.link, s.area.width, s.area.height, positions, &mut shadow);
    bootstrap_on(s, seed, topology)
}

/// Bootstrap over a given topology.
pub fn bootstrap_on(s: &Scenario, seed: u64, topology: Topology) -> Result<Bootstrap> {
    let probe_len = s.packets.control_on_air();
    let mut probe_rng = rng_stream(seed, "probes");
    let heard = probe_counts(
        &topology,
        &s.link,
        s.output_power,
        s.routing.probes,
        probe_len,
        &mut probe_rng,
    );
    let tables = estimate_links(&heard, s.routing.probes);
    let n = topology.len();
    let mut prr = vec![vec![0.0; n]; n];
    for (i, row) in prr.iter_mut().enumerate() {
        for (j, p) in row.iter_mut().enumerate() {
            if i != j {
                let snr = topology.rx_power(i, j, s.output_power) - s.link.noise_floor;
                *p = s.link.packet_reception_prob(snr, probe_len).unwrap_or(0.0);
            }
        }
    }
    let mut tree_rng = rng_stream(seed, "tree");
    let tree = build_tree(
        tables,
        s.routing.max_children,
        &mut tree_rng,
        s.routing.quiet_rounds,
        |tx, rx, rng| rng.gen::<f64>() < prr[tx][rx],
    );
    let unrouted = tree.unrouted();
    if !unrouted.is_empty() {
        return Err(Error::Disjoint {
            unrouted: unrouted.len(),
        });
    }
    let bits = s.link.coded_bits(probe_len);
    let parents: Vec<Option<usize>> = (0..n).map(|i| tree.parent(i)).collect();
    let ber_hints = (0..n)
        .map(|i| {
            let Some(p) = parents[i] else { return 0.0 };
            let e = tree.tables[i].get(p).expect("parent is a neighbor");
            let forward = f64::from(e.reverse_count) / f64::from(e.sent_count.max(1));
            if forward >= 1.0 {
                0.0
            } else {
                1.0 - forward.max(1e-9).powf(1.0 / bits)
            }
        })
        .collect();
    Ok(Bootstrap {
        topology,
        tree,
        parents,
        ber_hints,
    })
}

/// Result of one scenario run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: String,
    pub protocol: Protocol,
    pub recovery: RecoveryScheme,
    pub seed: u64,
    pub parameter: String,
    pub value: String,
    pub status: Status,
    pub result: Option<RunResult>,
    metrics: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok,
    Disjoint,
    ConfigError,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Disjoint => "disjoint",
            Status::ConfigError => "config-error",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::ConfigError => 2,
            Status::Disjoint => 3,
        }
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

/// Named summary values of a finished run.
pub fn summary_metrics(r: &RunResult) -> Vec<(&'static str, f64)> {
    let l = &r.ledger;
    let lat = &l.latencies;
    let n = r.energy.len().max(1) as f64;
    let senders: Vec<f64> = l.senders_per_frame.iter().map(|&s| s as f64).collect();
    let total_queue: f64 = r.queue_means.iter().sum();
    vec![
        ("throughput", r.throughput()),
        ("delivered_packets", l.delivered_packets as f64),
        ("generated_packets", l.generated as f64),
        ("dropped_packets", l.dropped as f64),
        ("queued_packets", r.outstanding as f64),
        ("mean_latency", mean(lat).unwrap_or(f64::NAN)),
        ("latency_stderr", std_error(lat).unwrap_or(f64::NAN)),
        ("p95_latency", percentile(lat, 0.95).unwrap_or(f64::NAN)),
        ("lifetime", r.lifetime),
        ("censored", f64::from(u8::from(r.censored))),
        ("mean_duty_cycle", r.mean_duty_cycle()),
        // the sink's queue is always empty; average over sensors
        ("mean_queue", total_queue / (n - 1.0).max(1.0)),
        ("total_energy_mj", r.total_energy_mj()),
        ("frames", l.frames as f64),
        ("mean_cs_sum", l.mean_cs_sum()),
        ("mean_cs_per_node", l.mean_cs_sum() / n),
        ("interferers", l.interferer_distances.len() as f64),
        ("mean_senders", mean(&senders).unwrap_or(0.0)),
        ("deactivations", l.deactivations as f64),
        ("role_violations", l.role_violations as f64),
        ("nav_violations", l.nav_violations as f64),
        ("energy_conservation_error", r.energy_conservation_error),
        (
            "payload_conserved",
            f64::from(u8::from(r.payload_conserved)),
        ),
    ]
}

impl Experiment {
    /// CSV rows without the header.
    pub fn rows(&self) -> Vec<String> {
        let prefix = format!(
            "{},{},{},{},{},{},{}",
            self.scenario,
            self.protocol.label(),
            recovery_label(self.recovery),
            self.parameter,
            self.value,
            self.seed,
            self.status.label()
        );
        match &self.result {
            None => vec![format!("{prefix},status,nan")],
            Some(r) => summary_metrics(r)
                .into_iter()
                .filter(|(name, _)| {
                    self.metrics.is_empty() || self.metrics.iter().any(|m| m == name)
                })
                .map(|(name, v)| format!("{prefix},{name},{}", fmt(v)))
                .collect(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        let r = self.result.as_ref()?;
        summary_metrics(r)
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v)
    }

    /// Human-readable one-paragraph summary.
    pub fn summary(&self) -> String {
        match &self.result {
            None => format!(
                "{} seed {}: {}",
                self.scenario,
                self.seed,
                self.status.label()
            ),
            Some(r) => format!(
                "{} seed {} [{} / {}]: {} frames, delivered {}/{} packets, throughput {:.2} B/s, \
                 mean latency {:.2} s, lifetime {:.1} s{}, duty cycle {:.3}, mean CS sum {:.3}",
                self.scenario,
                self.seed,
                self.protocol.label(),
                recovery_label(self.recovery),
                r.ledger.frames,
                r.ledger.delivered_packets,
                r.ledger.generated,
                r.throughput(),
                mean(&r.ledger.latencies).unwrap_or(f64::NAN),
                r.lifetime,
                if r.censored { " (censored)" } else { "" },
                r.mean_duty_cycle(),
                r.ledger.mean_cs_sum(),
            ),
        }
    }
}

pub fn recovery_label(r: RecoveryScheme) -> &'static str {
    match r {
        RecoveryScheme::Arq => "arq",
        RecoveryScheme::Seda => "seda",
    }
}

/// Runs a scenario with `cfg_hook` applied to the simulation parameters.
pub fn run_with<F>(s: &Scenario, cfg_hook: F) -> Result<Experiment>
where
    F: FnOnce(&mut SimConfig),
{
    let mut cfg = s.sim_config()?;
    cfg_hook(&mut cfg);
    let mut exp = Experiment {
        scenario: s.name.clone(),
        protocol: s.protocol,
        recovery: s.recovery,
        seed: s.seed,
        parameter: "none".into(),
        value: String::new(),
        status: Status::Ok,
        result: None,
        metrics: s.metrics.clone(),
    };
    match bootstrap(s, s.seed) {
        Ok(b) => {
            let sim = Simulation::new(cfg, b.topology, b.parents, b.ber_hints);
            exp.result = Some(sim.run());
        }
        Err(Error::Disjoint { .. }) => exp.status = Status::Disjoint,
        Err(e) => return Err(e),
    }
    Ok(exp)
}

/// Bootstraps and runs one scenario.
pub fn run_experiment(s: &Scenario) -> Result<Experiment> {
    run_with(s, |_| {})
}

/// One protocol/recovery combination of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub protocol: Protocol,
    pub recovery: RecoveryScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendKind {
    NonDecreasing,
    NonIncreasing,
    InteriorMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendSpec {
    pub metric: String,
    pub kind: TrendKind,
    /// Allowed isotonic residual relative to the mean level.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Arms share the seed list; empty runs the base scenario's arm.
    #[serde(default)]
    pub arms: Vec<Arm>,
    #[serde(default)]
    pub trend: Option<TrendSpec>,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SweepSpec =
            toml::from_str(text).map_err(|e| Error::config("sweep", e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("sweep.seeds", "must not be empty"));
        }
        set_parameter(&mut Scenario::default(), &self.parameter, self.values[0])?;
        Ok(())
    }
}

/// Applies a swept value to a scenario.
pub fn set_parameter(s: &mut Scenario, name: &str, v: f64) -> Result<()> {
    match name {
        "output_power" => s.output_power = v,
        "sampling_interval" => s.sampling_interval = v,
        "frame_duration" => s.frame.frame_duration = v,
        "node_count" => s.node_count = v as usize,
        "area_side" => {
            s.area.width = v;
            s.area.height = v;
        }
        "initial_packets" => s.initial_packets = v as usize,
        "horizon" => s.horizon = v,
        "battery_mah" => s.energy.battery_mah = v,
        "control_len" => s.packets.control_len = v as usize,
        "max_children" => s.routing.max_children = v as usize,
        other => {
            return Err(Error::config(
                "sweep.parameter",
                format!("cannot sweep `{other}`"),
            ))
        }
    }
    Ok(())
}

/// All runs of a sweep, ordered by (value, seed, arm).
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub experiments: Vec<Experiment>,
    pub values: Vec<f64>,
}

impl SweepOutcome {
    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.experiments {
            for r in e.rows() {
                out.push_str(&r);
                out.push('\n');
            }
        }
        out
    }

    /// Mean of `metric` per swept value over ok runs of `arm`.
    pub fn means(&self, metric: &str, arm: Option<Arm>) -> Vec<Option<f64>> {
        self.values
            .iter()
            .map(|&v| {
                let xs: Vec<f64> = self
                    .experiments
                    .iter()
                    .filter(|e| e.value == fmt(v) && e.status == Status::Ok)
                    .filter(|e| {
                        arm.map_or(true, |a| {
                            a.protocol == e.protocol && a.recovery == e.recovery
                        })
                    })
                    .filter_map(|e| e.metric(metric))
                    .filter(|x| x.is_finite())
                    .collect();
                mean(&xs)
            })
            .collect()
    }
}

/// Runs every (value, seed, arm) point. `parallel` only changes scheduling.
pub fn sweep(spec: &SweepSpec, base: &Scenario, parallel: bool) -> Result<SweepOutcome> {
    spec.validate()?;
    let arms: Vec<Arm> = if spec.arms.is_empty() {
        vec![Arm {
            protocol: base.protocol,
            recovery: base.recovery,
        }]
    } else {
        spec.arms.clone()
    };
    let mut points = Vec::new();
    for (vi, &v) in spec.values.iter().enumerate() {
        for &seed in &spec.seeds {
            for (ai, arm) in arms.iter().enumerate() {
                points.push((vi, v, seed, ai, *arm));
            }
        }
    }
    let run = |&(_, v, seed, _, arm): &(usize, f64, u64, usize, Arm)| -> Experiment {
        let mut s = base.clone();
        s.seed = seed;
        s.protocol = arm.protocol;
        s.recovery = arm.recovery;
        let mut exp =
            match set_parameter(&mut s, &spec.parameter, v).and_then(|_| run_experiment(&s)) {
                Ok(e) => e,
                Err(_) => Experiment {
                    scenario: s.name.clone(),
                    protocol: arm.protocol,
                    recovery: arm.recovery,
                    seed,
                    parameter: String::new(),
                    value: String::new(),
                    status: Status::ConfigError,
                    result: None,
                    metrics: s.metrics.clone(),
                },
            };
        exp.parameter = spec.parameter.clone();
        exp.value = fmt(v);
        exp
    };
    let mut results: Vec<((usize, u64, usize), Experiment)> = if parallel {
        points
            .par_iter()
            .map(|p| ((p.0, p.2, p.3), run(p)))
            .collect()
    } else {
        points.iter().map(|p| ((p.0, p.2, p.3), run(p))).collect()
    };
    results.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(SweepOutcome {
        experiments: results.into_iter().map(|(_, e)| e).collect(),
        values: spec.values.clone(),
    })
}

/// Pool-adjacent-violators fit, non-decreasing when `increasing`.
pub fn isotonic_fit(ys: &[f64], increasing: bool) -> Vec<f64> {
    let sign = if increasing { 1.0 } else { -1.0 };
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &y in ys {
        blocks.push((sign * y, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let merged = (a * na as f64 + b * nb as f64) / (na + nb) as f64;
            *blocks.last_mut().expect("two blocks") = (merged, na + nb);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat(sign * v).take(n))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub pass: bool,
    /// Largest isotonic residual relative to the mean level.
    pub residual: f64,
    pub detail: String,
}

pub fn check_trend(ys: &[f64], kind: TrendKind, tolerance: f64) -> TrendReport {
    if ys.len() < 2 || ys.iter().any(|y| !y.is_finite()) {
        return TrendReport {
            pass: false,
            residual: f64::NAN,
            detail: "needs at least two finite points".into(),
        };
    }
    let level = ys.iter().map(|y| y.abs()).sum::<f64>() / ys.len() as f64;
    let scale = level.max(1e-12);
    match kind {
        TrendKind::NonDecreasing | TrendKind::NonIncreasing => {
            let fit = isotonic_fit(ys, kind == TrendKind::NonDecreasing);
            let residual = ys
                .iter()
                .zip(&fit)
                .map(|(y, f)| (y - f).abs())
                .fold(0.0, f64::max)
                / scale;
            TrendReport {
                pass: residual <= tolerance,
                residual,
                detail: format!("{kind:?}: residual {residual:.4} (tolerance {tolerance})"),
            }
        }
        TrendKind::InteriorMax => {
            let (imax, &ymax) = ys
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty");
            let edge = ys[0].max(ys[ys.len() - 1]);
            let margin = (ymax - edge) / scale;
            let interior = imax > 0 && imax + 1 < ys.len();
            TrendReport {
                pass: interior && margin > 0.0,
                residual: margin,
                detail: format!(
                    "interior max at index {imax} of {}, margin {margin:.4} over the edges",
                    ys.len()
                ),
            }
        }
    }
}

/// Closed-form capacity and contention tables.
pub fn analytic_report(
    bers: &[f64],
    d_s: f64,
    params: &RecoveryParams,
    max_n: u32,
    w: u32,
) -> Result<String> {
    let mut out = String::from(
        "table,ber,arq_mpf,seda_mpf,arq_payload,seda_payload,n,w,p_printed,p_distinct\n",
    );
    for &ber in bers {
        let a = arq_capacity(d_s, ber, params)?;
        let s = seda_capacity(d_s, ber, params)?;
        let pay = params.payload_len as u64;
        out.push_str(&format!(
            "capacity,{},{a},{s},{},{},,,,\n",
            fmt(ber),
            u64::from(a) * pay,
            u64::from(s) * pay
        ));
    }
    for n in 1..=max_n {
        let p = rts_success_prob(n, w, ContentionMode::Printed)?;
        let q = rts_success_prob(n, w, ContentionMode::DistinctSlot)?;
        out.push_str(&format!("contention,,,,,,{n},{w},{},{}\n", fmt(p), fmt(q)));
    }
    Ok(out)
}

/// Distance from every node to the sink's routing root, for reports.
pub fn depths(b: &Bootstrap) -> Vec<Option<usize>> {
    (0..b.parents.len())
        .map(|i| if i == SINK { Some(0) } else { b.tree.depth(i) })
        .collect()
}
