//! Event-driven network simulation shared by every MAC.
//!
//! The simulator owns the medium (every transmission with its interval and
//! received powers), per-node radio and energy state, traffic generation and
//! the metrics ledger. Protocol behaviour lives in [`iamac_run`] and
//! [`smac_run`], which add handlers to [`Simulation`].

mod iamac_run;
mod smac_run;

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_mw, prr_from_ber, LinkModel, NodeId, Topology, SINK};
use crate::energy::{EnergyAccount, EnergyTable, RadioState};
use crate::engine::{rng_stream, RandomStream, Scheduler};
use crate::frame::FramePlan;
use crate::iamac::MacControlState;
use crate::metrics::{colliding_members, DataTx, MetricsLedger, QueueTracker};
use crate::packet::{DataPacket, PacketKind, PacketSizes};
use crate::recovery::{RecoveryParams, RecoveryScheme, TxOutcome};
use crate::smac::{NavState, SmacConfig};

pub use iamac_run::Exchange;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    Iamac,
    Smac,
    AdaptiveSmac,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Iamac => "iamac",
            Protocol::Smac => "smac",
            Protocol::AdaptiveSmac => "adaptive-smac",
        }
    }
}

/// Deterministic choices injected by fixtures. Each list is consumed in
/// order; an exhausted list falls back to random draws.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `(contention slot, backoff)` picks per node.
    pub contention: BTreeMap<NodeId, VecDeque<(u32, f64)>>,
    /// CTS timer offsets from the CTS slot start.
    pub cts_timer: BTreeMap<NodeId, f64>,
    /// S-MAC backoffs from the listen-window start.
    pub smac_backoff: BTreeMap<NodeId, VecDeque<f64>>,
}

/// Fully resolved simulation parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub protocol: Protocol,
    pub recovery: RecoveryScheme,
    pub link: LinkModel,
    pub sizes: PacketSizes,
    pub energy: EnergyTable,
    pub recovery_params: RecoveryParams,
    pub frame: FramePlan,
    pub smac: SmacConfig,
    pub tx_power: f64,
    /// Seconds between readings per node; `None` disables periodic sampling.
    pub sampling_interval: Option<f64>,
    /// Packets queued at time zero, per node.
    pub initial_packets: Vec<usize>,
    pub horizon: f64,
    /// Control frames decode at every listening node above the carrier-sense
    /// threshold, regardless of interference.
    pub ideal_control: bool,
    pub stop_at_first_death: bool,
    /// Keep full transmission logs for offline checks.
    pub logs: bool,
    pub trace: bool,
    pub node_names: Option<Vec<String>>,
    pub overrides: Overrides,
}

#[derive(Debug, Clone)]
pub(crate) struct Tx {
    pub id: u64,
    pub src: NodeId,
    pub dst: Option<NodeId>,
    pub kind: PacketKind,
    pub start: f64,
    pub end: f64,
    pub header_bytes: usize,
    pub block_bytes: usize,
    pub blocks: usize,
    pub owner: TxOwner,
    /// Absolute end of the announced exchange (S-MAC duration field).
    pub duration_until: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum TxOwner {
    Control,
    Exchange(usize),
    Smac,
}

#[derive(Debug, Clone)]
pub(crate) enum Ev {
    FrameStart,
    SynchStart(usize),
    SynchEnd(usize),
    Beacon(NodeId),
    BeaconEnd(NodeId),
    Sample(NodeId),
    TxEnd(u64),
    // IAMAC
    Contend { node: NodeId, slot: u32, epoch: u64 },
    CtsSlotStart,
    CtsTimer { node: NodeId, epoch: u64 },
    CommStart(usize),
    ExchangeStart { parent: NodeId, epoch: u64 },
    ExchangeTx { ex: usize },
    // S-MAC
    SmacBackoff { node: NodeId, epoch: u64 },
    SmacSend { node: NodeId, epoch: u64 },
    SmacTimeout { node: NodeId, epoch: u64 },
    SmacWake { node: NodeId, epoch: u64 },
    SmacAdaptiveEnd { node: NodeId, epoch: u64 },
    SmacListenEnd,
}

#[derive(Debug, Clone)]
pub(crate) struct NodeRt {
    pub alive: bool,
    pub energy: EnergyAccount,
    pub queue: VecDeque<DataPacket>,
    pub parent: Option<NodeId>,
    pub mac: MacControlState,
    pub nav: NavState,
    /// Bumped whenever pending timers of this node become stale.
    pub epoch: u64,
    /// Protocol wants the radio on.
    pub awake: bool,
    pub tx_active: Option<u64>,
    /// Beacon transmissions do not use the medium but occupy the radio.
    pub beaconing: bool,
    /// Time the radio last became able to receive.
    pub rx_ready_since: f64,
    pub last_rx: BTreeMap<NodeId, u64>,
    pub sent_data: bool,
    pub received_data: bool,
    /// Bit error rate assumed on the link to the parent.
    pub ber_hint: f64,
    pub cts_backlog: VecDeque<NodeId>,
}

/// Summary of one finished run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub ledger: MetricsLedger,
    pub end_time: f64,
    pub lifetime: f64,
    pub censored: bool,
    pub first_dead: Option<NodeId>,
    pub energy: Vec<EnergyAccount>,
    pub queue_means: Vec<f64>,
    pub residual_queue: Vec<usize>,
    pub energy_conservation_error: f64,
    pub payload_conserved: bool,
    /// Distinct queued packets the sink has not yet received. A copy kept
    /// because its ack was lost is not counted twice.
    pub outstanding: u64,
    pub trace: Vec<String>,
    pub in_range: Vec<Vec<bool>>,
}

impl RunResult {
    /// Sink-side delivered payload per second.
    pub fn throughput(&self) -> f64 {
        if self.end_time <= 0.0 {
            0.0
        } else {
            self.ledger.delivered_payload as f64 / self.end_time
        }
    }

    pub fn mean_duty_cycle(&self) -> f64 {
        let xs: Vec<f64> = self.energy.iter().map(EnergyAccount::duty_cycle).collect();
        crate::metrics::mean(&xs).unwrap_or(0.0)
    }

    pub fn total_energy_mj(&self) -> f64 {
        self.energy.iter().map(EnergyAccount::consumed_mj).sum()
    }
}

pub struct Simulation {
    pub(crate) cfg: SimConfig,
    pub(crate) topo: Topology,
    pub(crate) sched: Scheduler<Ev>,
    pub(crate) nodes: Vec<NodeRt>,
    pub(crate) rx_mw: Vec<Vec<f64>>,
    pub(crate) in_range: Vec<Vec<bool>>,
    /// Nodes that can sense each transmitter.
    pub(crate) hearers: Vec<Vec<NodeId>>,
    pub(crate) txs: Vec<Tx>,
    pub(crate) active: Vec<u64>,
    next_tx: u64,
    pub(crate) frame_idx: u64,
    pub(crate) frame_start: f64,
    pub(crate) rng_contention: RandomStream,
    pub(crate) rng_rx: RandomStream,
    pub(crate) rng_misc: RandomStream,
    pub(crate) ledger: MetricsLedger,
    pub(crate) queues: QueueTracker,
    cs_frame: BTreeMap<NodeId, BTreeSet<NodeId>>,
    delivered_ids: HashSet<u64>,
    dropped_ids: HashSet<u64>,
    generated_ids: u64,
    pub(crate) exchanges: Vec<Exchange>,
    pub(crate) schedules: BTreeMap<NodeId, VecDeque<NodeId>>,
    pub(crate) smac: smac_run::SmacShared,
    pub(crate) trace: Vec<String>,
    pub(crate) noise_mw: f64,
    pub(crate) cs_thr_mw: f64,
    first_death: Option<(f64, NodeId)>,
    stopped: bool,
}

impl Simulation {
    pub fn new(
        cfg: SimConfig,
        topo: Topology,
        parents: Vec<Option<NodeId>>,
        ber_hints: Vec<f64>,
    ) -> Self {
        let n = topo.len();
        assert_eq!(parents.len(), n);
        let thr = cfg.link.cs_threshold_dbm();
        let mut rx_mw = vec![vec![0.0; n]; n];
        let mut in_range = vec![vec![false; n]; n];
        let mut hearers = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let p = topo.rx_power(i, j, cfg.tx_power);
                    rx_mw[i][j] = dbm_to_mw(p);
                    if p >= thr {
                        in_range[i][j] = true;
                        hearers[i].push(j);
                    }
                }
            }
        }
        let nodes = (0..n)
            .map(|i| NodeRt {
                alive: true,
                energy: EnergyAccount::new(&cfg.energy, cfg.tx_power, 0.0),
                queue: VecDeque::new(),
                parent: parents[i],
                mac: MacControlState::default(),
                nav: NavState::default(),
                epoch: 0,
                awake: false,
                tx_active: None,
                beaconing: false,
                rx_ready_since: 0.0,
                last_rx: BTreeMap::new(),
                sent_data: false,
                received_data: false,
                ber_hint: ber_hints.get(i).copied().unwrap_or(0.0),
                cts_backlog: VecDeque::new(),
            })
            .collect();
        let seed = cfg.seed;
        Self {
            noise_mw: dbm_to_mw(cfg.link.noise_floor),
            cs_thr_mw: dbm_to_mw(thr),
            ledger: MetricsLedger::with_logs(cfg.logs),
            queues: QueueTracker::new(n, 0.0),
            cfg,
            topo,
            sched: Scheduler::new(),
            nodes,
            rx_mw,
            in_range,
            hearers,
            txs: Vec::new(),
            active: Vec::new(),
            next_tx: 0,
            frame_idx: 0,
            frame_start: 0.0,
            rng_contention: rng_stream(seed, "contention"),
            rng_rx: rng_stream(seed, "reception"),
            rng_misc: rng_stream(seed, "mac-timers"),
            cs_frame: BTreeMap::new(),
            delivered_ids: HashSet::new(),
            dropped_ids: HashSet::new(),
            generated_ids: 0,
            exchanges: Vec::new(),
            schedules: BTreeMap::new(),
            smac: smac_run::SmacShared::default(),
            trace: Vec::new(),
            first_death: None,
            stopped: false,
        }
    }

    pub(crate) fn now(&self) -> f64 {
        self.sched.now()
    }

    pub(crate) fn name(&self, id: NodeId) -> String {
        match &self.cfg.node_names {
            Some(names) => names.get(id).cloned().unwrap_or_else(|| id.to_string()),
            None => id.to_string(),
        }
    }

    pub(crate) fn trace_line(&mut self, node: NodeId, msg: impl AsRef<str>) {
        if self.cfg.trace {
            let line = format!("{:.6} {} {}", self.now(), self.name(node), msg.as_ref());
            self.trace.push(line);
        }
    }

    pub(crate) fn airtime(&self, bytes: usize) -> f64 {
        self.cfg.link.airtime(bytes)
    }

    pub(crate) fn control_airtime(&self) -> f64 {
        self.airtime(self.cfg.sizes.control_on_air())
    }

    // ---- radio and energy ------------------------------------------------

    pub(crate) fn refresh_radio(&mut self, id: NodeId) {
        let now = self.now();
        let n = &mut self.nodes[id];
        if !n.alive {
            return;
        }
        let want = if n.tx_active.is_some() || n.beaconing {
            RadioState::Transmit
        } else if n.awake {
            RadioState::Listen
        } else {
            RadioState::Sleep
        };
        if want != n.energy.state {
            if want == RadioState::Listen {
                n.rx_ready_since = now;
            }
            n.energy.set_state(now, want, &self.cfg.energy);
        }
        self.check_death(id);
    }

    pub(crate) fn wake(&mut self, id: NodeId) {
        if self.nodes[id].alive && !self.nodes[id].awake {
            self.nodes[id].awake = true;
            self.refresh_radio(id);
        }
    }

    pub(crate) fn sleep(&mut self, id: NodeId) {
        if self.nodes[id].awake {
            self.nodes[id].awake = false;
            self.refresh_radio(id);
        }
    }

    fn check_death(&mut self, id: NodeId) {
        if let Some(t) = self.nodes[id].energy.dead_at {
            if self.nodes[id].alive {
                self.nodes[id].alive = false;
                self.nodes[id].awake = false;
                self.nodes[id].epoch += 1;
                if self.first_death.map_or(true, |(ft, _)| t < ft) {
                    self.first_death = Some((t, id));
                }
                if self.cfg.stop_at_first_death {
                    self.stopped = true;
                }
            }
        }
    }

    /// Listening, not transmitting, and listening since `since`.
    pub(crate) fn can_receive(&self, id: NodeId, since: f64) -> bool {
        let n = &self.nodes[id];
        n.alive
            && n.awake
            && n.tx_active.is_none()
            && !n.beaconing
            && n.rx_ready_since <= since + 1e-12
    }

    // ---- medium -----------------------------------------------------------

    /// Puts a frame on the air now; returns its id.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn begin_tx(
        &mut self,
        src: NodeId,
        dst: Option<NodeId>,
        kind: PacketKind,
        bytes: usize,
        header_bytes: usize,
        block_bytes: usize,
        blocks: usize,
        owner: TxOwner,
        duration_until: Option<f64>,
    ) -> u64 {
        assert!(
            self.nodes[src].tx_active.is_none(),
            "node {src} is already transmitting"
        );
        let now = self.now();
        if self.nodes[src].nav.blocks(now) {
            self.ledger.nav_violations += 1;
        }
        let id = self.next_tx;
        self.next_tx += 1;
        let end = now + self.airtime(bytes);
        self.txs.push(Tx {
            id,
            src,
            dst,
            kind,
            start: now,
            end,
            header_bytes,
            block_bytes,
            blocks,
            owner,
            duration_until,
        });
        self.active.push(id);
        self.nodes[src].tx_active = Some(id);
        self.refresh_radio(src);
        if kind.is_data() {
            self.nodes[src].sent_data = true;
            if let Some(d) = dst {
                self.nodes[d].received_data = true;
            }
            if let (Some(log), Some(d)) = (self.ledger.data_log.as_mut(), dst) {
                log.push(DataTx {
                    frame: self.frame_idx,
                    src,
                    dst: d,
                    start: now,
                    end,
                });
            }
        }
        self.sched.schedule(end, Ev::TxEnd(id));
        id
    }

    pub(crate) fn tx(&self, id: u64) -> &Tx {
        self.txs
            .iter()
            .find(|t| t.id == id)
            .expect("transmission in log")
    }

    /// Completes a transmission: frees the transmitter and returns a copy.
    fn end_tx(&mut self, id: u64) -> Tx {
        let t = self.tx(id).clone();
        self.active.retain(|&a| a != id);
        self.nodes[t.src].tx_active = None;
        self.refresh_radio(t.src);
        t
    }

    fn prune(&mut self) {
        let now = self.now();
        let horizon = self
            .active
            .iter()
            .map(|&a| self.tx(a).start)
            .fold(now, f64::min);
        self.txs
            .retain(|t| t.end > horizon - 1e-9 || self.active.contains(&t.id));
    }

    /// Summed power of active transmissions at `id`, mW.
    pub(crate) fn sensed_mw(&self, id: NodeId) -> f64 {
        self.active
            .iter()
            .map(|&a| self.tx(a).src)
            .filter(|&s| s != id)
            .map(|s| self.rx_mw[s][id])
            .sum()
    }

    /// Carrier sense at `id`: busy if any frame above threshold overlapped
    /// `(since, now]` or the summed power now exceeds it.
    pub(crate) fn channel_busy(&self, id: NodeId, since: f64) -> bool {
        let now = self.now();
        let heard = self
            .txs
            .iter()
            .any(|t| t.src != id && t.end > since && t.start <= now && self.in_range[t.src][id]);
        heard || self.sensed_mw(id) >= self.cs_thr_mw
    }

    /// Lowest SINR of `t` at `rx` over its airtime, dB.
    fn min_sinr(&self, t: &Tx, rx: NodeId) -> f64 {
        let overlapping: Vec<&Tx> = self
            .txs
            .iter()
            .filter(|o| o.id != t.id && o.src != rx && o.start < t.end && o.end > t.start)
            .collect();
        let mut points = vec![t.start];
        points.extend(overlapping.iter().map(|o| o.start).filter(|&s| s > t.start));
        let worst = points
            .iter()
            .map(|&p| {
                overlapping
                    .iter()
                    .filter(|o| o.start <= p && o.end > p)
                    .map(|o| self.rx_mw[o.src][rx])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        10.0 * (self.rx_mw[t.src][rx] / (self.noise_mw + worst)).log10()
    }

    fn prr(&self, sinr_db: f64, bytes: usize) -> f64 {
        if bytes == 0 {
            return 1.0;
        }
        let ber = self.cfg.link.bit_error_rate(sinr_db);
        prr_from_ber(ber, self.cfg.link.coded_bits(bytes))
    }

    /// Reception draw of `t` at `rx`, which must have been listening.
    pub(crate) fn decode(&mut self, t: &Tx, rx: NodeId) -> TxOutcome {
        if !self.can_receive(rx, t.start) || !self.in_range[t.src][rx] {
            return TxOutcome {
                header_ok: false,
                blocks_ok: vec![false; t.blocks],
            };
        }
        if t.kind.is_control() && self.cfg.ideal_control {
            return TxOutcome::whole(true);
        }
        let sinr = self.min_sinr(t, rx);
        let p_hdr = self.prr(sinr, t.header_bytes);
        let header_ok = self.rng_rx.gen::<f64>() < p_hdr;
        let p_blk = self.prr(sinr, t.block_bytes);
        let blocks_ok = (0..t.blocks)
            .map(|_| self.rng_rx.gen::<f64>() < p_blk)
            .collect();
        TxOutcome {
            header_ok,
            blocks_ok,
        }
    }

    /// Records the colliding set of a data reception at `rx`.
    fn record_reception(&mut self, t: &Tx, rx: NodeId) {
        if !self.can_receive(rx, t.start) {
            return;
        }
        self.ledger.data_receptions += 1;
        let me = DataTx {
            frame: self.frame_idx,
            src: t.src,
            dst: rx,
            start: t.start,
            end: t.end,
        };
        let others: Vec<DataTx> = self
            .txs
            .iter()
            .filter(|o| o.kind.is_data() && o.id != t.id)
            .map(|o| DataTx {
                frame: self.frame_idx,
                src: o.src,
                dst: o.dst.unwrap_or(o.src),
                start: o.start,
                end: o.end,
            })
            .collect();
        let members = colliding_members(&me, others.iter(), &self.in_range);
        for &m in &members {
            self.ledger
                .interferer_distances
                .push(self.topo.distance(m, rx));
        }
        let entry = self.cs_frame.entry(rx).or_default();
        entry.extend(members.iter().copied());
        if let Some(sets) = self.ledger.cs_sets.as_mut() {
            sets.entry((self.frame_idx, rx))
                .or_default()
                .extend(members);
        }
        if let Some(log) = self.ledger.reception_log.as_mut() {
            log.push(me);
        }
    }

    // ---- traffic and delivery ----------------------------------------------

    pub(crate) fn queue_changed(&mut self, id: NodeId) {
        let now = self.now();
        let len = self.nodes[id].queue.len();
        self.queues.set(id, now, len);
    }

    fn new_packet(&mut self, id: NodeId) {
        let now = self.now();
        let pkt = DataPacket {
            id: self.generated_ids,
            origin: id,
            born_at: now,
            hops: 0,
        };
        self.generated_ids += 1;
        self.ledger.generated += 1;
        self.nodes[id].queue.push_back(pkt);
        self.queue_changed(id);
    }

    /// Hands a packet to `receiver`, forwarding or delivering it.
    pub(crate) fn accept_packet(&mut self, receiver: NodeId, mut p: DataPacket) {
        p.hops += 1;
        if receiver == SINK {
            if self.delivered_ids.insert(p.id) {
                self.ledger.delivered_packets += 1;
                self.ledger.delivered_payload += self.cfg.sizes.payload_len as u64;
                self.ledger.latencies.push(self.now() - p.born_at);
                self.ledger.delivered_at.push(self.now());
            }
        } else {
            self.nodes[receiver].queue.push_back(p);
            self.queue_changed(receiver);
        }
    }

    pub(crate) fn drop_packet(&mut self, p: DataPacket) {
        if self.dropped_ids.insert(p.id) {
            self.ledger.dropped += 1;
        }
    }

    pub(crate) fn deactivate(&mut self, id: NodeId) {
        self.nodes[id].mac.deactivate();
        self.nodes[id].epoch += 1;
        self.nodes[id].cts_backlog.clear();
        self.ledger.deactivations += 1;
        self.trace_line(id, "deactivated");
        self.sleep(id);
    }

    // ---- main loop ----------------------------------------------------------

    fn close_frame_metrics(&mut self) {
        let sum: usize = self.cs_frame.values().map(BTreeSet::len).sum();
        self.ledger.cs_per_frame.push(sum);
        self.cs_frame.clear();
        let senders = self.nodes.iter().filter(|n| n.sent_data).count();
        self.ledger.senders_per_frame.push(senders);
        self.ledger.frames += 1;
    }

    fn finish_frame(&mut self) {
        if self.frame_idx == 0 && self.now() == 0.0 {
            return;
        }
        self.close_frame_metrics();
        for n in &mut self.nodes {
            if n.sent_data && n.received_data {
                self.ledger.role_violations += 1;
            }
            n.sent_data = false;
            n.received_data = false;
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::FrameStart => {
                if self.now() > 0.0 {
                    self.finish_frame();
                    self.frame_idx += 1;
                }
                self.frame_start = self.now();
                for id in 0..self.nodes.len() {
                    self.nodes[id].epoch += 1;
                    self.nodes[id].mac.reset();
                    self.nodes[id].cts_backlog.clear();
                    // bring every ledger up to date so deaths are detected
                    self.refresh_radio(id);
                    let now = self.now();
                    let n = &mut self.nodes[id];
                    if n.alive {
                        n.energy.advance(now, &self.cfg.energy);
                    }
                    self.check_death(id);
                }
                self.schedules.clear();
                let next = self.now() + self.frame_duration();
                if next < self.cfg.horizon {
                    self.sched.schedule(next, Ev::FrameStart);
                }
                match self.cfg.protocol {
                    Protocol::Iamac => {
                        for (k, start) in self.cfg.frame.synch_starts().into_iter().enumerate() {
                            let t = self.frame_start + start;
                            if t < self.cfg.horizon {
                                self.sched.schedule(t, Ev::SynchStart(k));
                            }
                        }
                    }
                    Protocol::Smac | Protocol::AdaptiveSmac => {
                        let t = self.now();
                        self.sched.schedule(t, Ev::SynchStart(0));
                    }
                }
            }
            Ev::SynchStart(k) => {
                let airtime = self.control_airtime();
                let span = (self.cfg.frame.synch_slot - airtime).max(0.0);
                for id in 0..self.nodes.len() {
                    if !self.nodes[id].alive {
                        continue;
                    }
                    self.wake(id);
                    let at = self.now() + self.rng_misc.gen::<f64>() * span;
                    self.sched.schedule(at, Ev::Beacon(id));
                }
                let end = self.now() + self.cfg.frame.synch_slot;
                self.sched.schedule(end, Ev::SynchEnd(k));
            }
            Ev::Beacon(id) => {
                if self.nodes[id].alive && self.nodes[id].tx_active.is_none() {
                    self.nodes[id].beaconing = true;
                    self.refresh_radio(id);
                    let end = self.now() + self.control_airtime();
                    self.sched.schedule(end, Ev::BeaconEnd(id));
                }
            }
            Ev::BeaconEnd(id) => {
                self.nodes[id].beaconing = false;
                self.refresh_radio(id);
            }
            Ev::SynchEnd(k) => match self.cfg.protocol {
                Protocol::Iamac => self.iamac_synch_end(k),
                _ => self.smac_listen_start(),
            },
            Ev::Sample(id) => {
                if self.nodes[id].alive {
                    let now = self.now();
                    self.nodes[id].energy.charge_sample(now, &self.cfg.energy);
                    self.check_death(id);
                    self.new_packet(id);
                    if let Some(iv) = self.cfg.sampling_interval {
                        let next = now + iv;
                        if next < self.cfg.horizon {
                            self.sched.schedule(next, Ev::Sample(id));
                        }
                    }
                }
            }
            Ev::TxEnd(id) => {
                let t = self.end_tx(id);
                self.on_tx_end(&t);
                self.prune();
            }
            Ev::Contend { node, slot, epoch } => self.iamac_contend(node, slot, epoch),
            Ev::CtsSlotStart => self.iamac_cts_slot_start(),
            Ev::CtsTimer { node, epoch } => self.iamac_cts_timer(node, epoch),
            Ev::CommStart(k) => self.iamac_comm_start(k),
            Ev::ExchangeStart { parent, epoch } => self.iamac_exchange_start(parent, epoch),
            Ev::ExchangeTx { ex } => self.iamac_exchange_tx(ex),
            Ev::SmacBackoff { node, epoch } => self.smac_backoff(node, epoch),
            Ev::SmacSend { node, epoch } => self.smac_send(node, epoch),
            Ev::SmacTimeout { node, epoch } => self.smac_timeout(node, epoch),
            Ev::SmacWake { node, epoch } => self.smac_wake(node, epoch),
            Ev::SmacAdaptiveEnd { node, epoch } => self.smac_adaptive_end(node, epoch),
            Ev::SmacListenEnd => self.smac_listen_end(),
        }
    }

    fn on_tx_end(&mut self, t: &Tx) {
        if t.kind.is_data() {
            if let Some(d) = t.dst {
                self.record_reception(t, d);
            }
        }
        match (self.cfg.protocol, t.owner) {
            (_, TxOwner::Exchange(ex)) => self.iamac_exchange_tx_end(ex, t),
            (Protocol::Iamac, TxOwner::Control) => self.iamac_control_end(t),
            (_, TxOwner::Smac) | (_, TxOwner::Control) => self.smac_tx_end(t),
        }
    }

    pub(crate) fn frame_duration(&self) -> f64 {
        self.cfg.frame.duration()
    }

    /// Runs to the horizon (or first death) and returns the metrics.
    pub fn run(mut self) -> RunResult {
        let n = self.nodes.len();
        for id in 0..n {
            for _ in 0..self.cfg.initial_packets.get(id).copied().unwrap_or(0) {
                self.new_packet(id);
            }
        }
        if let Some(iv) = self.cfg.sampling_interval {
            let mut rng = rng_stream(self.cfg.seed, "traffic");
            for id in 0..n {
                let phase = rng.gen::<f64>() * iv;
                if id != SINK && self.nodes[id].parent.is_some() && phase < self.cfg.horizon {
                    self.sched.schedule(phase, Ev::Sample(id));
                }
            }
        }
        self.sched.schedule(0.0, Ev::FrameStart);
        while let Some(ev) = self.sched.pop_until(self.cfg.horizon) {
            self.handle(ev.payload);
            if self.stopped {
                break;
            }
        }
        let end = if self.stopped {
            self.now()
        } else {
            self.cfg.horizon
        };
        self.finalize(end)
    }

    fn finalize(mut self, end: f64) -> RunResult {
        if !self.stopped {
            // let the clock reach the horizon
            while self.sched.pop_until(end).is_some() {}
        }
        self.close_frame_metrics();
        for id in 0..self.nodes.len() {
            if self.nodes[id].alive {
                let n = &mut self.nodes[id];
                n.energy.advance(end, &self.cfg.energy);
            }
            self.check_death(id);
        }
        let queued: HashSet<u64> = self
            .nodes
            .iter()
            .flat_map(|n| n.queue.iter().map(|p| p.id))
            .chain(self.exchanges.iter().flat_map(Exchange::held_ids))
            .collect();
        let outstanding = queued
            .iter()
            .filter(|id| !self.delivered_ids.contains(id))
            .count() as u64;
        let mut union: HashSet<u64> = queued;
        union.extend(self.delivered_ids.iter().copied());
        union.extend(self.dropped_ids.iter().copied());
        let payload_conserved = union.len() as u64 == self.generated_ids
            && union.iter().all(|&i| i < self.generated_ids);
        let energy_conservation_error = self
            .nodes
            .iter()
            .map(|n| n.energy.conservation_error())
            .fold(0.0, f64::max);
        let (lifetime, censored, first_dead) = match self.first_death {
            Some((t, id)) => (t, false, Some(id)),
            None => (end, true, None),
        };
        RunResult {
            queue_means: self.queues.means(end),
            residual_queue: self.nodes.iter().map(|n| n.queue.len()).collect(),
            energy: self.nodes.iter().map(|n| n.energy.clone()).collect(),
            ledger: self.ledger,
            end_time: end,
            lifetime,
            censored,
            first_dead,
            energy_conservation_error,
            payload_conserved,
            outstanding,
            trace: self.trace,
            in_range: self.in_range,
        }
    }
}
